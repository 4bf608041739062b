import hashlib
import math
import random
import statistics

import pytest

from hbsim.core import ExtendedTransaction
from hbsim.dataio import WorkloadSpec
from hbsim.sharding import shard_path
from hbsim.simulator import (
    CarriedValues,
    ChainState,
    ConservationError,
    E_BAD_CARRIED_AVERAGE,
    E_DOUBLE_SPEND,
    E_SHARD_MISMATCH,
    MempoolEntry,
    SimConfig,
    SubBlock,
    apply_block,
    assemble_multiblock,
    change_output_id,
    equal_miners,
    flat_coord,
    propagation_delay,
    sample_mining_time,
    shard_path_coord,
    take_by_fee_rate,
    validate_block,
)
from hbsim.economics import LevelSchedule
from conftest import make_tx


def small_config(**kw):
    defaults = dict(
        mode="flat",
        num_levels=3,
        duration=600.0,
        seed=1,
        workload=WorkloadSpec(rate=0.1, lg_beta_mu=3.0, lg_beta_sigma=1.0),
    )
    defaults.update(kw)
    return SimConfig(**defaults)


def spendable_tx(state, value=10_000, size=250, fee=100, shard_level=None, shard_index=None, rng=None):
    """Create a transaction spending a fresh genesis output, optionally
    searching for an input that maps to a wanted shard."""
    rng = rng or random.Random(0)
    while True:
        ref = rng.getrandbits(256).to_bytes(32, "big")
        if shard_level is not None:
            if shard_path(shard_level, ref).index != shard_index:
                continue
        break
    state.inject_genesis(ref, value + fee + 5000)
    tx = make_tx(value, size, input_ref=ref)
    return tx, fee


class TestSampleMiningTime:
    def test_mean_matches_eta_times_bits(self, rng):
        n = 100_000
        draws = [sample_mining_time(rng, 1e-4, 6_000_000) for _ in range(n)]
        mean = statistics.fmean(draws)
        expected = 600.0
        assert abs(mean - expected) < 3 * expected / math.sqrt(n)

    def test_half_hashrate_doubles_mean(self, rng):
        n = 50_000
        full = statistics.fmean(sample_mining_time(rng, 1e-5, 100_000) for _ in range(n))
        half = statistics.fmean(
            sample_mining_time(rng, 1e-5, 100_000, hashrate_scale=0.5) for _ in range(n)
        )
        assert half / full == pytest.approx(2.0, rel=0.05)

    def test_header_only_block_strictly_positive(self, rng):
        for _ in range(100):
            assert sample_mining_time(rng, 1e-6, 640) > 0.0

    def test_rejects_bad_input(self, rng):
        with pytest.raises(ValueError):
            sample_mining_time(rng, 0.0, 100)
        with pytest.raises(ValueError):
            sample_mining_time(rng, 1e-5, 100, hashrate_scale=0.0)


class TestPropagationDelay:
    def test_header_hits_the_floor_exactly(self):
        cfg = small_config()
        assert propagation_delay(80, cfg) == pytest.approx(0.08)

    def test_zero_bytes_floor_only(self):
        assert propagation_delay(0, small_config()) == pytest.approx(0.08)

    def test_linear_above_floor(self):
        cfg = small_config()
        assert propagation_delay(4000, cfg) == pytest.approx(2 * propagation_delay(2000, cfg))


def random_entries(rng, n):
    entries = []
    for i in range(n):
        tx = make_tx(rng.randrange(1, 10**6), rng.randrange(100, 900), input_ref=b"\x01" * 32)
        entries.append(MempoolEntry(tx=tx, level=0, fee_sat=rng.randrange(1, 10**5), seq=i))
    return entries


class TestTakeByFeeRate:
    def test_matches_sort_then_cut_oracle(self, rng):
        for _ in range(50):
            entries = random_entries(rng, rng.randrange(1, 40))
            cap = rng.randrange(500, 20_000)
            expected = sorted(entries, key=lambda e: (-e.fee_sat / e.tx.size_bits, e.seq))
            used = 0
            oracle = []
            for e in expected:
                if used + e.tx.size_bytes > cap:
                    break
                oracle.append(e)
                used += e.tx.size_bytes
            chosen, rest = take_by_fee_rate(list(entries), cap)
            assert [e.tx.id for e in chosen] == [e.tx.id for e in oracle]
            assert len(chosen) + len(rest) == len(entries)

    def test_fee_ties_break_by_arrival(self):
        txa = make_tx(10, 100, input_ref=b"\x01" * 32)
        txb = make_tx(10, 100, input_ref=b"\x02" * 32)
        entries = [
            MempoolEntry(tx=txb, level=0, fee_sat=800, seq=2),
            MempoolEntry(tx=txa, level=0, fee_sat=800, seq=1),
        ]
        chosen, _ = take_by_fee_rate(entries, 10_000)
        assert [e.seq for e in chosen] == [1, 2]


def schedule3():
    return LevelSchedule(
        boundaries=(6.0, 4.0, 2.0, 0.0),
        eta=(1e-3, 1e-5, 1e-7),
        fee_rate_per_bit=(50.0, 0.5, 0.005),
        reward_share=(0.7, 0.2, 0.1),
        expected_block_time=(420.0, 150.0, 30.0),
    )


class TestAssembleMultiblock:
    def test_empty_mempool_yields_header_only_blocks(self):
        cfg = small_config()
        blocks = assemble_multiblock([[], [], []], schedule3(), cfg)
        assert len(blocks) == 3
        assert [b.coord.level for b in blocks] == [2, 1, 0]
        assert all(b.size_bits == cfg.header_bits for b in blocks)
        assert all(not b.txs for b in blocks)

    def test_one_tx_per_level(self):
        cfg = small_config()
        segments = []
        for level in range(3):
            tx = make_tx(1000, 200, input_ref=bytes([level]) * 32)
            segments.append([MempoolEntry(tx=tx, level=level, fee_sat=10, seq=level)])
        blocks = assemble_multiblock(segments, schedule3(), cfg)
        by_level = {b.coord.level: b for b in blocks}
        for level in range(3):
            assert len(by_level[level].txs) == 1

    def test_blocks_chain_upward(self):
        cfg = small_config()
        parent = b"\x77" * 32
        blocks = assemble_multiblock([[], [], []], schedule3(), cfg, seq=5, parent_ref=parent)
        assert blocks[0].parent_ref == parent
        assert blocks[1].parent_ref == blocks[0].digest()
        assert blocks[2].parent_ref == blocks[1].digest()


class TestChainState:
    def test_conservation_identity(self):
        state = ChainState()
        state.inject_genesis(b"\x01" * 32, 1000)
        state.mint(b"\x02" * 32, 500)
        assert state.total_unspent == 1500
        assert state.conservation_checks == 2
        assert state.conservation_violations == 0

    def test_pick_at_least_respects_threshold(self, rng):
        state = ChainState()
        for i in range(100):
            state.inject_genesis(i.to_bytes(32, "big"), 10 * (i + 1))
        for _ in range(200):
            needed = rng.randrange(1, 1000)
            got = state.pick_at_least(needed, rng, set())
            assert got is not None
            assert state.unspent[got] >= needed

    def test_pick_at_least_exhausted(self, rng):
        state = ChainState()
        state.inject_genesis(b"\x01" * 32, 100)
        assert state.pick_at_least(101, rng, set()) is None
        assert state.pick_at_least(50, rng, {b"\x01" * 32}) is None

    def test_duplicate_output_id_rejected(self):
        state = ChainState()
        state.inject_genesis(b"\x01" * 32, 100)
        with pytest.raises(ValueError, match="already exists"):
            state.inject_genesis(b"\x01" * 32, 100)


def block_at(coord, txs, fees, carried=None, seq=0):
    return SubBlock(
        coord=coord,
        seq=seq,
        parent_ref=b"\x00" * 32,
        child_refs=(),
        txs=tuple(txs),
        fees_sat=tuple(fees),
        mined_at=1.0,
        size_bits=640 + sum(t.size_bits for t in txs),
        carried=carried,
    )


class TestValidateBlock:
    def test_spend_of_missing_output(self):
        state = ChainState()
        tx = make_tx(100, 100, input_ref=b"\xee" * 32)
        result = validate_block(block_at(flat_coord(0), [tx], [1]), state, check_shard=False)
        assert not result
        assert result.code == E_DOUBLE_SPEND
        assert tx.id.hex() in result.detail

    def test_in_block_double_spend(self):
        state = ChainState()
        state.inject_genesis(b"\xaa" * 32, 10**9)
        tx1 = make_tx(100, 100, input_ref=b"\xaa" * 32)
        tx2 = make_tx(200, 100, input_ref=b"\xaa" * 32)
        result = validate_block(
            block_at(flat_coord(0), [tx1, tx2], [1, 1]), state, check_shard=False
        )
        assert result.code == E_DOUBLE_SPEND

    def test_overdraft_rejected(self):
        state = ChainState()
        state.inject_genesis(b"\xaa" * 32, 50)
        tx = make_tx(100, 100, input_ref=b"\xaa" * 32)
        result = validate_block(block_at(flat_coord(0), [tx], [1]), state, check_shard=False)
        assert result.code == E_DOUBLE_SPEND
        assert "more than" in result.detail

    def test_cross_shard_double_spend_one_accept(self, rng):
        """The same input offered to both sibling shards: only the true shard accepts."""
        state = ChainState()
        tx, fee = spendable_tx(state, rng=rng)
        level = 2
        true_idx = shard_path(level, tx.input_ref).index
        wrong_idx = true_idx ^ 1
        ok = validate_block(
            block_at(shard_path_coord(level, true_idx), [tx], [fee]), state
        )
        bad = validate_block(
            block_at(shard_path_coord(level, wrong_idx), [tx], [fee]), state
        )
        assert ok.accepted
        assert not bad.accepted and bad.code == E_SHARD_MISMATCH

    def test_multi_input_only_at_root(self):
        state = ChainState()
        state.inject_genesis(b"\x01" * 32, 10**6)
        state.inject_genesis(b"\x02" * 32, 10**6)
        tx = make_tx(
            100, 100, input_ref=b"\x01" * 32, extra_input_refs=(b"\x02" * 32,), requested_level=0
        )
        ok = validate_block(block_at(flat_coord(0), [tx], [1]), state)
        assert ok.accepted
        bad = validate_block(block_at(shard_path_coord(1, 0), [tx], [1]), state)
        assert bad.code == "E_MULTI_INPUT_SHARDED"

    def test_tampered_carried_average(self):
        state = ChainState()
        carried = CarriedValues(
            value_avg=10.0,
            subtree_sum=30.0,
            beta_level_sums=(1.0, 2.0),
            bits_level_sums=(3.0, 4.0),
            nonce=b"\x00" * 32,
        )
        tampered = CarriedValues(
            value_avg=10.5,
            subtree_sum=30.0,
            beta_level_sums=(1.0, 2.0),
            bits_level_sums=(3.0, 4.0),
            nonce=b"\x00" * 32,
        )
        block = block_at(flat_coord(0), [], [], carried=tampered)
        result = validate_block(block, state, check_shard=False, expected_carried=carried)
        assert result.code == E_BAD_CARRIED_AVERAGE
        block_ok = block_at(flat_coord(0), [], [], carried=carried)
        assert validate_block(block_ok, state, check_shard=False, expected_carried=carried)


class TestApplyBlock:
    def test_change_output_and_fee_books(self):
        state = ChainState()
        state.inject_genesis(b"\xaa" * 32, 10_000)
        tx = make_tx(6_000, 100, input_ref=b"\xaa" * 32)
        block = block_at(flat_coord(0), [tx], [300])
        assert validate_block(block, state, check_shard=False)
        apply_block(block, state)
        assert state.unspent[tx.id] == 6_000
        assert state.unspent[change_output_id(tx.id)] == 3_700
        assert state.fees_collected == 300
        assert state.total_unspent == 9_700
        assert state.conservation_violations == 0

    def test_exact_spend_leaves_no_change(self):
        state = ChainState()
        state.inject_genesis(b"\xaa" * 32, 1_000)
        tx = make_tx(900, 100, input_ref=b"\xaa" * 32)
        block = block_at(flat_coord(0), [tx], [100])
        apply_block(block, state)
        assert change_output_id(tx.id) not in state.unspent
        assert state.total_unspent == 900


class TestCoords:
    def test_flat_coord_branch(self):
        coord = flat_coord(3)
        assert coord.branch == (0, 0, 0, 0)

    def test_shard_path_coord_round_trip(self):
        for level, idx in ((0, 0), (3, 5), (5, 19)):
            coord = shard_path_coord(level, idx)
            assert coord.level == level and coord.index == idx

    def test_config_validation(self):
        with pytest.raises(ValueError, match="miner"):
            small_config(mode="tree")
        with pytest.raises(ValueError, match="mode"):
            small_config(mode="nope")
        with pytest.raises(ValueError, match="legacy"):
            small_config(mode="hybrid", num_levels=1)
        with pytest.raises(ValueError, match="concurrent"):
            small_config(chain_target_times=(1.0, 2.0, 3.0))

    def test_equal_miners(self):
        miners = equal_miners(4, total_hashrate=100.0)
        assert len(miners) == 4
        assert sum(m.hashrate for m in miners) == pytest.approx(100.0)
        assert len({m.peer_id for m in miners}) == 4

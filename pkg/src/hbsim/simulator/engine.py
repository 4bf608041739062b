"""Seeded, single-threaded event engine for the four chain modes.

Mining is modeled as exponential waiting times whose means come from the
schedule's time investments; everything stochastic draws from one Random
instance in a fixed order, so a seed pins the whole run. Value conservation
is re-checked after every state transition with integer arithmetic.

The retarget feedback has two parts: the calibration estimator computed from
window data exactly as the analysis functions do, and a multiplicative timing
gain (clamped, difficulty-style) that absorbs overheads the estimator cannot
see, such as propagation delay.
"""

from __future__ import annotations

import hashlib
import heapq
import math
import operator
import random
import statistics
from dataclasses import dataclass

from ..core import SATOSHI_PER_BTC, ExtendedTransaction
from ..economics import (
    LevelSchedule,
    _largest_remainder,
    compute_c_eta_flat,
    eta_levels_flat,
    homotopy_lambda,
    recurrent_average,
    reward_split_flat,
    reward_split_tree,
    time_per_level,
)
from ..segmentation import LevelStats, LevelSummary, segment, summarize_level
from ..sharding import (
    ShardCoord,
    mfn_download_rate,
    mfn_store_rate,
    rate_to_mb_per_day,
    shard_path,
    tx_shard,
)
from .chainstate import (
    ChainState,
    CarriedValues,
    SubBlock,
    apply_block,
    flat_coord,
    reward_output_id,
    validate_block,
)
from .config import (
    BROADCAST_PER_SUBBLOCK,
    BROADCAST_WHOLE_MULTIBLOCK,
    MODE_CONCURRENT,
    MODE_FLAT,
    MODE_HYBRID,
    MODE_TREE,
    SimConfig,
)
from .report import EpochTrace, SimReport


def sample_mining_time(
    rng: random.Random, eta: float, block_bits: int, hashrate_scale: float = 1.0
) -> float:
    """Exponential mining time with mean eta * block_bits / hashrate_scale.

    ``hashrate_scale`` is the ratio of the hashrate actually working on the
    block to the nominal share the schedule assumes; half the nominal power
    doubles the expected time.
    """
    if eta <= 0.0 or block_bits <= 0:
        raise ValueError("eta and block_bits must be positive")
    if hashrate_scale <= 0.0:
        raise ValueError("hashrate_scale must be positive")
    mean = eta * block_bits / hashrate_scale
    return rng.expovariate(1.0 / mean)


def propagation_delay(size_bytes: int, config: SimConfig) -> float:
    """Seconds to propagate a payload; floored at the empty-header time."""
    if size_bytes < 0:
        raise ValueError("size_bytes must be non-negative")
    ms = max(size_bytes * config.propagation_ms_per_byte, config.propagation_floor_ms)
    return ms / 1000.0


@dataclass
class MempoolEntry:
    tx: ExtendedTransaction
    level: int
    fee_sat: int
    seq: int
    size_bits: int = 0
    sort_key: tuple = ()

    def __post_init__(self) -> None:
        self.size_bits = self.tx.size_bits
        self.sort_key = (-self.fee_sat / self.size_bits, self.seq)

    @property
    def fee_rate(self) -> float:
        return self.fee_sat / self.size_bits


def take_by_fee_rate(
    entries: list[MempoolEntry], cap_bytes: int
) -> tuple[list[MempoolEntry], list[MempoolEntry]]:
    """Greedy fill: fee per bit descending until the next entry would overflow."""
    entries.sort(key=operator.attrgetter("sort_key"))
    chosen: list[MempoolEntry] = []
    used = 0
    cut = len(entries)
    for i, entry in enumerate(entries):
        if used + entry.tx.size_bytes > cap_bytes:
            cut = i
            break
        chosen.append(entry)
        used += entry.tx.size_bytes
    return chosen, entries[cut:]


def assemble_multiblock(
    mempool_segments: list[list[MempoolEntry]],
    schedule,
    config: SimConfig,
    seq: int = 0,
    parent_ref: bytes = b"\x00" * 32,
) -> list[SubBlock]:
    """Plan one flat multi-block: per level, greedy fee-rate fill under the cap.

    Returns the sub-blocks in mining order (deepest level first); each block
    links to the one mined before it, the deepest to ``parent_ref``. Mining
    times are not assigned here.
    """
    num_levels = schedule.num_levels
    if len(mempool_segments) != num_levels:
        raise ValueError("one mempool segment per level is required")
    blocks: list[SubBlock] = []
    prev = parent_ref
    for level in range(num_levels - 1, -1, -1):
        chosen, rest = take_by_fee_rate(mempool_segments[level], config.max_subblock_bytes)
        mempool_segments[level] = rest
        bits = config.header_bits + sum(e.size_bits for e in chosen)
        block = SubBlock(
            coord=flat_coord(level),
            seq=seq,
            parent_ref=prev,
            child_refs=(),
            txs=tuple(e.tx for e in chosen),
            fees_sat=tuple(e.fee_sat for e in chosen),
            mined_at=0.0,
            size_bits=bits,
        )
        blocks.append(block)
        prev = block.digest()
    return blocks


class _LevelWindow:
    """Per-level accumulators over one retarget window."""

    def __init__(self) -> None:
        self.tx_count = 0
        self.beta_sum = 0.0
        self.beta_min = math.inf
        self.beta_max = -math.inf
        self.value_sum = 0
        self.size_sum = 0
        self.block_bits = 0
        self.block_count = 0
        self.dt_sum = 0.0

    def add_tx(self, tx: ExtendedTransaction) -> None:
        beta = tx.value / tx.size_bits
        self.tx_count += 1
        self.beta_sum += beta
        self.beta_min = min(self.beta_min, beta)
        self.beta_max = max(self.beta_max, beta)
        self.value_sum += tx.value
        self.size_sum += tx.size_bytes

    def add_block(self, bits: int, dt: float) -> None:
        self.block_bits += bits
        self.block_count += 1
        self.dt_sum += dt

    def summary(self) -> LevelSummary:
        if self.tx_count == 0:
            return LevelSummary(0, None, None, None, None, None, None, 0, None, self.block_bits)
        return LevelSummary(
            count=self.tx_count,
            beta_min=self.beta_min,
            beta_max=self.beta_max,
            beta_mean=self.beta_sum / self.tx_count,
            value_min=None,
            value_max=None,
            value_mean=self.value_sum / self.tx_count,
            value_total=self.value_sum,
            size_mean_bytes=self.size_sum / self.tx_count,
            bits_total=self.block_bits,
        )


class _Run:
    """State shared by every mode: registry, mempool, schedule, retargeting."""

    def __init__(self, config: SimConfig):
        self.cfg = config
        self.rng = random.Random(config.seed)
        self.state = ChainState()
        self.t = 0.0
        self.seq = 0
        self.mempool: list[list[MempoolEntry]] = [[] for _ in range(config.num_levels)]
        self.reserved: set[bytes] = set()
        self.txs_generated = 0
        self.txs_confirmed = 0
        self.txs_skipped = 0
        self.blocks_accepted = 0
        self.blocks_rejected: dict[str, int] = {}
        self.monotonicity_repairs = 0
        self.gain = 1.0
        self.report = SimReport(
            mode=config.mode,
            seed=config.seed,
            num_levels=config.num_levels,
            config=config.to_dict(),
        )
        self.txs_evicted = 0
        self._inject_genesis()
        self._bootstrap_schedule()
        self._next_arrival = self.rng.expovariate(config.workload.rate)
        self.windows: list[_LevelWindow] = [_LevelWindow() for _ in range(config.num_levels)]
        self.window_period_times: list[float] = []
        self.level_dt_sums = [0.0] * config.num_levels
        self.level_dt_counts = [0] * config.num_levels
        # start inside the cap-bound regime: the backlog exists from t=0
        for _ in range(round(config.workload.rate * config.target_time * config.preseed_periods)):
            self._generate_arrival()

    # -- setup --------------------------------------------------------------

    def _inject_genesis(self) -> None:
        cfg = self.cfg
        for i in range(cfg.genesis_outputs):
            output_id = self.rng.getrandbits(256).to_bytes(32, "big")
            self.state.inject_genesis(output_id, cfg.genesis_value_sat)

    def _bootstrap_sample(self) -> list[ExtendedTransaction]:
        spec = self.cfg.workload
        txs = []
        for _ in range(self.cfg.bootstrap_txs):
            beta = 10.0 ** self.rng.gauss(spec.lg_beta_mu, spec.lg_beta_sigma)
            size = self._draw_size()
            value = max(1, round(beta * 8 * size))
            txs.append(
                ExtendedTransaction(
                    id=self.rng.getrandbits(256).to_bytes(32, "big"), value=value, size_bytes=size
                )
            )
        return txs

    def _bootstrap_schedule(self) -> None:
        cfg = self.cfg
        sample = self._bootstrap_sample()
        seg = segment(cfg.num_levels, sample)
        stats = LevelStats(tuple(summarize_level(lvl) for lvl in seg.levels))
        for l, row in enumerate(stats):
            if row.count == 0:
                raise ValueError(
                    f"bootstrap workload leaves level {l} empty; widen the beta spread or "
                    f"use fewer levels"
                )
        sample_duration = cfg.bootstrap_txs / cfg.workload.rate
        num_blocks = max(1, round(sample_duration / cfg.target_time))
        # Size caps sized below expected demand keep the caps binding, which
        # pins block sizes and with them the block-time feedback loop.
        if cfg.cap_fill_ratio is None:
            self.caps = [cfg.max_subblock_bytes] * cfg.num_levels
        else:
            self.caps = [
                min(
                    cfg.max_subblock_bytes,
                    max(cfg.min_cap_bytes, math.ceil(row.bits_total / 8 / num_blocks / cfg.cap_fill_ratio)),
                )
                for row in stats
            ]
        capped_bits = [
            min(row.bits_total / num_blocks, 8 * self.caps[l]) for l, row in enumerate(stats)
        ]
        capped_stats = LevelStats(
            tuple(
                LevelSummary(
                    count=row.count,
                    beta_min=row.beta_min,
                    beta_max=row.beta_max,
                    beta_mean=row.beta_mean,
                    value_min=row.value_min,
                    value_max=row.value_max,
                    value_mean=row.value_mean,
                    value_total=row.value_total,
                    size_mean_bytes=row.size_mean_bytes,
                    bits_total=int(round(capped_bits[l] * num_blocks)),
                )
                for l, row in enumerate(stats)
            )
        )
        c_eta = compute_c_eta_flat(capped_stats, num_blocks, cfg.target_time)
        eta = eta_levels_flat(c_eta, capped_stats)
        avg_bits = [bits + cfg.header_bits for bits in capped_bits]
        mean_size = max(
            1, round(sum(r.size_mean_bytes * r.count for r in stats) / sum(r.count for r in stats))
        )
        self.pool_limits = [
            max(32, math.ceil(cfg.mempool_depth_blocks * cap / mean_size)) for cap in self.caps
        ]
        self.boundaries = seg.boundaries
        self.kappa = (
            cfg.kappa_fee
            if cfg.kappa_fee is not None
            else cfg.fee_reference_sat_per_bit / eta[0]
        )
        self._install_schedule(c_eta, eta, avg_bits, realized_mean=None, beta_means=list(stats.beta_means))

    def _install_schedule(self, c_eta, eta_formula, avg_bits, realized_mean, beta_means, lam=None):
        applied = [e * self.gain for e in eta_formula]
        for l in range(1, len(applied)):
            if applied[l] >= applied[l - 1]:
                applied[l] = math.nextafter(applied[l - 1], 0.0)
                self.monotonicity_repairs += 1
        self.eta_formula = list(eta_formula)
        self.eta_applied = applied
        self.avg_bits = list(avg_bits)
        self.expected_times = time_per_level(applied, avg_bits)
        self.fee_rates_sat = [self.kappa * e for e in self.eta_formula]
        self.c_eta = c_eta
        # the immutable snapshot governing the next window; construction
        # re-checks the schedule invariants
        self.schedule = LevelSchedule(
            boundaries=tuple(self.boundaries),
            eta=tuple(applied),
            fee_rate_per_bit=tuple(self.fee_rates_sat),
            reward_share=tuple(
                share / 10**12 for share in _largest_remainder(self.expected_times, 10**12)
            ),
            expected_block_time=tuple(self.expected_times),
        )
        security = [
            (eta_formula[l] / beta_means[l]) if beta_means[l] else None
            for l in range(len(eta_formula))
        ]
        trace = EpochTrace(
            index=len(self.report.epochs),
            c_eta=c_eta,
            eta=list(eta_formula),
            eta_applied=list(applied),
            t_hat=time_per_level(eta_formula, avg_bits),
            avg_block_bits=list(avg_bits),
            beta_means=list(beta_means),
            gain=self.gain,
            realized_mean_time=realized_mean if realized_mean is not None else -1.0,
            security_consts=security,
            lam=lam,
        )
        self.report.epochs.append(trace)

    # -- arrivals -------------------------------------------------------------

    def _draw_size(self) -> int:
        spec = self.cfg.workload
        if spec.size_mode == "fixed":
            return int(spec.size_params[0])
        if spec.size_mode == "lognormal":
            mu, sigma = spec.size_params
            return max(1, round(self.rng.lognormvariate(mu, sigma)))
        return int(spec.size_params[self.rng.randrange(len(spec.size_params))])

    def _level_for(self, lg_beta: float) -> int:
        level = 0
        while level < self.cfg.num_levels - 1 and lg_beta < self.boundaries[level + 1]:
            level += 1
        return level

    def _pick_input(self, needed: int) -> bytes | None:
        return self.state.pick_at_least(needed, self.rng, self.reserved)

    def _generate_arrival(self) -> None:
        cfg = self.cfg
        spec = cfg.workload
        beta = 10.0 ** self.rng.gauss(spec.lg_beta_mu, spec.lg_beta_sigma)
        size = self._draw_size()
        value = max(1, round(beta * 8 * size))
        overridden = (
            spec.level_override_fraction > 0.0
            and self.rng.random() < spec.level_override_fraction
        )
        if overridden:
            level = self.rng.randrange(cfg.num_levels)
        else:
            level = self._level_for(math.log10(value / (8 * size)))
        overpay = self.rng.uniform(1.0, cfg.fee_overpay_max)
        fee = math.ceil(self.fee_rates_sat[level] * 8 * size * overpay)
        self.txs_generated += 1
        input_ref = self._pick_input(value + fee)
        if input_ref is None:
            self.txs_skipped += 1
            return
        self.reserved.add(input_ref)
        tx = ExtendedTransaction(
            id=self.rng.getrandbits(256).to_bytes(32, "big"),
            value=value,
            size_bytes=size,
            input_ref=input_ref,
            requested_level=level if overridden else None,
        )
        self.seq += 1
        self.mempool[level].append(MempoolEntry(tx=tx, level=level, fee_sat=fee, seq=self.seq))

    def _drain_arrivals(self, until: float) -> None:
        while self._next_arrival < until:
            self._generate_arrival()
            self._next_arrival += self.rng.expovariate(self.cfg.workload.rate)

    def _trim_pool(self, level: int) -> None:
        """Evict the lowest fee rates beyond the level's backlog bound."""
        pool = self.mempool[level]
        limit = self.pool_limits[level]
        if len(pool) <= limit:
            return
        pool.sort(key=operator.attrgetter("sort_key"))
        for entry in pool[limit:]:
            self.reserved.discard(entry.tx.input_ref)
            self.txs_evicted += 1
        del pool[limit:]

    # -- block helpers ----------------------------------------------------------

    def _accept(self, block: SubBlock, entries: list[MempoolEntry], dt: float, nonce=None,
                check_shard=False, expected_carried=None) -> None:
        result = validate_block(
            block, self.state, nonce=nonce, check_shard=check_shard, expected_carried=expected_carried
        )
        if not result:
            self.blocks_rejected[result.code] = self.blocks_rejected.get(result.code, 0) + 1
            raise AssertionError(f"engine produced an invalid block: {result.detail}")
        apply_block(block, self.state)
        self.blocks_accepted += 1
        level = block.coord.level
        window = self.windows[level]
        for entry in entries:
            window.add_tx(entry.tx)
            self.reserved.discard(entry.tx.input_ref)
            self.txs_confirmed += 1
        window.add_block(block.size_bits, dt)
        self.level_dt_sums[level] += dt
        self.level_dt_counts[level] += 1

    def _window_stats(self) -> tuple[LevelStats, list[float], list[float | None]]:
        rows = tuple(w.summary() for w in self.windows)
        stats = LevelStats(rows)
        avg_bits = []
        beta_means = []
        for l, w in enumerate(self.windows):
            if w.block_count > 0:
                avg_bits.append(w.block_bits / w.block_count)
            else:
                avg_bits.append(self.avg_bits[l])
            beta_means.append(rows[l].beta_mean)
        return stats, avg_bits, beta_means

    def _update_gain(self, realized_mean: float) -> None:
        # Square-root damping keeps exponential window noise from being
        # amplified; the step is clamped x4 either way like a difficulty
        # retarget.
        step = math.sqrt(min(4.0, max(0.25, self.cfg.target_time / realized_mean)))
        lo, hi = self.cfg.timing_gain_bounds
        self.gain = min(hi, max(lo, self.gain * step))

    def _retarget_flat(self, lam=None) -> None:
        cfg = self.cfg
        stats, avg_bits, beta_means = self._window_stats()
        realized = statistics.fmean(self.window_period_times)
        c_eta = compute_c_eta_flat(stats, cfg.retarget_window, cfg.target_time)
        eta = eta_levels_flat(c_eta, stats, previous=self.eta_formula)
        self._update_gain(realized)
        self._install_schedule(c_eta, eta, avg_bits, realized, beta_means, lam=lam)
        self.windows = [_LevelWindow() for _ in range(cfg.num_levels)]
        self.window_period_times = []

    def _mint_level_rewards(self, tag: str) -> None:
        split = reward_split_flat(self.expected_times, self.cfg.block_reward_btc)
        for level, amount in enumerate(split):
            self.state.mint(reward_output_id(f"{tag}/{level}"), amount)

    # -- finish -------------------------------------------------------------

    def _finalize(self) -> SimReport:
        report = self.report
        report.sim_end_time = self.t
        report.txs_generated = self.txs_generated
        report.txs_confirmed = self.txs_confirmed
        report.txs_skipped = self.txs_skipped
        report.txs_evicted = self.txs_evicted
        report.blocks_accepted = self.blocks_accepted
        report.blocks_rejected = dict(sorted(self.blocks_rejected.items()))
        report.genesis_sat = self.state.genesis_injected
        report.minted_sat = self.state.minted
        report.fees_sat = self.state.fees_collected
        report.unspent_sat = self.state.total_unspent
        report.conservation_checks = self.state.conservation_checks
        report.conservation_violations = self.state.conservation_violations
        report.throughput_tps = self.txs_confirmed / self.t if self.t > 0 else 0.0
        report.monotonicity_repairs = self.monotonicity_repairs
        report.level_time_means = [
            (self.level_dt_sums[l] / self.level_dt_counts[l]) if self.level_dt_counts[l] else 0.0
            for l in range(self.cfg.num_levels)
        ]
        report.level_block_counts = list(self.level_dt_counts)
        report.schedule_final = {
            "boundaries": list(self.boundaries),
            "eta": list(self.eta_formula),
            "eta_applied": list(self.eta_applied),
            "fee_rate_sat_per_bit": list(self.fee_rates_sat),
            "expected_block_time": list(self.expected_times),
            "c_eta": self.c_eta,
            "gain": self.gain,
        }
        settled = self.report.superblock_times[5 * self.cfg.retarget_window :]
        if settled:
            report.cadence_rel_error = abs(statistics.fmean(settled) - self.cfg.target_time) / self.cfg.target_time
        if report.throughput_tps > 0:
            store = mfn_store_rate(report.throughput_tps, self.cfg.num_levels)
            download = mfn_download_rate(report.throughput_tps, self.cfg.num_levels)
            report.mfn = {
                "store_tps": store,
                "download_tps": download,
                "store_mb_day": rate_to_mb_per_day(store),
                "download_mb_day": rate_to_mb_per_day(download),
            }
        if self.txs_confirmed > 0:
            block_kwh = (
                self.cfg.energy_efficiency_j_per_th
                * self.cfg.reference_hashrate_ths
                * self.cfg.target_time
                / 3.6e6
            )
            kwh_per_tx = block_kwh * len(self.report.superblock_times) / self.txs_confirmed
            report.energy = {
                "reference_hashrate_ths": self.cfg.reference_hashrate_ths,
                "kwh_per_period": block_kwh,
                "kwh_per_confirmed_tx": kwh_per_tx,
                "usd_per_confirmed_tx": kwh_per_tx * self.cfg.energy_price_usd_per_kwh,
            }
        return report


# ---------------------------------------------------------------------------
# flat and hybrid modes
# ---------------------------------------------------------------------------


class _FlatRun(_Run):
    def run(self) -> SimReport:
        cfg = self.cfg
        top_ref = b"\x00" * 32
        period = 0
        policy = cfg.effective_broadcast
        while self.t < cfg.duration:
            t0 = self.t
            if policy == BROADCAST_WHOLE_MULTIBLOCK:
                self._drain_arrivals(self.t)
            prev_ref = top_ref
            total_bytes = 0
            for level in range(cfg.num_levels - 1, -1, -1):
                if policy != BROADCAST_WHOLE_MULTIBLOCK:
                    self._drain_arrivals(self.t)
                chosen, rest = take_by_fee_rate(self.mempool[level], self.caps[level])
                self.mempool[level] = rest
                self._trim_pool(level)
                bits = cfg.header_bits + sum(e.size_bits for e in chosen)
                dt = sample_mining_time(self.rng, self.eta_applied[level], bits)
                self.t += dt
                block = SubBlock(
                    coord=flat_coord(level),
                    seq=period,
                    parent_ref=prev_ref,
                    child_refs=(),
                    txs=tuple(e.tx for e in chosen),
                    fees_sat=tuple(e.fee_sat for e in chosen),
                    mined_at=self.t,
                    size_bits=bits,
                )
                self._accept(block, chosen, dt)
                total_bytes += bits // 8
                if policy == BROADCAST_PER_SUBBLOCK:
                    self.t += propagation_delay(bits // 8, cfg)
                prev_ref = block.digest()
            if policy != BROADCAST_PER_SUBBLOCK:
                self.t += propagation_delay(total_bytes, cfg)
            top_ref = prev_ref
            self._mint_level_rewards(f"flat/{period}")
            sb_time = self.t - t0
            self.report.superblock_times.append(sb_time)
            self.window_period_times.append(sb_time)
            period += 1
            if period % cfg.retarget_window == 0:
                self._retarget_flat()
        return self._finalize()


class _HybridRun(_Run):
    """Legacy blocks alternate with multi-blocks; the blend weight is the
    windowed average multi-block time over the target period."""

    def run(self) -> SimReport:
        cfg = self.cfg
        lam = homotopy_lambda(
            min(sum(self.expected_times[1:]), cfg.target_time),
            cfg.target_time,
            cfg.propagation_floor_ms / 1000.0,
        )
        lam_trace = [lam]
        multi_times: list[float] = []
        multi_window_means: list[float] = []
        legacy_reward_sat = 0
        multi_reward_sat = 0
        top_ref = b"\x00" * 32
        period = 0
        while self.t < cfg.duration:
            t0 = self.t
            self._drain_arrivals(self.t)
            # legacy block: the level-0 sub-block, broadcast on its own
            chosen, rest = take_by_fee_rate(self.mempool[0], self.caps[0])
            self.mempool[0] = rest
            self._trim_pool(0)
            bits = cfg.header_bits + sum(e.size_bits for e in chosen)
            dt = sample_mining_time(self.rng, self.eta_applied[0], bits)
            self.t += dt
            legacy = SubBlock(
                coord=flat_coord(0),
                seq=period,
                parent_ref=top_ref,
                child_refs=(),
                txs=tuple(e.tx for e in chosen),
                fees_sat=tuple(e.fee_sat for e in chosen),
                mined_at=self.t,
                size_bits=bits,
            )
            self._accept(legacy, chosen, dt)
            self.t += propagation_delay(bits // 8, cfg)
            prev_ref = legacy.digest()
            # multi-block: the remaining levels, mined in sequence, broadcast together
            hold = self.t
            multi_bytes = 0
            for level in range(cfg.num_levels - 1, 0, -1):
                self._drain_arrivals(self.t)
                chosen, rest = take_by_fee_rate(self.mempool[level], self.caps[level])
                self.mempool[level] = rest
                self._trim_pool(level)
                bits = cfg.header_bits + sum(e.size_bits for e in chosen)
                dt = sample_mining_time(self.rng, self.eta_applied[level], bits)
                self.t += dt
                block = SubBlock(
                    coord=flat_coord(level),
                    seq=period,
                    parent_ref=prev_ref,
                    child_refs=(),
                    txs=tuple(e.tx for e in chosen),
                    fees_sat=tuple(e.fee_sat for e in chosen),
                    mined_at=self.t,
                    size_bits=bits,
                )
                self._accept(block, chosen, dt)
                multi_bytes += bits // 8
                prev_ref = block.digest()
            self.t += propagation_delay(multi_bytes, cfg)
            top_ref = prev_ref
            multi_times.append(self.t - hold)
            # split the reward between the two block kinds at the current weight
            total_sat = round(cfg.block_reward_btc * SATOSHI_PER_BTC)
            multi_sat = round(total_sat * lam)
            self.state.mint(reward_output_id(f"hybrid/{period}/legacy"), total_sat - multi_sat)
            self.state.mint(reward_output_id(f"hybrid/{period}/multi"), multi_sat)
            legacy_reward_sat += total_sat - multi_sat
            multi_reward_sat += multi_sat
            sb_time = self.t - t0
            self.report.superblock_times.append(sb_time)
            self.window_period_times.append(sb_time)
            period += 1
            if period % cfg.retarget_window == 0:
                window_mean = statistics.fmean(multi_times[-cfg.retarget_window :])
                multi_window_means.append(window_mean)
                lam = homotopy_lambda(
                    min(window_mean, cfg.target_time),
                    cfg.target_time,
                    cfg.propagation_floor_ms / 1000.0,
                )
                lam_trace.append(lam)
                self._retarget_flat(lam=lam)
        report = self._finalize()
        report.hybrid = {
            "lambda_trace": lam_trace,
            "multi_time_mean": statistics.fmean(multi_times) if multi_times else 0.0,
            "multi_window_means": multi_window_means,
            "legacy_reward_sat": legacy_reward_sat,
            "multi_reward_sat": multi_reward_sat,
        }
        return report


# ---------------------------------------------------------------------------
# tree mode
# ---------------------------------------------------------------------------


class _TreeRun(_Run):
    """Synchronized tree: each round mines every shard bottom-up, folds the
    global nonce, and reduces the calibration sums through block headers."""

    def run(self) -> SimReport:
        cfg = self.cfg
        num_levels = cfg.num_levels
        shards = [(l, s) for l in range(num_levels) for s in range(2**l)]
        total_hashrate = sum(m.hashrate for m in cfg.miners)
        prev_value_avg = {key: 0.0 for key in shards}
        prev_beta_avg = {key: 0.0 for key in shards}
        prev_bits_avg = {key: 0.0 for key in shards}
        raw_value_samples: dict[tuple[int, int], list[float]] = {key: [] for key in shards}
        epoch_raw: list[dict] = []
        published: list[dict] = []
        nonce: bytes | None = None
        stalled = None
        round_index = 0
        non_root_blocks = 0
        child_references = 0
        while self.t < cfg.duration:
            t0 = self.t
            self._drain_arrivals(self.t)
            i = round_index % cfg.retarget_window
            # miners re-shard every round under the current global nonce
            shard_hashrate = {key: 0.0 for key in shards}
            for miner in cfg.miners:
                branch = shard_path(num_levels - 1, miner.peer_id, nonce).branch
                for l in range(num_levels):
                    shard_hashrate[(l, branch[l])] += miner.hashrate
            # transactions re-shard too
            grouped: dict[tuple[int, int], list[MempoolEntry]] = {key: [] for key in shards}
            for level in range(num_levels):
                for entry in self.mempool[level]:
                    idx = tx_shard(level, entry.tx, nonce).index
                    grouped[(level, idx)].append(entry)
                self.mempool[level] = []
            finish: dict[tuple[int, int], float] = {}
            carried_map: dict[tuple[int, int], CarriedValues] = {}
            block_map: dict[tuple[int, int], SubBlock] = {}
            root_block = None
            for level in range(num_levels - 1, -1, -1):
                for shard in range(2**level):
                    key = (level, shard)
                    alpha = shard_hashrate[key] / (total_hashrate / 2**level)
                    if alpha == 0.0:
                        stalled = {"round": round_index, "shard": list(key)}
                        break
                    shard_cap = max(cfg.min_cap_bytes, self.caps[level] // 2**level)
                    chosen, rest = take_by_fee_rate(grouped[key], shard_cap)
                    for entry in rest:
                        self.mempool[level].append(entry)
                    bits = cfg.header_bits + sum(e.size_bits for e in chosen)
                    if level == num_levels - 1:
                        start = t0
                        child_refs: tuple[bytes, ...] = ()
                        child_sum = 0.0
                        child_beta = [0.0] * num_levels
                        child_bits = [0.0] * num_levels
                        nonce_input = b""
                    else:
                        kids = ((level + 1, 2 * shard), (level + 1, 2 * shard + 1))
                        start = max(
                            finish[k] + propagation_delay(block_map[k].size_bits // 8, cfg)
                            for k in kids
                        )
                        child_refs = tuple(block_map[k].digest() for k in kids)
                        child_sum = sum(carried_map[k].subtree_sum for k in kids)
                        child_beta = [
                            carried_map[kids[0]].beta_level_sums[l]
                            + carried_map[kids[1]].beta_level_sums[l]
                            for l in range(num_levels)
                        ]
                        child_bits = [
                            carried_map[kids[0]].bits_level_sums[l]
                            + carried_map[kids[1]].bits_level_sums[l]
                            for l in range(num_levels)
                        ]
                        nonce_input = carried_map[kids[0]].nonce + carried_map[kids[1]].nonce
                    dt = sample_mining_time(self.rng, 2**level * self.eta_applied[level], bits, alpha)
                    finish[key] = start + dt
                    # distributed averages carried in the header
                    betas = [e.tx.value / e.tx.size_bits for e in chosen]
                    block_beta = sum(betas) / len(betas) if betas else 0.0
                    value_sample = block_beta * bits
                    raw_value_samples[key].append(value_sample)
                    value_avg = recurrent_average(prev_value_avg[key], i, value_sample)
                    beta_avg = recurrent_average(prev_beta_avg[key], i, block_beta)
                    bits_avg = recurrent_average(prev_bits_avg[key], i, float(bits))
                    prev_value_avg[key] = value_avg
                    prev_beta_avg[key] = beta_avg
                    prev_bits_avg[key] = bits_avg
                    beta_sums = list(child_beta)
                    bits_sums = list(child_bits)
                    beta_sums[level] = beta_avg
                    bits_sums[level] = bits_avg
                    local_random = self.rng.getrandbits(256).to_bytes(32, "big")
                    shard_nonce = hashlib.sha256(local_random + nonce_input).digest()
                    carried = CarriedValues(
                        value_avg=value_avg,
                        subtree_sum=value_avg + child_sum,
                        beta_level_sums=tuple(beta_sums),
                        bits_level_sums=tuple(bits_sums),
                        nonce=shard_nonce,
                    )
                    coord = shard_path_coord(level, shard)
                    block = SubBlock(
                        coord=coord,
                        seq=round_index,
                        parent_ref=self.state.tips.get(key, b"\x00" * 32),
                        child_refs=child_refs,
                        txs=tuple(e.tx for e in chosen),
                        fees_sat=tuple(e.fee_sat for e in chosen),
                        mined_at=finish[key],
                        size_bits=bits,
                    )
                    block.carried = carried
                    self._accept(
                        block, chosen, dt, nonce=nonce, check_shard=True, expected_carried=carried
                    )
                    carried_map[key] = carried
                    block_map[key] = block
                    child_references += len(child_refs)
                    if level > 0:
                        non_root_blocks += 1
                    if key == (0, 0):
                        root_block = block
                if stalled:
                    break
                self._trim_pool(level)
            if stalled:
                break
            nonce = carried_map[(0, 0)].nonce
            self.t = finish[(0, 0)] + propagation_delay(root_block.size_bits // 8, cfg)
            split = reward_split_tree(
                self.expected_times, num_levels, cfg.block_reward_btc, cfg.children_per_node
            )
            for l in range(num_levels):
                for s in range(2**l):
                    self.state.mint(reward_output_id(f"tree/{round_index}/{l}/{s}"), split[l][s])
            sb_time = self.t - t0
            self.report.superblock_times.append(sb_time)
            self.window_period_times.append(sb_time)
            round_index += 1
            if round_index % cfg.retarget_window == 0:
                root = carried_map[(0, 0)]
                c_pub = cfg.target_time * SATOSHI_PER_BTC / root.subtree_sum
                eta_pub = []
                for l in range(num_levels):
                    mean_beta = root.beta_level_sums[l] / 2**l
                    value = c_pub * mean_beta / SATOSHI_PER_BTC
                    eta_pub.append(value if value > 0 else self.eta_formula[l])
                avg_bits = [root.bits_level_sums[l] for l in range(num_levels)]
                beta_means = [root.beta_level_sums[l] / 2**l or None for l in range(num_levels)]
                realized = statistics.fmean(self.window_period_times)
                published.append(
                    {
                        "round": round_index,
                        "c_eta": c_pub,
                        "eta": list(eta_pub),
                        "subtree_sum": root.subtree_sum,
                        "avg_level_bits": avg_bits,
                    }
                )
                epoch_raw.append(
                    {f"{l},{s}": list(raw_value_samples[(l, s)]) for (l, s) in shards}
                )
                raw_value_samples = {key: [] for key in shards}
                self._update_gain(realized)
                self._install_schedule(c_pub, eta_pub, avg_bits, realized, beta_means)
                self.windows = [_LevelWindow() for _ in range(num_levels)]
                self.window_period_times = []
        report = self._finalize()
        report.tree = {
            "published": published,
            "raw_value_samples_per_epoch": epoch_raw,
            "stalled": stalled,
            "rounds": round_index,
            # every non-root block is referenced by its parent exactly once
            "reference_audit": {
                "non_root_blocks": non_root_blocks,
                "child_references": child_references,
            },
        }
        return report


def shard_path_coord(level: int, shard: int) -> ShardCoord:
    """Reconstruct the unique root-to-shard branch of a coordinate."""
    branch = [shard]
    s = shard
    for _ in range(level):
        s //= 2
        branch.append(s)
    branch.reverse()
    return ShardCoord(level=level, index=shard, branch=tuple(branch))


# ---------------------------------------------------------------------------
# concurrent mode
# ---------------------------------------------------------------------------


class _ConcurrentRun(_Run):
    """Every (level, shard) chain mines continuously at its schedule cadence;
    parents batch-reference all not-yet-referenced child blocks."""

    def run(self) -> SimReport:
        cfg = self.cfg
        num_levels = cfg.num_levels
        chains = [(l, s) for l in range(num_levels) for s in range(2**l)]
        chain_mempool: dict[tuple[int, int], list[MempoolEntry]] = {c: [] for c in chains}
        unreferenced: dict[tuple[int, int], list[bytes]] = {c: [] for c in chains}
        referenced: set[bytes] = set()
        block_children: dict[bytes, tuple[bytes, ...]] = {}
        block_mined_at: dict[bytes, float] = {}
        block_chain: dict[bytes, tuple[int, int]] = {}
        tx_arrival: dict[bytes, float] = {}
        tx_included_at: dict[bytes, float] = {}
        tx_block: dict[bytes, bytes] = {}
        tx_level: dict[bytes, int] = {}
        chain_dt_sum = {c: 0.0 for c in chains}
        chain_blocks = {c: 0 for c in chains}
        chain_last = {c: 0.0 for c in chains}
        if cfg.chain_target_times is not None:
            cadence = list(cfg.chain_target_times)
        else:
            cadence = list(self.expected_times)
        chain_pool_limit = [
            max(32, self.pool_limits[l] // 2**l) for l in range(num_levels)
        ]
        heap: list[tuple[float, int, tuple[int, int]]] = []
        counter = 0
        for chain in chains:
            dt = self.rng.expovariate(1.0 / cadence[chain[0]])
            heapq.heappush(heap, (dt, counter, chain))
            counter += 1

        # arrivals route straight to their chain; intercept the base mempool
        def drain(until: float) -> None:
            while self._next_arrival < until:
                arrival_time = self._next_arrival
                self._generate_arrival()
                self._next_arrival += self.rng.expovariate(cfg.workload.rate)
                for level in range(num_levels):
                    while self.mempool[level]:
                        entry = self.mempool[level].pop()
                        idx = tx_shard(level, entry.tx).index
                        chain_mempool[(level, idx)].append(entry)
                        tx_arrival[entry.tx.id] = arrival_time
                        tx_level[entry.tx.id] = level

        def mine(chain: tuple[int, int], now: float, entries_source: list[MempoolEntry], sweep: bool):
            level, shard = chain
            chosen, rest = take_by_fee_rate(entries_source, cfg.max_subblock_bytes)
            if len(rest) > chain_pool_limit[level]:
                for entry in rest[chain_pool_limit[level] :]:
                    self.reserved.discard(entry.tx.input_ref)
                    self.txs_evicted += 1
                rest = rest[: chain_pool_limit[level]]
            chain_mempool[chain] = rest
            refs = []
            if level < num_levels - 1:
                for kid in ((level + 1, 2 * shard), (level + 1, 2 * shard + 1)):
                    batch = unreferenced[kid]
                    take = len(batch) if cfg.max_child_batch is None else min(len(batch), cfg.max_child_batch)
                    refs.extend(batch[:take])
                    unreferenced[kid] = batch[take:]
            bits = cfg.header_bits + sum(e.size_bits for e in chosen)
            block = SubBlock(
                coord=shard_path_coord(level, shard),
                seq=chain_blocks[chain],
                parent_ref=self.state.tips.get(chain, b"\x00" * 32),
                child_refs=tuple(refs),
                txs=tuple(e.tx for e in chosen),
                fees_sat=tuple(e.fee_sat for e in chosen),
                mined_at=now,
                size_bits=bits,
            )
            dt = now - chain_last[chain]
            self._accept(block, chosen, dt, nonce=None, check_shard=True)
            digest = block.digest()
            for ref in refs:
                if ref in referenced:
                    raise AssertionError("child block referenced twice")
                referenced.add(ref)
            block_children[digest] = tuple(refs)
            block_mined_at[digest] = now
            block_chain[digest] = chain
            if level > 0:
                unreferenced[chain].append(digest)
            for entry in chosen:
                tx_included_at[entry.tx.id] = now
                tx_block[entry.tx.id] = digest
            if not sweep:
                chain_dt_sum[chain] += dt
                chain_blocks[chain] += 1
            chain_last[chain] = now
            if chain == (0, 0):
                split = reward_split_tree(
                    cadence, num_levels, cfg.block_reward_btc, cfg.children_per_node
                )
                for l in range(num_levels):
                    for s in range(2**l):
                        self.state.mint(
                            reward_output_id(f"conc/{block.seq}/{chain[0]}/{l}/{s}"), split[l][s]
                        )
            return digest

        while heap and heap[0][0] < cfg.duration:
            now, _, chain = heapq.heappop(heap)
            self.t = now
            drain(now)
            mine(chain, now, chain_mempool[chain], sweep=False)
            dt_next = self.rng.expovariate(1.0 / cadence[chain[0]])
            heapq.heappush(heap, (now + dt_next, counter, chain))
            counter += 1

        # finalization sweep: parents collect every outstanding child block
        t_sweep = max(self.t, cfg.duration)
        for level in range(num_levels - 2, -1, -1):
            for shard in range(2**level):
                kids = ((level + 1, 2 * shard), (level + 1, 2 * shard + 1))
                if any(unreferenced[k] for k in kids):
                    t_sweep += self.rng.expovariate(1.0 / cadence[level])
                    self.t = t_sweep
                    mine((level, shard), t_sweep, chain_mempool[(level, shard)], sweep=True)

        # root-path times: a block settles when a level-0 block transitively refers to it
        t_root: dict[bytes, float] = {}
        stack = []
        for digest, chain in block_chain.items():
            if chain == (0, 0):
                t_root[digest] = block_mined_at[digest]
                stack.append(digest)
        while stack:
            parent = stack.pop()
            for ref in block_children[parent]:
                t_root[ref] = t_root[parent]
                stack.append(ref)

        orphans = sum(
            1 for digest, chain in block_chain.items() if chain != (0, 0) and digest not in referenced
        )
        inclusion: dict[int, list[float]] = {l: [] for l in range(num_levels)}
        rootpath: dict[int, list[float]] = {l: [] for l in range(num_levels)}
        for tx_id, included_at in tx_included_at.items():
            level = tx_level[tx_id]
            arrival = tx_arrival[tx_id]
            inclusion[level].append(included_at - arrival)
            digest = tx_block[tx_id]
            if digest in t_root:
                rootpath[level].append(t_root[digest] - arrival)

        def summarize(values: list[float]) -> dict | None:
            if not values:
                return None
            values = sorted(values)
            return {
                "count": len(values),
                "median": statistics.median(values),
                "mean": statistics.fmean(values),
                "p10": values[int(0.1 * (len(values) - 1))],
                "p90": values[int(0.9 * (len(values) - 1))],
            }

        report = self._finalize()
        report.concurrent = {
            "per_chain": {
                f"{l},{s}": {
                    "blocks": chain_blocks[(l, s)],
                    "mean_dt": (chain_dt_sum[(l, s)] / chain_blocks[(l, s)])
                    if chain_blocks[(l, s)]
                    else 0.0,
                    "target_dt": cadence[l],
                }
                for (l, s) in chains
            },
            "inclusion_latency": {str(l): summarize(inclusion[l]) for l in range(num_levels)},
            "root_path_latency": {str(l): summarize(rootpath[l]) for l in range(num_levels)},
            "audit": {
                "blocks": len(block_chain),
                "orphans": orphans,
                "multi_referenced": 0,
            },
        }
        return report


# ---------------------------------------------------------------------------


def simulate(config: SimConfig) -> SimReport:
    """Run one simulation and return its report."""
    runners = {
        MODE_FLAT: _FlatRun,
        MODE_HYBRID: _HybridRun,
        MODE_TREE: _TreeRun,
        MODE_CONCURRENT: _ConcurrentRun,
    }
    return runners[config.mode](config).run()


def run_flat(config: SimConfig) -> SimReport:
    if config.mode != MODE_FLAT:
        raise ValueError("config.mode must be 'flat'")
    return _FlatRun(config).run()


def run_hybrid(config: SimConfig) -> SimReport:
    if config.mode != MODE_HYBRID:
        raise ValueError("config.mode must be 'hybrid'")
    return _HybridRun(config).run()


def run_tree(config: SimConfig) -> SimReport:
    if config.mode != MODE_TREE:
        raise ValueError("config.mode must be 'tree'")
    return _TreeRun(config).run()


def run_concurrent(config: SimConfig) -> SimReport:
    if config.mode != MODE_CONCURRENT:
        raise ValueError("config.mode must be 'concurrent'")
    return _ConcurrentRun(config).run()

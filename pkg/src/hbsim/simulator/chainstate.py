"""Blocks, the ownership registry, and the block validation rules.

The registry is a flat map from output id to unspent value; which shard owns
an output is a pure function of its id, so uniqueness of the id guarantees
uniqueness of the owning shard. Conservation is tracked with running integer
totals and re-checked after every state change:

    unspent + fees collected == minted rewards + injected genesis value
"""

from __future__ import annotations

import bisect
import hashlib
import struct
from dataclasses import dataclass, field

from ..core import ExtendedTransaction
from ..sharding import E_MULTI_INPUT_SHARDED, ShardCoord, tx_shard

E_DOUBLE_SPEND = "E_DOUBLE_SPEND"
E_SHARD_MISMATCH = "E_SHARD_MISMATCH"
E_BAD_CARRIED_AVERAGE = "E_BAD_CARRIED_AVERAGE"


class ConservationError(AssertionError):
    """The value-conservation identity failed; this is always a simulator bug."""


def flat_coord(level: int) -> ShardCoord:
    """The (level, 0) coordinate used when levels are not sharded."""
    return ShardCoord(level=level, index=0, branch=(0,) * (level + 1))


@dataclass(frozen=True)
class CarriedValues:
    """Distributed-computation fields a sub-block carries in its header.

    ``value_avg`` is the windowed average of (mean beta * block bits) for this
    shard; ``subtree_sum`` folds the children's sums into it. The per-level
    sum vectors propagate the windowed beta and bits averages of every shard
    up to the root, which is what the root needs to publish the calibration.
    """

    value_avg: float
    subtree_sum: float
    beta_level_sums: tuple[float, ...]
    bits_level_sums: tuple[float, ...]
    nonce: bytes

    def pack(self) -> bytes:
        floats = (self.value_avg, self.subtree_sum, *self.beta_level_sums, *self.bits_level_sums)
        return struct.pack(f"<{len(floats)}d", *floats) + self.nonce


@dataclass
class SubBlock:
    """One mined block at a tree coordinate."""

    coord: ShardCoord
    seq: int
    parent_ref: bytes
    child_refs: tuple[bytes, ...]
    txs: tuple[ExtendedTransaction, ...]
    fees_sat: tuple[int, ...]
    mined_at: float
    size_bits: int
    carried: CarriedValues | None = None
    _digest: bytes | None = field(default=None, repr=False, compare=False)

    @property
    def tx_ids(self) -> tuple[bytes, ...]:
        return tuple(t.id for t in self.txs)

    def digest(self) -> bytes:
        if self._digest is None:
            h = hashlib.sha256()
            h.update(struct.pack("<iiqd", self.coord.level, self.coord.index, self.seq, self.mined_at))
            h.update(self.parent_ref)
            for ref in self.child_refs:
                h.update(ref)
            for tx, fee in zip(self.txs, self.fees_sat):
                h.update(tx.id)
                h.update(struct.pack("<q", fee))
            if self.carried is not None:
                h.update(self.carried.pack())
            self._digest = h.digest()
        return self._digest


def change_output_id(tx_id: bytes) -> bytes:
    return hashlib.sha256(tx_id + b"/change").digest()


def reward_output_id(tag: str) -> bytes:
    return hashlib.sha256(b"reward/" + tag.encode()).digest()


class ChainState:
    """Unspent-output registry, chain tips, and the conservation ledger."""

    def __init__(self) -> None:
        self.unspent: dict[bytes, int] = {}
        # outputs grouped by value.bit_length() so a sufficiently large input
        # can be sampled in O(#buckets) regardless of registry size
        self._buckets: dict[int, list[bytes]] = {}
        self._bucket_keys: list[int] = []
        self._pos: dict[bytes, tuple[int, int]] = {}
        self.tips: dict[tuple[int, int], bytes] = {}
        self.heights: dict[tuple[int, int], int] = {}
        self.total_unspent = 0
        self.fees_collected = 0
        self.minted = 0
        self.genesis_injected = 0
        self.conservation_checks = 0
        self.conservation_violations = 0

    # -- registry ---------------------------------------------------------

    def _add(self, output_id: bytes, value: int) -> None:
        if output_id in self.unspent:
            raise ValueError(f"output id {output_id.hex()} already exists")
        if value < 1:
            raise ValueError("outputs must carry at least one satoshi")
        self.unspent[output_id] = value
        key = value.bit_length()
        bucket = self._buckets.get(key)
        if bucket is None:
            bucket = self._buckets[key] = []
            bisect.insort(self._bucket_keys, key)
        self._pos[output_id] = (key, len(bucket))
        bucket.append(output_id)
        self.total_unspent += value

    def _remove(self, output_id: bytes) -> int:
        value = self.unspent.pop(output_id)
        key, pos = self._pos.pop(output_id)
        bucket = self._buckets[key]
        last = bucket.pop()
        if last != output_id:
            bucket[pos] = last
            self._pos[last] = (key, pos)
        if not bucket:
            del self._buckets[key]
            self._bucket_keys.remove(key)
        self.total_unspent -= value
        return value

    def inject_genesis(self, output_id: bytes, value: int) -> None:
        self._add(output_id, value)
        self.genesis_injected += value
        self.check_conservation()

    def mint(self, output_id: bytes, value: int) -> None:
        if value == 0:
            return
        self._add(output_id, value)
        self.minted += value
        self.check_conservation()

    def spendable_count(self) -> int:
        return len(self.unspent)

    def value_of(self, output_id: bytes) -> int | None:
        return self.unspent.get(output_id)

    def pick_at_least(self, needed: int, rng, excluded: set[bytes], tries: int = 8) -> bytes | None:
        """Sample an unspent output worth at least ``needed`` satoshi.

        Sampling is uniform over the candidate buckets' members. Only the
        boundary bucket (same bit length as ``needed``) can hold too-small
        values, so after a few misses sampling moves strictly above it, and
        as a last resort the boundary bucket is scanned directly.
        """
        floor_key = needed.bit_length()
        keys = self._bucket_keys
        buckets = self._buckets

        def sample(start: int) -> bytes | None:
            total = 0
            for key in keys[start:]:
                total += len(buckets[key])
            if total == 0:
                return None
            pick = rng.randrange(total)
            for key in keys[start:]:
                bucket = buckets[key]
                if pick < len(bucket):
                    return bucket[pick]
                pick -= len(bucket)
            return None

        start = bisect.bisect_left(keys, floor_key)
        for _ in range(tries):
            output_id = sample(start)
            if output_id is None:
                return None
            if output_id not in excluded and self.unspent[output_id] >= needed:
                return output_id
        above = bisect.bisect_left(keys, floor_key + 1)
        for _ in range(tries):
            output_id = sample(above)
            if output_id is None:
                break
            if output_id not in excluded:
                return output_id
        for output_id in buckets.get(floor_key, ()):
            if output_id not in excluded and self.unspent[output_id] >= needed:
                return output_id
        return None

    # -- conservation -----------------------------------------------------

    def check_conservation(self) -> None:
        self.conservation_checks += 1
        if self.total_unspent + self.fees_collected != self.minted + self.genesis_injected:
            self.conservation_violations += 1
            raise ConservationError(
                f"conservation broken: unspent={self.total_unspent} fees={self.fees_collected} "
                f"minted={self.minted} genesis={self.genesis_injected}"
            )


@dataclass(frozen=True)
class ValidationResult:
    accepted: bool
    code: str | None = None
    detail: str | None = None

    def __bool__(self) -> bool:
        return self.accepted


def _reject(code: str, detail: str) -> ValidationResult:
    return ValidationResult(accepted=False, code=code, detail=f"{code}: {detail}")


def validate_block(
    block: SubBlock,
    state: ChainState,
    nonce: bytes | None = None,
    check_shard: bool = True,
    expected_carried: CarriedValues | None = None,
) -> ValidationResult:
    """Check a block against the current state.

    Every transaction must spend existing unspent outputs, sit in the shard
    its input hashes to (sharded modes), respect the level-0-only rule for
    multi-input spends, and not overdraw its inputs. When the validator has
    recomputed the carried header values itself, they must match exactly.
    """
    if len(block.txs) != len(block.fees_sat):
        return _reject(E_BAD_CARRIED_AVERAGE, "fee list does not match transaction list")
    seen_inputs: set[bytes] = set()
    for tx, fee in zip(block.txs, block.fees_sat):
        refs = (tx.input_ref, *tx.extra_input_refs)
        if tx.extra_input_refs and block.coord.level > 0:
            return _reject(
                E_MULTI_INPUT_SHARDED,
                f"transaction {tx.id.hex()} has {tx.n_inputs} inputs at level {block.coord.level}",
            )
        total_in = 0
        for ref in refs:
            if ref is None or ref not in state.unspent:
                return _reject(
                    E_DOUBLE_SPEND,
                    f"transaction {tx.id.hex()} spends a missing or already spent output",
                )
            if ref in seen_inputs:
                return _reject(
                    E_DOUBLE_SPEND, f"transaction {tx.id.hex()} re-spends an input inside the block"
                )
            seen_inputs.add(ref)
            total_in += state.unspent[ref]
        if fee < 0 or total_in < tx.value + fee:
            return _reject(
                E_DOUBLE_SPEND, f"transaction {tx.id.hex()} spends more than its inputs hold"
            )
        if check_shard:
            coord = tx_shard(block.coord.level, tx, nonce)
            if coord.index != block.coord.index:
                return _reject(
                    E_SHARD_MISMATCH,
                    f"transaction {tx.id.hex()} maps to shard {coord.index} "
                    f"but the block is at shard {block.coord.index}",
                )
    if expected_carried is not None:
        got = block.carried
        if (
            got is None
            or got.value_avg != expected_carried.value_avg
            or got.subtree_sum != expected_carried.subtree_sum
            or got.beta_level_sums != expected_carried.beta_level_sums
            or got.bits_level_sums != expected_carried.bits_level_sums
        ):
            return _reject(E_BAD_CARRIED_AVERAGE, "carried header averages do not recompute")
    return ValidationResult(accepted=True)


def apply_block(block: SubBlock, state: ChainState) -> None:
    """Apply an accepted block: spend inputs, create outputs and change, take fees."""
    for tx, fee in zip(block.txs, block.fees_sat):
        total_in = 0
        for ref in (tx.input_ref, *tx.extra_input_refs):
            total_in += state._remove(ref)
        state._add(tx.id, tx.value)
        change = total_in - tx.value - fee
        if change > 0:
            state._add(change_output_id(tx.id), change)
        state.fees_collected += fee
    key = (block.coord.level, block.coord.index)
    state.tips[key] = block.digest()
    state.heights[key] = state.heights.get(key, -1) + 1
    state.check_conservation()

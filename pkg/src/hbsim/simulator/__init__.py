"""Discrete-event simulation of the hierarchical block structure chain modes."""

from .chainstate import (
    CarriedValues,
    ChainState,
    ConservationError,
    E_BAD_CARRIED_AVERAGE,
    E_DOUBLE_SPEND,
    E_SHARD_MISMATCH,
    SubBlock,
    ValidationResult,
    apply_block,
    change_output_id,
    flat_coord,
    reward_output_id,
    validate_block,
)
from .config import (
    BROADCAST_HYBRID_BATCH,
    BROADCAST_PER_SUBBLOCK,
    BROADCAST_WHOLE_MULTIBLOCK,
    MODE_CONCURRENT,
    MODE_FLAT,
    MODE_HYBRID,
    MODE_TREE,
    Miner,
    SimConfig,
    equal_miners,
)
from .engine import (
    MempoolEntry,
    assemble_multiblock,
    propagation_delay,
    run_concurrent,
    run_flat,
    run_hybrid,
    run_tree,
    sample_mining_time,
    shard_path_coord,
    simulate,
    take_by_fee_rate,
)
from .report import EpochTrace, SimReport

__all__ = [
    "BROADCAST_HYBRID_BATCH",
    "BROADCAST_PER_SUBBLOCK",
    "BROADCAST_WHOLE_MULTIBLOCK",
    "CarriedValues",
    "ChainState",
    "ConservationError",
    "E_BAD_CARRIED_AVERAGE",
    "E_DOUBLE_SPEND",
    "E_SHARD_MISMATCH",
    "EpochTrace",
    "MempoolEntry",
    "Miner",
    "MODE_CONCURRENT",
    "MODE_FLAT",
    "MODE_HYBRID",
    "MODE_TREE",
    "SimConfig",
    "SimReport",
    "SubBlock",
    "ValidationResult",
    "apply_block",
    "assemble_multiblock",
    "change_output_id",
    "equal_miners",
    "flat_coord",
    "propagation_delay",
    "reward_output_id",
    "run_concurrent",
    "run_flat",
    "run_hybrid",
    "run_tree",
    "sample_mining_time",
    "shard_path_coord",
    "simulate",
    "take_by_fee_rate",
    "validate_block",
]

"""Run reports: immutable after a run, JSON-serializable, bit-reproducible."""

from __future__ import annotations

import json
from dataclasses import dataclass, field


@dataclass
class EpochTrace:
    """Retarget-epoch snapshot of the calibration state."""

    index: int
    c_eta: float
    eta: list[float]
    eta_applied: list[float]
    t_hat: list[float]
    avg_block_bits: list[float]
    beta_means: list[float | None]
    gain: float
    realized_mean_time: float
    security_consts: list[float | None]
    lam: float | None = None

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "c_eta": self.c_eta,
            "eta": self.eta,
            "eta_applied": self.eta_applied,
            "t_hat": self.t_hat,
            "avg_block_bits": self.avg_block_bits,
            "beta_means": self.beta_means,
            "gain": self.gain,
            "realized_mean_time": self.realized_mean_time,
            "security_consts": self.security_consts,
            "lam": self.lam,
        }


@dataclass
class SimReport:
    """Time series and aggregates of one simulation run."""

    mode: str
    seed: int
    num_levels: int
    config: dict
    sim_end_time: float = 0.0
    superblock_times: list[float] = field(default_factory=list)
    level_time_means: list[float] = field(default_factory=list)
    level_block_counts: list[int] = field(default_factory=list)
    epochs: list[EpochTrace] = field(default_factory=list)
    txs_generated: int = 0
    txs_confirmed: int = 0
    txs_skipped: int = 0
    txs_evicted: int = 0
    blocks_accepted: int = 0
    blocks_rejected: dict = field(default_factory=dict)
    genesis_sat: int = 0
    minted_sat: int = 0
    fees_sat: int = 0
    unspent_sat: int = 0
    conservation_checks: int = 0
    conservation_violations: int = 0
    throughput_tps: float = 0.0
    cadence_rel_error: float | None = None
    mfn: dict | None = None
    energy: dict | None = None
    schedule_final: dict = field(default_factory=dict)
    monotonicity_repairs: int = 0
    # mode-specific sections
    hybrid: dict | None = None
    tree: dict | None = None
    concurrent: dict | None = None

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "seed": self.seed,
            "num_levels": self.num_levels,
            "config": self.config,
            "sim_end_time": self.sim_end_time,
            "superblock_times": self.superblock_times,
            "level_time_means": self.level_time_means,
            "level_block_counts": self.level_block_counts,
            "epochs": [e.to_dict() for e in self.epochs],
            "txs_generated": self.txs_generated,
            "txs_confirmed": self.txs_confirmed,
            "txs_skipped": self.txs_skipped,
            "txs_evicted": self.txs_evicted,
            "blocks_accepted": self.blocks_accepted,
            "blocks_rejected": self.blocks_rejected,
            "genesis_sat": self.genesis_sat,
            "minted_sat": self.minted_sat,
            "fees_sat": self.fees_sat,
            "unspent_sat": self.unspent_sat,
            "conservation_checks": self.conservation_checks,
            "conservation_violations": self.conservation_violations,
            "throughput_tps": self.throughput_tps,
            "cadence_rel_error": self.cadence_rel_error,
            "mfn": self.mfn,
            "energy": self.energy,
            "schedule_final": self.schedule_final,
            "monotonicity_repairs": self.monotonicity_repairs,
            "hybrid": self.hybrid,
            "tree": self.tree,
            "concurrent": self.concurrent,
        }

    def canonical_json(self) -> str:
        """Canonical serialization; equal strings mean equal reports."""
        return json.dumps(self.to_dict(), sort_keys=True)

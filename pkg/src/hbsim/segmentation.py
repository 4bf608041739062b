"""Splitting a transaction set into security levels by value per bit.

The lg(beta) range of the input set is divided into L equal sub-intervals
(``lg`` is log base 10 throughout). Level 0 holds the highest values per bit.
A level may legitimately come out empty. The per-level summary statistics and
the log-normal fit of lg(beta) feed the calibration formulas in
:mod:`hbsim.economics`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import ExtendedTransaction, value_per_bit

MODE_UNIFORM = "uniform"
MODE_ROUNDED = "rounded"


@dataclass(frozen=True)
class Segmentation:
    """L level lists plus the L+1 descending lg-beta cut points between them.

    Membership rule: a transaction sits in level l iff
    ``boundaries[l] >= lg(beta) > boundaries[l+1]``, with the lowest boundary
    inclusive. A lg(beta) exactly on an interior cut point therefore belongs
    to the higher-beta level.
    """

    levels: tuple[tuple[ExtendedTransaction, ...], ...]
    boundaries: tuple[float, ...]
    mode: str

    @property
    def num_levels(self) -> int:
        return len(self.levels)


@dataclass(frozen=True)
class LevelSummary:
    """Summary statistics of one level; means are None when the level is empty."""

    count: int
    beta_min: float | None
    beta_max: float | None
    beta_mean: float | None
    value_min: int | None
    value_max: int | None
    value_mean: float | None
    value_total: int
    size_mean_bytes: float | None
    bits_total: int


@dataclass(frozen=True)
class LevelStats:
    """Per-level summaries for a whole segmentation."""

    levels: tuple[LevelSummary, ...]

    def __iter__(self):
        return iter(self.levels)

    def __len__(self) -> int:
        return len(self.levels)

    def __getitem__(self, idx: int) -> LevelSummary:
        return self.levels[idx]

    @property
    def beta_means(self) -> tuple[float | None, ...]:
        return tuple(s.beta_mean for s in self.levels)

    @property
    def bits_totals(self) -> tuple[int, ...]:
        return tuple(s.bits_total for s in self.levels)


@dataclass(frozen=True)
class LogNormalFit:
    """Fitted normal parameters of lg(beta): mean and n-1 sample deviation."""

    mu: float
    sigma: float

    def pdf(self, x: float | np.ndarray) -> float | np.ndarray:
        """Density of the fitted normal in lg-space (overlay curve for histograms)."""
        if self.sigma == 0.0:
            raise ValueError("pdf is degenerate for sigma = 0")
        return np.exp(-((x - self.mu) ** 2) / (2 * self.sigma**2)) / (self.sigma * math.sqrt(2 * math.pi))


def _boundaries(lg_max: float, step: float, num_levels: int) -> tuple[float, ...]:
    return tuple(lg_max - l * step for l in range(num_levels + 1))


def segment(
    num_levels: int,
    txs: Sequence[ExtendedTransaction],
    mode: str = MODE_UNIFORM,
) -> Segmentation:
    """Partition ``txs`` into ``num_levels`` lists by descending value per bit.

    The transactions are stable-sorted by beta descending (ties broken by id)
    and assigned in one pass against the cut points. ``mode`` selects how the
    interval step is computed: ``uniform`` spans exactly the observed lg-beta
    range, ``rounded`` widens it to whole decades before dividing.
    """
    if num_levels < 1:
        raise ValueError("num_levels must be >= 1")
    if not txs:
        raise ValueError("cannot segment an empty transaction set")
    if mode not in (MODE_UNIFORM, MODE_ROUNDED):
        raise ValueError(f"unknown segmentation mode {mode!r}")
    for tx in txs:
        if tx.value <= 0:
            raise ValueError(f"transaction {tx.id.hex()} has zero value and cannot be segmented")

    decorated = sorted(((value_per_bit(t), t) for t in txs), key=lambda p: (-p[0], p[1].id))
    lg_max = math.log10(decorated[0][0])
    lg_min = math.log10(decorated[-1][0])
    if mode == MODE_UNIFORM:
        step = (lg_max - lg_min) / num_levels
    else:
        step = (math.ceil(lg_max) - math.floor(lg_min)) / num_levels
    boundaries = _boundaries(lg_max, step, num_levels)

    levels: list[list[ExtendedTransaction]] = [[] for _ in range(num_levels)]
    level = 0
    for beta, tx in decorated:
        lg_beta = math.log10(beta)
        while level < num_levels - 1 and lg_beta < boundaries[level + 1]:
            level += 1
        levels[level].append(tx)

    return Segmentation(
        levels=tuple(tuple(lvl) for lvl in levels),
        boundaries=boundaries,
        mode=mode,
    )


def summarize_level(txs: Iterable[ExtendedTransaction]) -> LevelSummary:
    """Compute one level's summary row from its member transactions."""
    txs = list(txs)
    if not txs:
        return LevelSummary(0, None, None, None, None, None, None, 0, None, 0)
    betas = [value_per_bit(t) for t in txs]
    values = [t.value for t in txs]
    sizes = [t.size_bytes for t in txs]
    n = len(txs)
    return LevelSummary(
        count=n,
        beta_min=min(betas),
        beta_max=max(betas),
        beta_mean=sum(betas) / n,
        value_min=min(values),
        value_max=max(values),
        value_mean=sum(values) / n,
        value_total=sum(values),
        size_mean_bytes=sum(sizes) / n,
        bits_total=8 * sum(sizes),
    )


def level_stats(seg: Segmentation) -> LevelStats:
    """Per-level summary statistics of a segmentation."""
    return LevelStats(tuple(summarize_level(lvl) for lvl in seg.levels))


def fit_lognormal(txs: Sequence[ExtendedTransaction]) -> LogNormalFit:
    """Fit lg(beta) of the transaction set with a normal (n-1 deviation)."""
    positive = [t for t in txs if t.value > 0]
    if len(positive) < 2:
        raise ValueError("need at least 2 positive-value transactions to fit")
    lg = np.log10([value_per_bit(t) for t in positive])
    mu = float(np.sum(lg) / len(lg))
    sigma = float(np.sqrt(np.sum((lg - mu) ** 2) / (len(lg) - 1)))
    return LogNormalFit(mu=mu, sigma=sigma)


def lg_beta_histogram(
    txs: Sequence[ExtendedTransaction], bins: int = 100
) -> tuple[np.ndarray, np.ndarray]:
    """Density-normalized histogram of lg(beta); returns (bin_edges, densities)."""
    lg = np.log10([value_per_bit(t) for t in txs if t.value > 0])
    densities, edges = np.histogram(lg, bins=bins, density=True)
    return edges, densities

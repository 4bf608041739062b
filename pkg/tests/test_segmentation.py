import math
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hbsim.core import value_per_bit
from hbsim.segmentation import (
    MODE_ROUNDED,
    MODE_UNIFORM,
    fit_lognormal,
    level_stats,
    lg_beta_histogram,
    segment,
)
from conftest import make_tx


def brute_force_level(lg_beta, boundaries):
    """Independent assignment: scan the half-open intervals top down.

    Level l holds boundaries[l] >= lg_beta > boundaries[l+1]; the lowest
    boundary is inclusive and anything below it (possible only through float
    dust or the rounded mode) belongs to the last level.
    """
    num_levels = len(boundaries) - 1
    for l in range(num_levels):
        if lg_beta >= boundaries[l + 1]:
            return l
    return num_levels - 1


def random_tx_set(rng, n=None):
    n = n or rng.randrange(1, 40)
    return [
        make_tx(rng.randrange(1, 10**12), rng.randrange(1, 3000))
        for _ in range(n)
    ]


class TestSegment:
    def test_single_tx_degenerate_range(self):
        tx = make_tx(1000, 250)
        seg = segment(3, [tx])
        assert seg.levels[0] == (tx,)
        assert seg.levels[1] == ()
        assert seg.levels[2] == ()

    def test_two_txs_skip_a_level(self):
        """beta 1000 and 1 with three levels: the small one walks down to level 2."""
        rich = make_tx(8000, 1)
        poor = make_tx(8, 1)
        seg = segment(3, [rich, poor])
        assert seg.levels == ((rich,), (), (poor,))
        assert seg.boundaries == pytest.approx((3.0, 2.0, 1.0, 0.0))

    def test_boundary_tx_lands_in_higher_beta_level(self):
        """lg(beta) exactly on an interior cut point stays with the richer level."""
        txs = [make_tx(8000, 1), make_tx(800, 1), make_tx(8, 1)]
        seg = segment(3, txs)
        assert math.log10(value_per_bit(txs[1])) == seg.boundaries[1]
        assert txs[1] in seg.levels[0]

    def test_matches_brute_force_oracle(self):
        rng = random.Random(7)
        for _ in range(300):
            txs = random_tx_set(rng)
            num_levels = rng.randrange(1, 9)
            mode = rng.choice([MODE_UNIFORM, MODE_ROUNDED])
            seg = segment(num_levels, txs, mode=mode)
            placed = {t.id: l for l, lvl in enumerate(seg.levels) for t in lvl}
            for t in txs:
                expected = brute_force_level(math.log10(value_per_bit(t)), seg.boundaries)
                assert placed[t.id] == expected

    @settings(max_examples=150)
    @given(st.data())
    def test_partition_property(self, data):
        n = data.draw(st.integers(min_value=1, max_value=30))
        txs = [
            make_tx(
                data.draw(st.integers(min_value=1, max_value=10**10)),
                data.draw(st.integers(min_value=1, max_value=2000)),
            )
            for _ in range(n)
        ]
        num_levels = data.draw(st.integers(min_value=1, max_value=6))
        seg = segment(num_levels, txs)
        ids = [t.id for lvl in seg.levels for t in lvl]
        assert sorted(ids) == sorted(t.id for t in txs)
        assert len(set(ids)) == len(ids)
        # monotone: min beta of a level never below max beta of the next
        for l in range(num_levels - 1):
            if seg.levels[l] and seg.levels[l + 1]:
                lo = min(value_per_bit(t) for t in seg.levels[l])
                hi = max(value_per_bit(t) for t in seg.levels[l + 1])
                assert lo >= hi

    def test_permutation_invariance(self):
        rng = random.Random(13)
        txs = random_tx_set(rng, n=25)
        ref = segment(4, txs)
        for _ in range(5):
            shuffled = txs[:]
            rng.shuffle(shuffled)
            seg = segment(4, shuffled)
            for a, b in zip(ref.levels, seg.levels):
                assert sorted(t.id for t in a) == sorted(t.id for t in b)

    def test_rounded_mode_widens_the_range(self):
        txs = [make_tx(4000, 1), make_tx(40, 1)]  # lg betas ~2.7 and ~0.7
        uniform = segment(2, txs, mode=MODE_UNIFORM)
        rounded = segment(2, txs, mode=MODE_ROUNDED)
        assert rounded.boundaries[0] == uniform.boundaries[0]
        step_u = uniform.boundaries[0] - uniform.boundaries[1]
        step_r = rounded.boundaries[0] - rounded.boundaries[1]
        assert step_r == pytest.approx((3 - 0) / 2)
        assert step_r > step_u

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            segment(3, [])
        with pytest.raises(ValueError):
            segment(0, [make_tx(1, 1)])


class TestLevelStats:
    def test_singleton_level(self):
        seg = segment(2, [make_tx(8000, 1), make_tx(8, 1)])
        stats = level_stats(seg)
        top = stats[0]
        assert top.count == 1
        assert top.beta_min == top.beta_max == top.beta_mean == 1000.0
        assert top.value_total == 8000
        assert top.bits_total == 8

    def test_totals_equal_direct_sums(self):
        rng = random.Random(99)
        txs = random_tx_set(rng, n=60)
        seg = segment(5, txs)
        stats = level_stats(seg)
        for lvl, summary in zip(seg.levels, stats):
            assert summary.count == len(lvl)
            assert summary.value_total == sum(t.value for t in lvl)
            assert summary.bits_total == sum(t.size_bits for t in lvl)
            if lvl:
                assert summary.beta_mean == pytest.approx(
                    sum(value_per_bit(t) for t in lvl) / len(lvl)
                )

    def test_empty_level_flagged_absent(self):
        seg = segment(3, [make_tx(8000, 1), make_tx(8, 1)])
        summary = level_stats(seg)[1]
        assert summary.count == 0
        assert summary.beta_mean is None
        assert summary.value_total == 0


class TestLogNormalFit:
    def test_identical_betas_give_zero_sigma(self):
        txs = [make_tx(800, 1) for _ in range(10)]
        fit = fit_lognormal(txs)
        assert fit.sigma == 0.0
        assert fit.mu == pytest.approx(2.0)

    def test_generator_fitter_round_trip(self):
        rng = np.random.default_rng(42)
        lg = rng.normal(3.0, 1.0, size=100_000)
        txs = [make_tx(max(1, round(10.0**x * 8 * 250)), 250) for x in lg]
        fit = fit_lognormal(txs)
        assert abs(fit.mu - 3.0) < 0.02
        assert abs(fit.sigma - 1.0) < 0.02

    def test_requires_two_samples(self):
        with pytest.raises(ValueError):
            fit_lognormal([make_tx(10, 1)])

    def test_histogram_density_normalized(self):
        rng = np.random.default_rng(1)
        txs = [make_tx(max(1, round(10.0**x * 8 * 250)), 250) for x in rng.normal(2, 0.7, 5000)]
        edges, densities = lg_beta_histogram(txs, bins=100)
        widths = np.diff(edges)
        assert abs(float(np.sum(densities * widths)) - 1.0) < 1e-9

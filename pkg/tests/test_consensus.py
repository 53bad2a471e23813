"""Consensus module: shape stats, exponent maps, ITP, L_p solves, weights."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cubedagger.consensus import (
    RHO_GAUSSIAN,
    BracketError,
    CandidateSet,
    ConsensusConfig,
    compute_shape_stats,
    compute_weights,
    consensus_action,
    itp_root,
    rho_to_p,
    rho_to_q,
    solve_lp_center,
    weighted_median,
)

CFG = ConsensusConfig()


def cset(values, weights=None):
    values = np.asarray(values, dtype=float)
    if weights is None:
        weights = np.full(values.size, 1.0 / values.size)
    return CandidateSet(values, np.asarray(weights, dtype=float))


def grid_minimize(values, weights, p, n=100_000):
    """Brute-force oracle: minimize the weighted L_p objective on a grid."""
    lo, hi = values.min(), values.max()
    grid = np.linspace(lo, hi, n)
    obj = np.abs(values[None, :] - grid[:, None]) ** p @ weights
    return grid[int(np.argmin(obj))]


def bisect_root(g, lo, hi, tol=1e-12):
    """Independent bisection oracle."""
    ya, yb = g(lo), g(hi)
    assert ya * yb <= 0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        ym = g(mid)
        if ya * ym <= 0:
            hi, yb = mid, ym
        else:
            lo, ya = mid, ym
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


class TestShapeStats:
    def test_symmetric_three_point(self):
        # hand evaluation: mu=0, std=sqrt(2/3), mae=2/3, rho=sqrt(2/3)
        s = compute_shape_stats(cset([-1.0, 0.0, 1.0]))
        assert s.mu == pytest.approx(0.0, abs=1e-15)
        assert s.sigma_std == pytest.approx(math.sqrt(2.0 / 3.0), abs=1e-12)
        assert s.sigma_mae == pytest.approx(2.0 / 3.0, abs=1e-12)
        assert s.rho == pytest.approx(math.sqrt(2.0 / 3.0), abs=1e-12)
        assert not s.degenerate

    def test_degenerate_equal_values(self):
        s = compute_shape_stats(cset([0.5, 0.5, 0.5]))
        assert s.degenerate
        assert s.rho == pytest.approx(RHO_GAUSSIAN)
        assert s.mu == pytest.approx(0.5)

    def test_gaussian_samples_hit_reference_ratio(self):
        rng = np.random.default_rng(0)
        v = rng.standard_normal(10**6)
        s = compute_shape_stats(cset(v))
        assert s.rho == pytest.approx(RHO_GAUSSIAN, abs=0.01)

    @given(
        st.lists(st.floats(-10, 10), min_size=2, max_size=12).filter(
            lambda v: max(v) - min(v) > 1e-3
        )
    )
    def test_mae_le_std(self, values):
        s = compute_shape_stats(cset(values))
        if not s.degenerate:
            assert s.sigma_mae <= s.sigma_std + 1e-12
            assert 0.0 <= s.rho <= 1.0


class TestExponentMaps:
    def test_q_anchors(self):
        assert rho_to_q(RHO_GAUSSIAN) == pytest.approx(0.0, abs=1e-12)
        assert rho_to_q(1.0) == 1.0
        assert rho_to_q(0.0) == -1.0

    def test_p_anchors(self):
        assert rho_to_p(RHO_GAUSSIAN, CFG) == pytest.approx(2.0, abs=1e-9)
        assert rho_to_p(0.0, CFG) == pytest.approx(1.0)
        assert rho_to_p(1.0, CFG) == CFG.p_max

    def test_pq_consistency_identity(self):
        for rho in np.linspace(0.0, 1.0 - 1e-6, 10_000):
            q = rho_to_q(rho)
            p = rho_to_p(rho, CFG)
            if p < CFG.p_max:
                assert abs(p - 2.0 / (1.0 - q)) < 1e-12

    def test_monotone_before_clamp(self):
        rhos = np.linspace(0.0, 0.99, 500)
        ps = [rho_to_p(r, CFG) for r in rhos]
        assert all(b > a for a, b in zip(ps, ps[1:]) if b < CFG.p_max)

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            rho_to_q(1.1)
        with pytest.raises(ValueError):
            rho_to_p(-0.2, CFG)


class TestITP:
    def test_linear_root(self):
        assert itp_root(lambda c: c - 0.25, 0.0, 1.0, CFG) == pytest.approx(0.25, abs=CFG.itp_eps * 2)

    def test_classic_cubic(self):
        g = lambda c: c**3 - 2 * c - 5
        ref = bisect_root(g, 2.0, 3.0)
        assert ref == pytest.approx(2.0945514815, abs=1e-9)
        cfg = ConsensusConfig(itp_max_iters=60, itp_eps=1e-10)
        assert itp_root(g, 2.0, 3.0, cfg) == pytest.approx(ref, abs=1e-8)

    def test_bracket_error(self):
        with pytest.raises(BracketError):
            itp_root(lambda c: c + 2.0, 0.0, 1.0, CFG)

    def test_decreasing_function(self):
        assert itp_root(lambda c: 0.5 - c, 0.0, 1.0, CFG) == pytest.approx(0.5, abs=1e-9)


class TestSolveLpCenter:
    def test_weighted_mean_at_p2(self):
        c = solve_lp_center(cset([0.0, 1.0, 2.0], [0.5, 0.25, 0.25]), 2.0, CFG)
        assert c == pytest.approx(0.75, abs=1e-12)

    def test_midrange_at_large_p(self):
        c = solve_lp_center(cset([0.0, 1.0, 10.0]), CFG.p_max, CFG)
        assert c == pytest.approx(5.0, abs=1e-12)

    def test_p3_matches_grid_oracle(self):
        cs = cset([0.0, 0.3, 0.9, 1.0], [0.4, 0.3, 0.2, 0.1])
        got = solve_lp_center(cs, 3.0, CFG)
        ref = grid_minimize(cs.values, cs.weights, 3.0)
        assert got == pytest.approx(ref, abs=1e-3)

    def test_random_instances_against_grid(self):
        rng = np.random.default_rng(1)
        for _ in range(120):
            m = rng.integers(2, 13)
            v = rng.uniform(-3, 3, m)
            if v.max() - v.min() < 1e-6:
                continue
            w = rng.uniform(0.05, 1.0, m)
            w /= w.sum()
            p = rng.uniform(1.05, 50.0)
            got = solve_lp_center(cset(v, w), p, CFG)
            ref = grid_minimize(v, w, p)
            assert abs(got - ref) <= 1e-3 * (v.max() - v.min())

    def test_bounds_always_respected(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            v = rng.uniform(-5, 5, 5)
            w = rng.dirichlet(np.ones(5))
            p = rng.uniform(1.0, 120.0)
            c = solve_lp_center(cset(v, w), p, CFG)
            assert v.min() - 1e-12 <= c <= v.max() + 1e-12

    def test_positive_scale_equivariance(self):
        v = np.array([-0.4, 0.1, 0.7, 1.3])
        w = np.array([0.1, 0.4, 0.3, 0.2])
        for s in (0.5, 3.0, 17.0):
            for p in (1.5, 2.7, 8.0):
                c1 = solve_lp_center(cset(v, w), p, CFG)
                c2 = solve_lp_center(cset(s * v, w), p, CFG)
                assert c2 == pytest.approx(s * c1, abs=1e-6 * s)

    def test_weighted_median_closed_form(self):
        assert weighted_median(np.array([1.0, 2.0, 3.0]), np.array([0.2, 0.2, 0.6])) == 3.0
        assert weighted_median(np.array([1.0, 2.0]), np.array([0.5, 0.5])) == pytest.approx(1.5)


class TestWeights:
    def test_agent_only_normalized_likelihoods(self):
        lik = np.array([1.0, 3.0, 4.0])
        w = compute_weights(lik)
        assert np.allclose(w, lik / 8.0)
        assert w.sum() == pytest.approx(1.0)

    def test_collapsed_ensemble_floors_denominator(self):
        # all heads exactly at the expert action; mse = 0 hits the floor,
        # keeping the expert weight finite
        lik = np.full(10, 4.0)
        w = compute_weights(lik, expert_stats=(0.3, 0.3, 0.0, 0.1))
        assert np.all(np.isfinite(w))
        assert w.sum() == pytest.approx(1.0)

    def test_expert_takeover_when_ensemble_is_wrong(self):
        # expert at 1, ensemble mean 0 with tiny mse -> pi_dis density ~ 0
        lik = np.full(10, 4.0)
        w = compute_weights(lik, expert_stats=(1.0, 0.0, 0.01, 0.1))
        assert w[-1] > 0.99

    def test_weight_shift_invariance(self):
        lik = np.array([2.0, 1.0, 0.5])
        base = compute_weights(lik, expert_stats=(1.0, 0.8, 0.04, 0.1))
        shifted = compute_weights(lik, expert_stats=(1.0 + 5.0, 0.8 + 5.0, 0.04, 0.1))
        assert np.allclose(base, shifted)


class TestConsensusAction:
    def test_unanimous(self):
        v = np.array([0.2, -0.5])
        cands = np.tile(v, (4, 1))
        lik = np.ones((4, 2))
        out = consensus_action(cands, lik, expert=v.copy())
        assert np.allclose(out, v, atol=1e-9)

    def test_single_candidate_no_expert(self):
        cands = np.array([[0.7, -0.1, 0.3]])
        out = consensus_action(cands, np.ones((1, 3)))
        assert np.allclose(out, cands[0])

    def test_whole_pipeline_matches_grid_oracle(self):
        rng = np.random.default_rng(3)
        for trial in range(20):
            K = 10
            cands = rng.uniform(-1, 1, (K, 2))
            lik = rng.uniform(0.1, 5.0, (K, 2))
            expert = rng.uniform(-1, 1, 2)
            got = consensus_action(cands, lik, expert=expert, sigma_bar=0.1, cfg=CFG)
            for i in range(2):
                a_i = expert[i]
                vals = cands[:, i]
                w = compute_weights(
                    lik[:, i],
                    (a_i, vals.mean(), float(np.mean((a_i - vals) ** 2)), 0.1),
                )
                values = np.append(vals, a_i)
                stats = compute_shape_stats(CandidateSet(values, w))
                p = rho_to_p(stats.rho, CFG)
                ref = grid_minimize(values, w, p)
                span = values.max() - values.min()
                assert abs(got[i] - ref) <= 1e-3 * max(span, 1e-9)

    def test_translation_equivariance(self):
        rng = np.random.default_rng(4)
        cands = rng.uniform(-1, 1, (5, 3))
        lik = rng.uniform(0.5, 2.0, (5, 3))
        expert = rng.uniform(-1, 1, 3)
        t = np.array([0.7, -1.2, 0.05])
        base = consensus_action(cands, lik, expert=expert)
        shifted = consensus_action(cands + t, lik, expert=expert + t)
        assert np.allclose(shifted, base + t, atol=1e-7)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            consensus_action(np.zeros((3, 2)), np.ones((3, 2)), expert=np.zeros(3))


class TestCandidateSetInvariants:
    def test_rejects_bad_weights(self):
        with pytest.raises(ValueError):
            CandidateSet(np.array([0.0, 1.0]), np.array([0.6, 0.6]))
        with pytest.raises(ValueError):
            CandidateSet(np.array([0.0, 1.0]), np.array([-0.1, 1.1]))

    @settings(max_examples=50)
    @given(st.integers(2, 12), st.integers(0, 10_000))
    def test_lo_hi_bracket_values(self, m, seed):
        rng = np.random.default_rng(seed)
        cs = cset(rng.uniform(-2, 2, m))
        assert cs.lo <= cs.values.min() and cs.hi >= cs.values.max()

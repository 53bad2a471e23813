"""Weighted L_p consensus over action candidates.

The executed action is computed per action dimension as the minimizer of a
weighted L_p norm of deviations to all candidates (K agent heads plus an
optional expert).  The exponent p is chosen from the shape of the candidate
distribution (ratio of mean absolute error to standard deviation), so the
consensus continuously interpolates between the weighted median (p -> 1),
the weighted mean (p = 2), and the midrange (p -> inf).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Shape ratio of a Gaussian: MAE/STD = sqrt(2/pi).
RHO_GAUSSIAN = math.sqrt(2.0 / math.pi)

# Exponent mapping rho into [0, 1] with the Gaussian ratio landing on 1/2.
_RHO_EXPONENT = math.log(2.0) / math.log(math.sqrt(math.pi / 2.0))


class BracketError(ValueError):
    """Root bracket endpoints do not straddle zero."""


@dataclass
class ConsensusConfig:
    """Tuning knobs for the per-dimension L_p solve."""

    p_max: float = 100.0
    p_median_tol: float = 0.05
    itp_max_iters: int = 16
    itp_eps: float = 1e-10
    kappa1: float = 0.2  # divided by (hi - lo) inside the solver
    kappa2: float = 2.0
    n0: int = 1
    scale_floor_frac: float = 0.01  # floor on the disagreement scale, as a fraction of sigma_bar

    def __post_init__(self):
        if not self.p_max > 2:
            raise ValueError("p_max must exceed 2")
        if self.itp_max_iters < 1 or self.itp_eps <= 0:
            raise ValueError("invalid ITP budget")
        if self.kappa1 <= 0 or not (1.0 <= self.kappa2 < 1.0 + (1 + math.sqrt(5)) / 2):
            raise ValueError("invalid ITP constants")


@dataclass
class CandidateSet:
    """Scalar candidates for one action dimension with normalized weights."""

    values: np.ndarray
    weights: np.ndarray
    lo: float = field(init=False)
    hi: float = field(init=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.values.ndim != 1 or self.values.shape != self.weights.shape:
            raise ValueError("values and weights must be 1-D and same length")
        if self.values.size < 1:
            raise ValueError("need at least one candidate")
        if np.any(self.weights < -1e-12):
            raise ValueError("weights must be nonnegative")
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("weights must sum to 1")
        self.lo = float(self.values.min())
        self.hi = float(self.values.max())


@dataclass
class ShapeStats:
    """Weighted location/spread statistics and the MAE/STD shape ratio."""

    mu: float
    sigma_std: float
    sigma_mae: float
    rho: float
    degenerate: bool = False


def compute_shape_stats(cands: CandidateSet) -> ShapeStats:
    """Weighted mean, std, MAE and their ratio rho = MAE/STD.

    When the spread is numerically zero the ratio is 0/0; the Gaussian
    reference value sqrt(2/pi) is reported with the degenerate flag set.
    """
    v, w = cands.values, cands.weights
    mu = float(np.dot(w, v))
    dev = v - mu
    sigma_std = float(math.sqrt(max(np.dot(w, dev * dev), 0.0)))
    sigma_mae = float(np.dot(w, np.abs(dev)))
    if sigma_std < 1e-9 * (cands.hi - cands.lo + 1e-12):
        return ShapeStats(mu, sigma_std, sigma_mae, RHO_GAUSSIAN, degenerate=True)
    rho = min(sigma_mae / sigma_std, 1.0)
    return ShapeStats(mu, sigma_std, sigma_mae, rho)


def rho_to_q(rho: float) -> float:
    """Map the shape ratio to the exponent q in [-1, 1] of the unit-ball diagonal."""
    if rho < -1e-9 or rho > 1.0 + 1e-9:
        raise ValueError(f"rho out of [0, 1]: {rho}")
    rho = min(max(rho, 0.0), 1.0)
    return 2.0 * rho**_RHO_EXPONENT - 1.0


def rho_to_p(rho: float, cfg: ConsensusConfig) -> float:
    """Shape-adaptive norm exponent: median at rho->0, mean at the Gaussian
    ratio, midrange (capped at p_max) at rho->1."""
    if rho < -1e-9 or rho > 1.0 + 1e-9:
        raise ValueError(f"rho out of [0, 1]: {rho}")
    rho = min(max(rho, 0.0), 1.0)
    denom = 1.0 - rho**_RHO_EXPONENT
    if denom <= 1.0 / cfg.p_max:
        return cfg.p_max
    return max(1.0, 1.0 / denom)


def itp_root(g, lo: float, hi: float, cfg: ConsensusConfig) -> float:
    """Interpolate-Truncate-Project root finder on a bracketing interval.

    Takes the regula-falsi estimate, truncates it toward the bisection
    midpoint, and projects it into the minmax interval that preserves the
    bisection worst-case bound.  Returns the interval midpoint once the
    bracket is within 2*itp_eps or the iteration budget is exhausted.
    """
    if not lo < hi:
        raise ValueError("need lo < hi")
    ya, yb = g(lo), g(hi)
    if ya == 0.0:
        return lo
    if yb == 0.0:
        return hi
    if ya * yb > 0.0:
        raise BracketError(f"g({lo})={ya} and g({hi})={yb} share a sign")
    # internal orientation: increasing through the root
    flip = -1.0 if ya > 0 else 1.0
    ya, yb = ya * flip, yb * flip
    a, b = lo, hi
    eps = cfg.itp_eps
    k1 = cfg.kappa1 / (hi - lo)
    n_half = max(0, math.ceil(math.log2((hi - lo) / (2 * eps))))
    n_max = cfg.n0 + n_half
    for j in range(cfg.itp_max_iters):
        if b - a <= 2 * eps:
            break
        x_half = 0.5 * (a + b)
        r = eps * 2.0 ** (n_max - j) - 0.5 * (b - a)
        # interpolation
        xf = (yb * a - ya * b) / (yb - ya)
        # truncation
        delta = k1 * (b - a) ** cfg.kappa2
        sigma = math.copysign(1.0, x_half - xf)
        xt = xf + sigma * delta if delta <= abs(x_half - xf) else x_half
        # projection
        x_itp = xt if abs(xt - x_half) <= r else x_half - sigma * r
        y = g(x_itp) * flip
        if y > 0:
            b, yb = x_itp, y
        elif y < 0:
            a, ya = x_itp, y
        else:
            return x_itp
    return 0.5 * (a + b)


def weighted_median(values: np.ndarray, weights: np.ndarray) -> float:
    """Lower weighted median; midpoint convention on an exact 1/2 split."""
    order = np.argsort(values, kind="stable")
    v, w = values[order], weights[order]
    csum = np.cumsum(w)
    idx = int(np.searchsorted(csum, 0.5))
    if idx < v.size - 1 and abs(csum[idx] - 0.5) <= 1e-12:
        return 0.5 * (v[idx] + v[idx + 1])
    return float(v[min(idx, v.size - 1)])


def solve_lp_center(cands: CandidateSet, p: float, cfg: ConsensusConfig) -> float:
    """Minimize (sum_j w_j |x_j - c|^p)^(1/p) over [lo, hi].

    Closed forms at the median/mean/midrange limits; otherwise roots the
    stationarity residual with ITP.  Residual terms are computed on values
    scaled by (hi - lo) so large p cannot overflow; positive scaling leaves
    the root unchanged.
    """
    if p < 1.0:
        raise ValueError("p must be >= 1")
    v, w = cands.values, cands.weights
    lo, hi = cands.lo, cands.hi
    if hi - lo < 1e-15:
        return lo
    if p <= 1.0 + cfg.p_median_tol:
        return weighted_median(v, w)
    if abs(p - 2.0) < 1e-9:
        return float(np.dot(w, v))
    if p >= cfg.p_max:
        return 0.5 * (lo + hi)

    span = hi - lo
    u = (v - lo) / span  # work in [0, 1]

    def residual(c):
        d = c - u
        return float(np.dot(w, np.abs(d) ** (p - 1.0) * np.sign(d)))

    c = itp_root(residual, 0.0, 1.0, cfg)
    return lo + span * c


def compute_weights(
    agent_likelihoods: np.ndarray,
    expert_stats: tuple[float, float, float, float] | None = None,
    scale_floor_frac: float = 0.01,
) -> np.ndarray:
    """Candidate weights: per-head likelihoods for the agent, and for the
    expert the ratio of the peak expert-surrogate density to the density of
    the expert action under the ensemble-disagreement normal.

    expert_stats = (a, mu_pi, mse, sigma_bar) where mse is the mean squared
    deviation of the head candidates from the expert action.  Returned
    weights are normalized to sum to 1.
    """
    lik = np.asarray(agent_likelihoods, dtype=float)
    if expert_stats is None:
        raw = lik
    else:
        a, mu_pi, mse, sigma_bar = expert_stats
        if sigma_bar <= 0:
            raise ValueError("sigma_bar must be positive")
        peak = 3.0 / (sigma_bar * math.sqrt(2.0 * math.pi))
        dis_scale = max(math.sqrt(max(mse, 0.0)), scale_floor_frac * sigma_bar)
        dis = math.exp(-0.5 * ((a - mu_pi) / dis_scale) ** 2) / (
            dis_scale * math.sqrt(2.0 * math.pi)
        )
        w_exp = peak / max(dis, 1e-300)
        raw = np.append(lik, w_exp)
    total = raw.sum()
    if not np.isfinite(total) or total <= 0:
        # all candidates equally implausible; fall back to uniform
        return np.full(raw.size, 1.0 / raw.size)
    return raw / total


def consensus_action(
    agent_candidates: np.ndarray,
    agent_likelihoods: np.ndarray,
    expert: np.ndarray | None = None,
    sigma_bar: float = 0.1,
    cfg: ConsensusConfig | None = None,
    return_info: bool = False,
) -> np.ndarray:
    """Per-dimension weighted L_p consensus of K agent candidates and an
    optional expert action.

    agent_candidates, agent_likelihoods: (K, dim) arrays; likelihoods are the
    per-dimension densities of each head evaluated at its own candidate.
    Returns the consensus action vector (with a per-dimension info dict of
    expert weights and exponents when return_info is set).  Deterministic
    given inputs.
    """
    if cfg is None:
        cfg = ConsensusConfig()
    cand = np.asarray(agent_candidates, dtype=float)
    lik = np.asarray(agent_likelihoods, dtype=float)
    if cand.ndim != 2 or cand.shape != lik.shape:
        raise ValueError("candidates and likelihoods must both be (K, dim)")
    if expert is not None:
        expert = np.asarray(expert, dtype=float)
        if expert.shape != (cand.shape[1],):
            raise ValueError("expert dimension mismatch")

    dim = cand.shape[1]
    out = np.empty(dim)
    expert_w = np.zeros(dim)
    p_used = np.full(dim, 2.0)
    for i in range(dim):
        vals = cand[:, i]
        if expert is None:
            weights = compute_weights(lik[:, i], None, cfg.scale_floor_frac)
            values = vals
        else:
            a_i = float(expert[i])
            mu_pi = float(vals.mean())
            mse = float(np.mean((a_i - vals) ** 2))
            weights = compute_weights(
                lik[:, i], (a_i, mu_pi, mse, sigma_bar), cfg.scale_floor_frac
            )
            values = np.append(vals, a_i)
            expert_w[i] = weights[-1]
        cset = CandidateSet(values, weights)
        stats = compute_shape_stats(cset)
        if stats.degenerate:
            out[i] = stats.mu
            continue
        p = rho_to_p(stats.rho, cfg)
        p_used[i] = p
        out[i] = solve_lp_center(cset, p, cfg)
    if return_info:
        return out, {"expert_weights": expert_w, "p": p_used}
    return out

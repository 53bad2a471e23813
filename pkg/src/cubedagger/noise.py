"""Autoregressive red noise for time-consistent exploration.

An AR(1) process eps_t = gamma * eps_{t-1} + sqrt(1 - gamma^2) * white_t with
unit stationary variance.  gamma = exp(-dt/T) ties the temporal consistency
to the control period dt and a time constant T; T = 0 degenerates to white
noise.  Each (head, action dimension) channel carries an independent stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class RedNoiseState:
    gamma: float
    memory: np.ndarray  # (K, action_dim)
    rng: np.random.Generator


def noise_init(K: int, action_dim: int, dt: float, T: float, seed: int) -> RedNoiseState:
    """Fresh noise state; memory starts as a white draw, which is already the
    stationary distribution (no burn-in required)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if T < 0:
        raise ValueError("T must be nonnegative")
    gamma = 0.0 if T == 0 else math.exp(-dt / T)
    rng = np.random.default_rng(seed)
    memory = rng.standard_normal((K, action_dim))
    return RedNoiseState(gamma=gamma, memory=memory, rng=rng)


def noise_step(state: RedNoiseState) -> np.ndarray:
    """Advance all channels by one AR(1) step and return the new values."""
    white = state.rng.standard_normal(state.memory.shape)
    g = state.gamma
    state.memory = g * state.memory + math.sqrt(1.0 - g * g) * white
    return state.memory.copy()


def perturb_candidates(
    means: np.ndarray, scales: np.ndarray, noise: np.ndarray, K: int
) -> np.ndarray:
    """Candidate actions with confidence-preserving exploration gain.

    candidate = mean + (2*sqrt(K)/3) * scale * noise.  The gain keeps the
    expert's relative confidence bounded even at maximal noise, so perturbed
    candidates can still win the consensus.
    """
    means = np.asarray(means, dtype=float)
    scales = np.asarray(scales, dtype=float)
    noise = np.asarray(noise, dtype=float)
    if not (means.shape == scales.shape == noise.shape):
        raise ValueError("means, scales, noise must share shape")
    if np.any(scales <= 0):
        raise ValueError("scales must be positive")
    gain = 2.0 * math.sqrt(K) / 3.0
    return means + gain * scales * noise

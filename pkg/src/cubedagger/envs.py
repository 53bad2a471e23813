"""Toy control tasks with deterministic dynamics and scripted experts.

Three tasks cover distinct failure modes: PointPush (non-prehensile pushing
where bad actions shove the object out of reach), Pendulum (an unstable
equilibrium sensitive to mistakes), and MultiArm (a redundant 6-joint planar
arm with a coupled reaching reward).  Dynamics are explicit-Euler at a fixed
step period; all actions are normalized to [-1, 1] per dimension and clipped
before integration.  Randomness enters only through reset(seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class EpisodeAbort(RuntimeError):
    """Environment state went non-finite."""


@dataclass
class EnvSpec:
    state_dim: int
    action_dim: int
    dt: float = 0.05
    horizon: int = 200

    def __post_init__(self):
        if self.horizon < 1 or self.dt <= 0:
            raise ValueError("invalid EnvSpec")


@dataclass
class DisturbanceSpec:
    probability: float = 0.05
    magnitude: float = 1.0  # max additive disturbance, in action units (bounds are +-1)

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0 or self.magnitude < 0:
            raise ValueError("invalid DisturbanceSpec")


def apply_disturbance(action: np.ndarray, spec: DisturbanceSpec, rng: np.random.Generator) -> np.ndarray:
    """Each dimension independently gets additive uniform noise with the
    configured trigger probability; result clipped to bounds."""
    a = np.asarray(action, dtype=float)
    hit = rng.random(a.shape) < spec.probability
    noise = rng.uniform(-spec.magnitude, spec.magnitude, a.shape)
    return np.clip(a + hit * noise, -1.0, 1.0)


class ToyEnv:
    """Gym-style interface: reset(seed) -> state, step(a) -> (s, r, term, trunc)."""

    spec: EnvSpec
    name: str
    # documented scripted-expert reference scores (mean episode score over
    # 100 seeds); refreshed by tests/calibration
    expert_reference_score: float
    # frozen disturbance magnitude per task (half intensity for Pendulum)
    disturbance_magnitude: float = 1.0

    def reset(self, seed: int) -> np.ndarray:
        raise NotImplementedError

    def step(self, action: np.ndarray):
        raise NotImplementedError

    def expert_action(self, state: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _finish(self, state: np.ndarray, reward: float):
        self._t += 1
        if not np.all(np.isfinite(state)):
            raise EpisodeAbort(f"{self.name}: non-finite state at step {self._t}")
        truncated = self._t >= self.spec.horizon
        return state.copy(), float(reward), False, truncated


class PointPush(ToyEnv):
    """Planar pusher moving an object disk to a fixed goal.

    State: [pusher_xy, object_xy] in a [-1, 1]^2 workspace; goal at GOAL.
    The pusher is velocity controlled; the object is quasi-static and is
    displaced by rigid non-penetration when the pusher disk overlaps it.
    Reward: negative object-goal distance.
    Reset: pusher at the origin, object uniform in a ring of radius
    [0.25, 0.45] around the pusher.
    """

    name = "pointpush"
    GOAL = np.array([0.8, 0.0])
    CONTACT_R = 0.12
    SPEED = 1.0
    expert_reference_score = -22.53
    disturbance_magnitude = 1.0

    def __init__(self, dt: float = 0.05, horizon: int = 150):
        self.spec = EnvSpec(state_dim=4, action_dim=2, dt=dt, horizon=horizon)

    def reset(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        self._t = 0
        self.p = np.zeros(2)
        r = rng.uniform(0.25, 0.45)
        th = rng.uniform(-math.pi, math.pi)
        self.o = self.p + r * np.array([math.cos(th), math.sin(th)])
        return self._state()

    def _state(self):
        return np.concatenate([self.p, self.o])

    def step(self, action: np.ndarray):
        a = np.clip(np.asarray(action, dtype=float), -1.0, 1.0)
        self.p = np.clip(self.p + self.spec.dt * self.SPEED * a, -1.0, 1.0)
        d = self.o - self.p
        dist = np.linalg.norm(d)
        if dist < self.CONTACT_R:
            # push the object out along the contact normal
            if dist < 1e-9:
                d, dist = np.array([1e-9, 0.0]), 1e-9
            self.o = self.p + self.CONTACT_R * d / dist
            self.o = np.clip(self.o, -1.0, 1.0)
        reward = -float(np.linalg.norm(self.o - self.GOAL))
        return self._finish(self._state(), reward)

    def expert_action(self, state: np.ndarray) -> np.ndarray:
        """Geometric pushing controller: move toward a stand-behind point on
        the object-to-goal line, then push through the object toward the
        goal.  All branch decisions are blended smoothly so the action is a
        continuous function of the state (easy to imitate)."""
        p, o = state[:2], state[2:4]
        to_goal = self.GOAL - o
        goal_dist = float(np.linalg.norm(to_goal))
        goal_dir = to_goal / max(goal_dist, 1e-9)
        stand = o - 1.05 * self.CONTACT_R * goal_dir  # spot behind the object
        to_stand = stand - p
        stand_dist = float(np.linalg.norm(to_stand))
        approach = to_stand / max(stand_dist, 1e-9)
        # detour sideways when heading straight at the object while close,
        # so the pusher does not plow it off the goal line; the detour
        # weight fades in smoothly with proximity and heading alignment
        rel = o - p
        rel_dist = float(np.linalg.norm(rel))
        heading = max(0.0, float(np.dot(approach, rel)) / max(rel_dist, 1e-9))
        proximity = np.clip(1.0 - (rel_dist - self.CONTACT_R) / (0.6 * self.CONTACT_R), 0.0, 1.0)
        detour = heading * proximity
        tangent = np.array([-rel[1], rel[0]]) / max(rel_dist, 1e-9)
        tangent = tangent * math.tanh(float(np.dot(tangent, to_stand)) / 0.1)
        direction = (1.0 - detour) * approach + detour * tangent
        # far from the stand point: travel there; once behind, push along
        # the goal line; magnitude tapers off as the object reaches the goal
        travel = np.clip(stand_dist / 0.12, 0.0, 1.0)
        direction = travel * direction + (1.0 - travel) * goal_dir
        gain = 0.9 * math.tanh(goal_dist / 0.12)
        return np.clip(gain * direction, -1.0, 1.0)


class Pendulum(ToyEnv):
    """Inverted pendulum balanced near the upright via torque.

    State: [theta, theta_dot] with theta measured from upright.
    Dynamics: theta_dd = G_L * sin(theta) - damping * theta_dot + TORQUE * u.
    Reward: -(theta^2 + 0.1 theta_dot^2 + 0.01 u^2).
    Reset: theta uniform in [-0.3, 0.3] rad, theta_dot uniform in [-0.05, 0.05].
    """

    name = "pendulum"
    G_L = 5.0
    TORQUE = 3.0
    expert_reference_score = -0.28
    disturbance_magnitude = 0.5

    def __init__(self, dt: float = 0.05, horizon: int = 200, damping: float = 0.1):
        self.spec = EnvSpec(state_dim=2, action_dim=1, dt=dt, horizon=horizon)
        self.damping = damping

    def reset(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        self._t = 0
        self.theta = rng.uniform(-0.3, 0.3)
        self.theta_dot = rng.uniform(-0.05, 0.05)
        return self._state()

    def _state(self):
        return np.array([self.theta, self.theta_dot])

    def _accel(self, theta, theta_dot, u):
        return self.G_L * math.sin(theta) - self.damping * theta_dot + self.TORQUE * u

    def step(self, action: np.ndarray):
        u = float(np.clip(np.asarray(action, dtype=float), -1.0, 1.0)[0])
        dt = self.spec.dt
        acc = self._accel(self.theta, self.theta_dot, u)
        self.theta += dt * self.theta_dot
        self.theta_dot += dt * acc
        reward = -(self.theta**2 + 0.1 * self.theta_dot**2 + 0.01 * u * u)
        return self._finish(self._state(), reward)

    def expert_action(self, state: np.ndarray) -> np.ndarray:
        theta, theta_dot = state
        u = -(4.0 * theta + 1.0 * theta_dot) * self.G_L / self.TORQUE / 4.0 * 3.0
        return np.clip(np.array([u]), -1.0, 1.0)


class MultiArm(ToyEnv):
    """Redundant planar 6-joint arm reaching a sampled target.

    State: [q (6 joint angles), target_xy]; joints are velocity-controlled
    integrators (q_dot = RATE * a), so every action dimension couples into
    the tip position.  Reward: negative tip-target distance.
    Reset: q nominal arc plus uniform [-0.1, 0.1] per joint; target uniform
    in the annulus radius [0.4, 0.8] of the upper half plane.
    """

    name = "multiarm"
    N_JOINTS = 6
    LINK = 1.0 / 6.0
    RATE = 1.5
    expert_reference_score = -5.03
    disturbance_magnitude = 1.0

    def __init__(self, dt: float = 0.05, horizon: int = 200):
        self.spec = EnvSpec(state_dim=8, action_dim=6, dt=dt, horizon=horizon)

    def reset(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        self._t = 0
        self.q = 0.3 * np.ones(self.N_JOINTS) + rng.uniform(-0.1, 0.1, self.N_JOINTS)
        r = rng.uniform(0.4, 0.8)
        th = rng.uniform(0.2, math.pi - 0.2)
        self.target = r * np.array([math.cos(th), math.sin(th)])
        return self._state()

    def _state(self):
        return np.concatenate([self.q, self.target])

    @classmethod
    def tip(cls, q: np.ndarray) -> np.ndarray:
        angles = np.cumsum(q)
        return cls.LINK * np.array([np.cos(angles).sum(), np.sin(angles).sum()])

    @classmethod
    def jacobian(cls, q: np.ndarray) -> np.ndarray:
        angles = np.cumsum(q)
        # column j: derivative of the tip w.r.t. joint j
        jac = np.zeros((2, cls.N_JOINTS))
        for j in range(cls.N_JOINTS):
            jac[0, j] = -cls.LINK * np.sin(angles[j:]).sum()
            jac[1, j] = cls.LINK * np.cos(angles[j:]).sum()
        return jac

    def step(self, action: np.ndarray):
        a = np.clip(np.asarray(action, dtype=float), -1.0, 1.0)
        self.q = self.q + self.spec.dt * self.RATE * a
        reward = -float(np.linalg.norm(self.tip(self.q) - self.target))
        return self._finish(self._state(), reward)

    def expert_action(self, state: np.ndarray) -> np.ndarray:
        q, target = state[: self.N_JOINTS], state[self.N_JOINTS :]
        err = target - self.tip(q)
        a = 6.0 * self.jacobian(q).T @ err
        return np.clip(a, -1.0, 1.0)


TASKS = {cls.name: cls for cls in (PointPush, Pendulum, MultiArm)}


def make_env(name: str, dt: float = 0.05, horizon: int | None = None) -> ToyEnv:
    if name not in TASKS:
        raise ValueError(f"unknown task {name!r}; choose from {sorted(TASKS)}")
    cls = TASKS[name]
    if horizon is None:
        return cls(dt=dt)
    return cls(dt=dt, horizon=horizon)


def expert_rollout(env: ToyEnv, seed: int, disturbance: DisturbanceSpec | None = None) -> float:
    """Episode score of the scripted expert (optionally disturbed)."""
    state = env.reset(seed)
    rng = np.random.default_rng(seed + 10_000_019)
    score = 0.0
    while True:
        a = env.expert_action(state)
        if disturbance is not None:
            a = apply_disturbance(a, disturbance, rng)
        state, r, term, trunc = env.step(a)
        score += r
        if term or trunc:
            return score

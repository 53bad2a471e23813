"""Interaction loop: arbitration conditions, episodes, and the seeded harness.

Conditions:
    EV1  expert-agent switching, loose deviation threshold (1.0)
    EV2  switching with the tight threshold (0.1)
    C1   EV2 plus the controlled-disagreement training loss
    C2   C1 with the switch replaced by weighted L_p consensus
    C3   C2 plus red-noise exploration on the candidates

Every step stores (state, expert action) into the dataset regardless of what
was executed; the dataset is replayed once per episode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .consensus import ConsensusConfig, consensus_action
from .envs import DisturbanceSpec, ToyEnv, apply_disturbance, make_env
from .noise import RedNoiseState, noise_init, noise_step, perturb_candidates
from .policy import Dataset, EnsemblePolicy, train_epoch

_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class ConditionConfig:
    name: str
    delta_bar: float
    sigma_bar: float
    use_ctrl_loss: bool
    use_consensus: bool
    noise_T: float  # red-noise time constant in seconds; 0 disables
    elementwise: bool = True  # safety criteria per dimension (norm-based otherwise)

    @classmethod
    def from_name(cls, name: str, noise_T: float = 3.0) -> "ConditionConfig":
        table = {
            "EV1": cls("EV1", 1.0, 0.1, False, False, 0.0),
            "EV2": cls("EV2", 0.1, 0.1, False, False, 0.0),
            "C1": cls("C1", 0.1, 0.1, True, False, 0.0),
            "C2": cls("C2", 0.1, 0.1, True, True, 0.0),
            "C3": cls("C3", 0.1, 0.1, True, True, noise_T),
        }
        if name not in table:
            raise ValueError(f"unknown condition {name!r}; choose from {sorted(table)}")
        return table[name]


CONDITIONS = ("EV1", "EV2", "C1", "C2", "C3")


@dataclass
class EpisodeRecord:
    states: list = field(default_factory=list)
    expert_actions: list = field(default_factory=list)
    executed_actions: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    diffs: list = field(default_factory=list)  # per-step mean_i |a_i - a_c_i|
    aborted: bool = False

    @property
    def score(self) -> float:
        return float(sum(self.rewards))

    @property
    def mean_diff(self) -> float:
        return float(np.mean(self.diffs)) if self.diffs else float("nan")


def peak_likelihoods(scales: np.ndarray) -> np.ndarray:
    """Per-dimension density of each head at its own mean."""
    return 1.0 / (scales * _SQRT_2PI)


def _gaussian_density(x, mean, scale):
    z = (x - mean) / scale
    return np.exp(-0.5 * z * z) / (scale * _SQRT_2PI)


def arbitrate(
    condition: ConditionConfig,
    act_out: dict,
    expert_action: np.ndarray | None,
    noise_state: RedNoiseState | None = None,
    ccfg: ConsensusConfig | None = None,
    return_info: bool = False,
):
    """Choose the executed action from the policy output and expert action.

    act_out is EnsemblePolicy.act(state).  Switching conditions pick the
    ensemble mean when inside the safety set, else the expert; consensus
    conditions solve the weighted L_p problem (with noise-perturbed
    candidates when the condition injects exploration noise).
    """
    means, scales = act_out["means"], act_out["scales"]
    a_pi, sigma_pi = act_out["a_pi"], act_out["sigma_pi"]
    info = {"expert_weight": 0.0}
    if condition.use_consensus:
        if condition.noise_T > 0 and noise_state is not None:
            eps = noise_step(noise_state)
            cands = perturb_candidates(means, scales, eps, means.shape[0])
            lik = _gaussian_density(cands, means, scales)
        else:
            cands = means
            lik = peak_likelihoods(scales)
        a_c, cinfo = consensus_action(
            cands, lik, expert=expert_action, sigma_bar=condition.sigma_bar,
            cfg=ccfg, return_info=True,
        )
        info["expert_weight"] = float(cinfo["expert_weights"].mean())
    else:
        if expert_action is None:
            a_c = a_pi.copy()
        else:
            dev = np.abs(expert_action - a_pi)
            if condition.elementwise:
                safe = bool(np.all(dev <= condition.delta_bar) and np.all(sigma_pi <= condition.sigma_bar))
            else:
                safe = (np.linalg.norm(dev) <= condition.delta_bar
                        and np.linalg.norm(sigma_pi) <= condition.sigma_bar)
            a_c = a_pi.copy() if safe else expert_action.copy()
            info["expert_weight"] = 0.0 if safe else 1.0
    a_c = np.clip(a_c, -1.0, 1.0)
    return (a_c, info) if return_info else a_c


def run_episode(
    env: ToyEnv,
    policy: EnsemblePolicy,
    condition: ConditionConfig,
    dataset: Dataset,
    env_seed: int,
    noise_state: RedNoiseState | None = None,
    ccfg: ConsensusConfig | None = None,
    expert_fn=None,
    step_callback=None,
) -> EpisodeRecord:
    """One data-collection episode: at every step the expert's action is
    stored while the arbitrated action drives the environment."""
    expert_fn = expert_fn or env.expert_action
    rec = EpisodeRecord()
    state = env.reset(env_seed)
    from .envs import EpisodeAbort

    while True:
        a = np.asarray(expert_fn(state), dtype=float)
        act_out = policy.act(state)
        a_c = arbitrate(condition, act_out, a, noise_state, ccfg)
        dataset.add(state, a)  # expert action, never the executed one
        rec.states.append(state.copy())
        rec.expert_actions.append(a.copy())
        rec.executed_actions.append(a_c.copy())
        rec.diffs.append(float(np.mean(np.abs(a - a_c))))
        try:
            state, r, term, trunc = env.step(a_c)
        except EpisodeAbort:
            rec.aborted = True
            return rec
        rec.rewards.append(r)
        if step_callback is not None:
            step_callback(len(rec.rewards) - 1, state, a, a_c, r)
        if term or trunc:
            return rec


def evaluate_policy(
    policy: EnsemblePolicy,
    env: ToyEnv,
    disturbance: DisturbanceSpec | None,
    n_episodes: int,
    mode: str = "mean",
    base_seed: int = 0,
    ccfg: ConsensusConfig | None = None,
) -> float:
    """Mean episode score of the frozen policy, agent-only inference.

    mode 'mean' executes the ensemble mean; 'consensus' solves the agent-only
    consensus (the expert candidate is simply excluded).
    """
    if mode not in ("mean", "consensus"):
        raise ValueError(f"unknown inference mode {mode!r}")
    scores = []
    from .envs import EpisodeAbort

    for ep in range(n_episodes):
        seed = int(np.random.SeedSequence([base_seed, 101, ep]).generate_state(1)[0])
        state = env.reset(seed)
        rng = np.random.default_rng(np.random.SeedSequence([base_seed, 202, ep]))
        total = 0.0
        while True:
            act_out = policy.act(state)
            if mode == "consensus":
                a_c = consensus_action(
                    act_out["means"], peak_likelihoods(act_out["scales"]), cfg=ccfg
                )
            else:
                a_c = act_out["a_pi"]
            a_c = np.clip(a_c, -1.0, 1.0)
            if disturbance is not None:
                a_c = apply_disturbance(a_c, disturbance, rng)
            try:
                state, r, term, trunc = env.step(a_c)
            except EpisodeAbort:
                break
            total += r
            if term or trunc:
                break
        scores.append(total)
    return float(np.mean(scores))


@dataclass
class RunResult:
    task: str
    condition: str
    seed: int
    episodes: list  # per-episode dicts: episode, score, mean_diff
    retention: float
    robustness: float
    norm_retention: float
    norm_robustness: float
    failed: bool = False
    error: str = ""


# frozen zero-action policy scores used as the normalization floor
BASELINE_SCORES = {"pointpush": -125.0, "pendulum": -3109.5, "multiarm": -122.3}


def normalize_score(task: str, score: float, expert_ref: float) -> float:
    base = BASELINE_SCORES[task]
    return (score - base) / (expert_ref - base)


def run_single(
    task: str,
    condition: ConditionConfig,
    seed: int,
    episodes: int = 50,
    policy_kw: dict | None = None,
    lr: float = 3e-3,
    batch_size: int = 50,
    ccfg: ConsensusConfig | None = None,
    eval_rollouts: int = 5,
    episode_callback=None,
) -> RunResult:
    """One (condition, seed) run: alternate data collection with training,
    then evaluate Retention and Robustness."""
    env = make_env(task)
    policy_kw = dict(policy_kw or {})
    policy_kw.setdefault("K", 10)
    policy = EnsemblePolicy(
        env.spec.state_dim, env.spec.action_dim,
        sigma_bar=condition.sigma_bar, seed=seed, **policy_kw,
    )
    optimizer = torch.optim.Adam(policy.parameters(), lr=lr)
    dataset = Dataset()
    noise_state = None
    if condition.noise_T > 0:
        noise_state = noise_init(
            policy.K, env.spec.action_dim, env.spec.dt, condition.noise_T,
            int(np.random.SeedSequence([seed, 303]).generate_state(1)[0]),
        )
    per_episode = []
    for ep in range(episodes):
        env_seed = int(np.random.SeedSequence([seed, 404, ep]).generate_state(1)[0])
        rec = run_episode(env, policy, condition, dataset, env_seed, noise_state, ccfg)
        train_rng = np.random.default_rng(np.random.SeedSequence([seed, 505, ep]))
        if len(dataset):
            train_epoch(policy, dataset, batch_size, optimizer, train_rng,
                        use_ctrl=condition.use_ctrl_loss)
        per_episode.append({"episode": ep, "score": rec.score, "mean_diff": rec.mean_diff})
        if episode_callback is not None:
            episode_callback(ep, rec, policy)
    retention = float(np.mean([e["score"] for e in per_episode])) if per_episode else float("nan")
    disturbance = DisturbanceSpec(probability=0.05, magnitude=env.disturbance_magnitude)
    mode = "consensus" if condition.use_consensus else "mean"
    robustness = evaluate_policy(policy, env, disturbance, eval_rollouts, mode,
                                 base_seed=seed, ccfg=ccfg)
    ref = env.expert_reference_score
    return RunResult(
        task=task, condition=condition.name, seed=seed, episodes=per_episode,
        retention=retention, robustness=robustness,
        norm_retention=normalize_score(task, retention, ref),
        norm_robustness=normalize_score(task, robustness, ref),
    )


def run_experiment(config) -> list[RunResult]:
    """Full matrix over conditions x seeds for one task.

    Any single-run failure is recorded as a failed RunResult and the
    experiment continues.
    """
    results = []
    for cond_name in config.conditions:
        condition = ConditionConfig.from_name(cond_name, noise_T=config.noise_T)
        for seed in config.seeds:
            try:
                results.append(
                    run_single(
                        config.task, condition, seed,
                        episodes=config.episodes,
                        policy_kw=config.policy_kw(),
                        lr=config.learning_rate,
                        batch_size=config.batch_size,
                        ccfg=config.consensus_config(),
                        eval_rollouts=config.eval_rollouts,
                        episode_callback=config.make_episode_callback(cond_name, seed)
                        if hasattr(config, "make_episode_callback") else None,
                    )
                )
            except Exception as exc:  # noqa: BLE001 - seed failures are data
                results.append(RunResult(
                    task=config.task, condition=cond_name, seed=seed, episodes=[],
                    retention=float("nan"), robustness=float("nan"),
                    norm_retention=float("nan"), norm_robustness=float("nan"),
                    failed=True, error=f"{type(exc).__name__}: {exc}",
                ))
    return results

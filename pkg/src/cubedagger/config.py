"""Experiment configuration: YAML file + command-line overrides.

Schema (all keys optional, defaults shown):

    task: pointpush            # pointpush | pendulum | multiarm
    conditions: [C3]           # subset of EV1 EV2 C1 C2 C3, or "all"
    seeds: [0, 1, 2]           # list, or an integer N meaning 0..N-1
    episodes: 50
    noise_T: 3.0               # red-noise time constant (s), C3 only
    learning_rate: 3.0e-3
    batch_size: 50
    eval_rollouts: 5
    policy:
      K: 10
      hidden: [100, 100]
      eps: 1.0e-4
      nonneg_lambda: false
    consensus:
      p_max: 100.0
      p_median_tol: 0.05
      itp_max_iters: 16
      itp_eps: 1.0e-10
    out: results
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import yaml

from .consensus import ConsensusConfig
from .envs import TASKS
from .loop import CONDITIONS


@dataclass
class ExperimentConfig:
    task: str = "pointpush"
    conditions: list[str] = field(default_factory=lambda: ["C3"])
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    episodes: int = 50
    noise_T: float = 3.0
    learning_rate: float = 3e-3
    batch_size: int = 50
    eval_rollouts: int = 5
    policy: dict = field(default_factory=dict)
    consensus: dict = field(default_factory=dict)
    out: str = "results"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; choose from {sorted(TASKS)}")
        if self.conditions == "all":
            self.conditions = list(CONDITIONS)
        for c in self.conditions:
            if c not in CONDITIONS:
                raise ValueError(f"unknown condition {c!r}; choose from {CONDITIONS}")
        if isinstance(self.seeds, int):
            self.seeds = list(range(self.seeds))
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")
        if self.episodes < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("invalid training settings")
        self.consensus_config()  # raises on bad consensus params

    def policy_kw(self) -> dict:
        kw = dict(self.policy)
        if "hidden" in kw:
            kw["hidden"] = tuple(kw["hidden"])
        return kw

    def consensus_config(self) -> ConsensusConfig:
        return ConsensusConfig(**self.consensus)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path: str, overrides: dict | None = None) -> "ExperimentConfig":
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ValueError(f"config root must be a mapping, got {type(data).__name__}")
        for key, value in (overrides or {}).items():
            if value is not None:
                data[key] = value
        return cls.from_dict(data)

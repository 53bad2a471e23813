"""K-head diagonal-Gaussian ensemble policy with controlled disagreement.

A shared two-layer trunk feeds K output heads (mean, log-scale per action
dimension) plus two auxiliary heads: a signed Lagrange multiplier lambda(s)
and a bounded slack delta(s).  Training combines behavioral cloning with a
regularizer that holds the worst head's log-deviation from the expert action
inside a target band, so the ensemble spread stays informative instead of
collapsing onto the expert or blowing up.
"""

from __future__ import annotations

import json
import math
import warnings

import numpy as np
import torch
from torch import nn

LOG_SCALE_MIN = math.log(1e-4)
LOG_SCALE_MAX = math.log(10.0)
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class TrainingAbort(RuntimeError):
    """Raised when a loss goes non-finite; carries diagnostics."""


class EnsemblePolicy(nn.Module):
    def __init__(
        self,
        state_dim: int,
        action_dim: int,
        K: int = 10,
        hidden: tuple[int, int] = (100, 100),
        eps: float = 1e-4,
        sigma_bar: float = 0.1,
        seed: int = 0,
        nonneg_lambda: bool = False,
    ):
        super().__init__()
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.K = K
        self.hidden = tuple(hidden)
        self.eps = eps
        self.sigma_bar = sigma_bar
        self.seed = seed
        self.nonneg_lambda = nonneg_lambda
        # domain of the slack variable delta
        self.delta_width = math.log(1.0 + eps) - math.log(2.0 * eps)
        self.err_tol = 0.1 * self.delta_width

        h1, h2 = self.hidden
        gen = torch.Generator().manual_seed(seed)
        self.fc1 = nn.Linear(state_dim, h1)
        self.fc2 = nn.Linear(h1, h2)
        for lin in (self.fc1, self.fc2):
            bound = 1.0 / math.sqrt(lin.in_features)
            with torch.no_grad():
                lin.weight.uniform_(-bound, bound, generator=gen)
                lin.bias.uniform_(-bound, bound, generator=gen)

        # K heads as stacked tensors; each head gets its own init stream so
        # the ensemble starts diverse while sharing the trunk
        out = 2 * action_dim
        bound = 1.0 / math.sqrt(h2)
        w = torch.empty(K, out, h2)
        b = torch.empty(K, out)
        for k in range(K):
            gk = torch.Generator().manual_seed(seed * 7919 + 31 * k + 1)
            w[k].uniform_(-bound, bound, generator=gk)
            b[k].uniform_(-bound, bound, generator=gk)
        self.head_w = nn.Parameter(w)
        self.head_b = nn.Parameter(b)

        # constraint heads start at zero output
        self.lambda_head = nn.Linear(h2, action_dim)
        self.delta_head = nn.Linear(h2, action_dim)
        for lin in (self.lambda_head, self.delta_head):
            nn.init.zeros_(lin.weight)
            nn.init.zeros_(lin.bias)

    def features(self, states: torch.Tensor) -> torch.Tensor:
        if states.shape[-1] != self.state_dim:
            raise ValueError(f"expected state dim {self.state_dim}, got {states.shape[-1]}")
        return torch.relu(self.fc2(torch.relu(self.fc1(states))))

    def heads(self, feats: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """(B, K, A) means and log-scales from trunk features."""
        out = torch.einsum("koh,bh->bko", self.head_w, feats) + self.head_b
        means = out[..., : self.action_dim]
        log_scales = out[..., self.action_dim :].clamp(LOG_SCALE_MIN, LOG_SCALE_MAX)
        return means, log_scales

    def forward(self, states: torch.Tensor):
        feats = self.features(states)
        means, log_scales = self.heads(feats)
        return means, log_scales, feats

    def lambdas(self, feats: torch.Tensor) -> torch.Tensor:
        # detached features: the constraint machinery must not shape the trunk
        lam = self.lambda_head(feats.detach())
        return torch.relu(lam) if self.nonneg_lambda else lam

    def delta_raw(self, feats: torch.Tensor) -> torch.Tensor:
        return self.delta_head(feats.detach())

    def delta(self, raw: torch.Tensor) -> torch.Tensor:
        """Range transform g_delta onto [0, delta_width]."""
        return self.delta_width * torch.sigmoid(raw)

    @torch.no_grad()
    def act(self, state: np.ndarray) -> dict:
        """Head means/scales plus ensemble mean and spread for one state."""
        p = self.head_w  # dtype/device reference
        s = torch.as_tensor(state, dtype=p.dtype).reshape(1, -1)
        means, log_scales, _ = self.forward(s)
        means = means[0].cpu().numpy()
        scales = np.exp(log_scales[0].cpu().numpy())
        a_pi = means.mean(axis=0)
        sigma_pi = np.sqrt(np.mean((a_pi - means) ** 2, axis=0))
        return {"means": means, "scales": scales, "a_pi": a_pi, "sigma_pi": sigma_pi}

    def hyper(self) -> dict:
        return {
            "state_dim": self.state_dim,
            "action_dim": self.action_dim,
            "K": self.K,
            "hidden": list(self.hidden),
            "eps": self.eps,
            "sigma_bar": self.sigma_bar,
            "seed": self.seed,
            "nonneg_lambda": self.nonneg_lambda,
        }


def ensemble_stats(means: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Ensemble mean and population std over the head axis of (B, K, A)."""
    a_pi = means.mean(dim=1)
    sigma = torch.sqrt(((a_pi.unsqueeze(1) - means) ** 2).mean(dim=1))
    return a_pi, sigma


def _check_finite(name: str, value: torch.Tensor, extra: dict | None = None):
    if not torch.isfinite(value).all():
        raise TrainingAbort(f"{name} is non-finite: {value} (context: {extra})")


def bc_loss(policy: EnsemblePolicy, states: torch.Tensor, actions: torch.Tensor) -> torch.Tensor:
    """Mean over the batch of the summed Gaussian NLL of all K heads."""
    means, log_scales, _ = policy.forward(states)
    return _bc_from_heads(means, log_scales, actions)


def _bc_from_heads(means, log_scales, actions):
    a = actions.unsqueeze(1)
    z = (a - means) * torch.exp(-log_scales)
    nll = 0.5 * z * z + log_scales + _HALF_LOG_2PI
    loss = nll.sum(dim=(1, 2)).mean()
    _check_finite("bc_loss", loss)
    return loss


def max_log_deviation(
    means: torch.Tensor, actions: torch.Tensor, sigma_bar: float, eps: float
) -> torch.Tensor:
    """max_k ln(|a - a^{pi_k}| / sigma_bar + eps), per (batch, dimension)."""
    dev = torch.log((actions.unsqueeze(1) - means).abs() / sigma_bar + eps)
    return dev.max(dim=1).values


def constraint_residual(
    expert_a: torch.Tensor, candidates: torch.Tensor, delta: torch.Tensor,
    sigma_bar: float, eps: float,
) -> torch.Tensor:
    """e = ln(2 eps) + delta - max_k ln(|a - a^{pi_k}| / sigma_bar + eps)."""
    return math.log(2.0 * eps) + delta - max_log_deviation(candidates, expert_a, sigma_bar, eps)


def ctrl_loss(policy: EnsemblePolicy, states: torch.Tensor, actions: torch.Tensor) -> torch.Tensor:
    """BC loss plus the disagreement regularizer weighted by lambda(s).

    lambda is a constant here; the max over heads routes the regularizer
    gradient to the single worst head per dimension.
    """
    means, log_scales, feats = policy.forward(states)
    bc = _bc_from_heads(means, log_scales, actions)
    m = max_log_deviation(means, actions, policy.sigma_bar, policy.eps)
    lam = policy.lambdas(feats).detach()
    reg = -(lam * m).sum(dim=1).mean()
    loss = bc + reg
    _check_finite("ctrl_loss", loss, {"bc": bc.item(), "reg": reg.item()})
    return loss


def lambda_loss(policy: EnsemblePolicy, states: torch.Tensor, actions: torch.Tensor) -> torch.Tensor:
    """Lagrange-multiplier objective -lambda * e with e held constant."""
    means, _, feats = policy.forward(states)
    lam = policy.lambdas(feats)
    delta = policy.delta(policy.delta_raw(feats))
    e = constraint_residual(actions, means, delta, policy.sigma_bar, policy.eps).detach()
    return -(lam * e).sum(dim=1).mean()


def delta_loss(policy: EnsemblePolicy, states: torch.Tensor, actions: torch.Tensor) -> torch.Tensor:
    """Slack objective: chase the constraint when the error is large,
    otherwise drift toward the bound opposing lambda's pressure."""
    means, _, feats = policy.forward(states)
    raw = policy.delta_raw(feats)
    lam = policy.lambdas(feats).detach()
    delta = policy.delta(raw).detach()
    e = constraint_residual(actions, means, delta, policy.sigma_bar, policy.eps).detach()
    coeff = torch.where(e.abs() > policy.err_tol, torch.sign(e), lam)
    return (raw * coeff).sum(dim=1).mean()


class Dataset:
    """Append-only store of (state, expert action) pairs."""

    def __init__(self):
        self._states: list[np.ndarray] = []
        self._actions: list[np.ndarray] = []

    def add(self, state: np.ndarray, action: np.ndarray):
        self._states.append(np.asarray(state, dtype=float).copy())
        self._actions.append(np.asarray(action, dtype=float).copy())

    def __len__(self):
        return len(self._states)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.stack(self._states), np.stack(self._actions)


def train_epoch(
    policy: EnsemblePolicy,
    dataset: Dataset,
    batch_size: int,
    optimizer: torch.optim.Optimizer,
    rng: np.random.Generator,
    use_ctrl: bool = True,
) -> dict:
    """One uniform-random full pass over the dataset.

    use_ctrl=False (plain EnsembleDAgger conditions) optimizes the BC loss
    only and leaves the lambda/delta heads untouched.
    """
    n = len(dataset)
    if n == 0:
        warnings.warn("train_epoch called with empty dataset; skipping")
        return {"bc": float("nan"), "main": float("nan"), "batches": 0}
    states_np, actions_np = dataset.arrays()
    dtype = policy.head_w.dtype
    states = torch.as_tensor(states_np, dtype=dtype)
    actions = torch.as_tensor(actions_np, dtype=dtype)
    order = rng.permutation(n)
    totals = {"bc": 0.0, "main": 0.0}
    batches = 0
    for start in range(0, n, batch_size):
        idx = torch.as_tensor(order[start : start + batch_size])
        s, a = states[idx], actions[idx]
        if use_ctrl:
            main = ctrl_loss(policy, s, a)
            total = main + lambda_loss(policy, s, a) + delta_loss(policy, s, a)
        else:
            main = bc_loss(policy, s, a)
            total = main
        optimizer.zero_grad(set_to_none=True)
        total.backward()
        optimizer.step()
        totals["main"] += main.item()
        batches += 1
    return {"main": totals["main"] / batches, "batches": batches}


CHECKPOINT_VERSION = 1


def save_checkpoint(policy: EnsemblePolicy, path: str):
    """Versioned npz checkpoint: hyperparameters + all parameter tensors."""
    arrays = {k: v.detach().cpu().numpy() for k, v in policy.state_dict().items()}
    np.savez(
        path,
        __version__=np.array(CHECKPOINT_VERSION),
        __hyper__=np.frombuffer(json.dumps(policy.hyper()).encode(), dtype=np.uint8),
        **arrays,
    )


def load_checkpoint(path: str) -> EnsemblePolicy:
    try:
        data = np.load(path)
        version = int(data["__version__"])
    except Exception as exc:
        raise ValueError(f"cannot parse checkpoint {path}: {exc}") from exc
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"checkpoint version {version} != supported {CHECKPOINT_VERSION}")
    hyper = json.loads(bytes(data["__hyper__"]).decode())
    hyper["hidden"] = tuple(hyper["hidden"])
    policy = EnsemblePolicy(**hyper)
    state = {
        k: torch.as_tensor(data[k])
        for k in data.files
        if k not in ("__version__", "__hyper__")
    }
    policy.load_state_dict(state)
    return policy

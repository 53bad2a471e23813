"""Ensemble policy: losses, gradients vs finite differences, training, checkpoints."""

import math

import numpy as np
import pytest
import torch

from cubedagger.policy import (
    Dataset,
    EnsemblePolicy,
    TrainingAbort,
    bc_loss,
    constraint_residual,
    ctrl_loss,
    delta_loss,
    ensemble_stats,
    lambda_loss,
    load_checkpoint,
    max_log_deviation,
    save_checkpoint,
    train_epoch,
)


def tiny_policy(seed=0, state_dim=2, action_dim=2, K=3, hidden=(4, 4), **kw):
    """<=200 parameter net in float64 for finite-difference work."""
    return EnsemblePolicy(state_dim, action_dim, K=K, hidden=hidden, seed=seed, **kw).double()


def fd_grad(loss_fn, params, rel_h=1e-5):
    """Central finite differences over the named parameters."""
    grads = {}
    for name, p in params.items():
        g = torch.zeros_like(p)
        flat = p.data.view(-1)
        gf = g.view(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            h = rel_h * max(1.0, abs(orig))
            with torch.no_grad():
                flat[i] = orig + h
                up = float(loss_fn())
                flat[i] = orig - h
                dn = float(loss_fn())
                flat[i] = orig
            gf[i] = (up - dn) / (2 * h)
        grads[name] = g
    return grads


def assert_grad_matches(loss_fn, policy, flow_to, rtol=1e-4):
    """Check analytic gradients against central differences.

    flow_to: substrings naming the parameters the loss is defined to update.
    Terms held constant inside a loss (detached lambda, residual e) still
    co-vary numerically with the other parameters, so the FD oracle is only
    meaningful on the declared flow path; analytic gradients elsewhere must
    be zero.
    """
    policy.zero_grad()
    loss = loss_fn()
    loss.backward()
    checked, others = {}, {}
    for n, p in policy.named_parameters():
        (checked if any(f in n for f in flow_to) else others)[n] = p
    for n, p in others.items():
        if p.grad is not None:
            assert float(p.grad.abs().max()) == 0.0, f"unexpected gradient on {n}"
    analytic = {n: (p.grad.clone() if p.grad is not None else torch.zeros_like(p))
                for n, p in checked.items()}
    numeric = fd_grad(loss_fn, checked)
    for name in analytic:
        a, n = analytic[name], numeric[name]
        denom = max(float(a.abs().max()), float(n.abs().max()), 1e-6)
        err = float((a - n).abs().max()) / denom
        assert err < rtol, f"{name}: rel grad error {err}"


def batch(policy, B=6, seed=0):
    rng = np.random.default_rng(seed)
    dtype = policy.head_w.dtype
    s = torch.as_tensor(rng.uniform(-1, 1, (B, policy.state_dim)), dtype=dtype)
    a = torch.as_tensor(rng.uniform(-1, 1, (B, policy.action_dim)), dtype=dtype)
    return s, a


class TestForward:
    def test_collapsed_ensemble_zero_spread(self):
        p = tiny_policy()
        with torch.no_grad():
            p.head_w.copy_(p.head_w[0].expand_as(p.head_w))
            p.head_b.copy_(p.head_b[0].expand_as(p.head_b))
        out = p.act(np.array([0.3, -0.4]))
        assert np.allclose(out["sigma_pi"], 0.0)

    def test_fresh_heads_are_diverse(self):
        p = tiny_policy(seed=1)
        out = p.act(np.array([0.5, 0.5]))
        assert np.all(out["sigma_pi"] > 0)

    def test_stats_match_direct_formula(self):
        p = tiny_policy(seed=2)
        s, _ = batch(p, B=4)
        means, _, _ = p.forward(s)
        a_pi, sigma = ensemble_stats(means)
        m = means.detach().numpy()
        ref_mean = m.mean(axis=1)
        ref_std = np.sqrt(((ref_mean[:, None, :] - m) ** 2).mean(axis=1))
        assert np.allclose(a_pi.detach().numpy(), ref_mean)
        assert np.allclose(sigma.detach().numpy(), ref_std)

    def test_dimension_mismatch(self):
        p = tiny_policy()
        with pytest.raises(ValueError):
            p.forward(torch.zeros(1, 5, dtype=torch.float64))


class TestBCLoss:
    def test_zero_residual_nll(self):
        # action at every head mean with scale 1 -> per-head per-dim NLL = 0.5 ln(2 pi)
        p = tiny_policy()
        s, _ = batch(p, B=3)
        means, log_scales, feats = p.forward(s)
        with torch.no_grad():
            # force log_scale outputs to 0 by zeroing those rows
            A = p.action_dim
            p.head_w[:, A:, :] = 0.0
            p.head_b[:, A:] = 0.0
        means, log_scales, _ = p.forward(s)
        a = means[:, 0, :].detach()  # matches head 0 exactly
        # evaluate NLL of head 0 alone
        z = (a.unsqueeze(1) - means.detach()) / log_scales.detach().exp()
        nll0 = (0.5 * z[:, 0, :] ** 2 + log_scales.detach()[:, 0, :] + 0.5 * math.log(2 * math.pi))
        assert torch.allclose(nll0, torch.full_like(nll0, 0.5 * math.log(2 * math.pi)))

    def test_overfit_one_sample(self):
        p = tiny_policy(seed=3)
        opt = torch.optim.Adam(p.parameters(), lr=1e-2)
        s = torch.tensor([[0.2, -0.1]], dtype=torch.float64)
        a = torch.tensor([[0.5, 0.3]], dtype=torch.float64)
        losses = []
        for _ in range(100):
            loss = bc_loss(p, s, a)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        assert losses[-1] < losses[0]

    def test_nonfinite_aborts(self):
        p = tiny_policy()
        s = torch.tensor([[float("nan"), 0.0]], dtype=torch.float64)
        a = torch.zeros(1, 2, dtype=torch.float64)
        with pytest.raises(TrainingAbort):
            bc_loss(p, s, a)


class TestConstraintResidual:
    def test_zero_deviation_gives_ln2(self):
        eps = 1e-4
        a = torch.zeros(1, 2)
        cands = torch.zeros(1, 3, 2)
        delta = torch.zeros(1, 2)
        e = constraint_residual(a, cands, delta, sigma_bar=0.1, eps=eps)
        assert torch.allclose(e, torch.full_like(e, math.log(2.0)), atol=1e-6)

    def test_upper_bound_edge(self):
        eps = 1e-4
        sigma_bar = 0.1
        a = torch.zeros(1, 3, 1) + sigma_bar  # max deviation exactly sigma_bar
        e = constraint_residual(torch.zeros(1, 1), a, torch.zeros(1, 1), sigma_bar, eps)
        expected = math.log(2 * eps) - math.log(1 + eps)
        assert torch.allclose(e, torch.full_like(e, expected), atol=1e-6)

    def test_random_against_independent_arithmetic(self):
        rng = np.random.default_rng(0)
        eps, sigma_bar = 1e-4, 0.1
        a = rng.uniform(-1, 1, (4, 2))
        c = rng.uniform(-1, 1, (4, 5, 2))
        d = rng.uniform(0, 1, (4, 2))
        got = constraint_residual(
            torch.as_tensor(a), torch.as_tensor(c), torch.as_tensor(d), sigma_bar, eps
        ).numpy()
        ref = np.empty((4, 2))
        for b in range(4):
            for i in range(2):
                devs = [math.log(abs(a[b, i] - c[b, k, i]) / sigma_bar + eps) for k in range(5)]
                ref[b, i] = math.log(2 * eps) + d[b, i] - max(devs)
        assert np.allclose(got, ref)


ALL_PARAMS = ("fc1", "fc2", "head_w", "head_b", "lambda_head", "delta_head")
LOSS_FLOW = {
    bc_loss: ("fc1", "fc2", "head_w", "head_b"),
    ctrl_loss: ("fc1", "fc2", "head_w", "head_b"),
    lambda_loss: ("lambda_head",),
    delta_loss: ("delta_head",),
}


def randomize_constraint_heads(p, seed):
    with torch.no_grad():
        gen = torch.Generator().manual_seed(seed)
        for lin in (p.lambda_head, p.delta_head):
            lin.weight.add_(0.3 * torch.randn(lin.weight.shape, generator=gen, dtype=torch.float64))
            lin.bias.add_(0.3 * torch.randn(lin.bias.shape, generator=gen, dtype=torch.float64))


class TestGradients:
    @pytest.mark.parametrize("loss", [bc_loss, ctrl_loss, lambda_loss, delta_loss])
    def test_matches_finite_differences(self, loss):
        for trial in range(3):
            p = tiny_policy(seed=trial + 10)
            randomize_constraint_heads(p, trial)
            s, a = batch(p, seed=trial)
            if loss is ctrl_loss:
                # lambda is a constant inside ctrl_loss; pin its value so the
                # FD oracle evaluates the same objective
                lam_const = p.lambdas(p.features(s)).detach()
                p.lambdas = lambda feats: lam_const
            assert_grad_matches(lambda: loss(p, s, a), p, LOSS_FLOW[loss])


class TestSignBehavior:
    def make(self):
        p = tiny_policy(seed=5)
        s, a = batch(p, B=4, seed=5)
        return p, s, a

    def test_lambda_moves_with_residual_sign(self):
        for target_sign in (+1.0, -1.0):
            p, s, a = self.make()
            # pin delta so the residual sign is known
            with torch.no_grad():
                means, _, feats = p.forward(s)
                m = max_log_deviation(means, a, p.sigma_bar, p.eps)
                delta = p.delta(p.delta_raw(feats))
                e = math.log(2 * p.eps) + delta - m
            lam_before = p.lambdas(p.features(s)).detach().clone()
            loss = lambda_loss(p, s, a)
            p.zero_grad()
            loss.backward()
            # gradient on lambda head params is -mean(e * dfeat); verify the
            # update direction via one SGD step
            with torch.no_grad():
                for q in (p.lambda_head.weight, p.lambda_head.bias):
                    q -= 1e-2 * q.grad
            lam_after = p.lambdas(p.features(s)).detach()
            diff = (lam_after - lam_before).numpy()
            e_np = e.numpy()
            # every element moves in the direction of its residual
            assert np.all(np.sign(diff[np.abs(e_np) > 1e-6]) == np.sign(e_np[np.abs(e_np) > 1e-6]))
            break  # residual sign is data-dependent; one directional check suffices

    def test_delta_branch_signs(self):
        p, s, a = self.make()
        loss = delta_loss(p, s, a)
        p.zero_grad()
        loss.backward()
        # |e| starts large (untrained heads), so the sign branch is active:
        # e < 0 when deviations exceed the band -> delta should increase
        means, _, feats = p.forward(s)
        delta = p.delta(p.delta_raw(feats))
        e = constraint_residual(a, means, delta, p.sigma_bar, p.eps)
        raw_before = p.delta_raw(feats).detach().clone()
        with torch.no_grad():
            for q in (p.delta_head.weight, p.delta_head.bias):
                q -= 1e-2 * q.grad
        raw_after = p.delta_raw(p.features(s)).detach()
        move = (raw_after - raw_before).numpy()
        e_np = e.detach().numpy()
        big = np.abs(e_np) > p.err_tol
        # minimizing raw*sign(e): raw moves opposite to sign(e)
        assert np.all(np.sign(move[big]) == -np.sign(e_np[big]))

    def test_ctrl_equals_bc_when_lambda_zero(self):
        p = tiny_policy(seed=6)  # lambda head initialized to zero
        s, a = batch(p, seed=6)
        assert ctrl_loss(p, s, a).item() == pytest.approx(bc_loss(p, s, a).item(), rel=1e-12)

    def test_positive_lambda_pushes_heads_apart(self):
        p = tiny_policy(seed=7)
        with torch.no_grad():
            p.lambda_head.bias.fill_(1.0)
        s, a = batch(p, B=8, seed=7)
        opt = torch.optim.Adam([p.head_w, p.head_b, p.fc1.weight, p.fc1.bias,
                                p.fc2.weight, p.fc2.bias], lr=3e-3)
        def spread():
            with torch.no_grad():
                means, _, _ = p.forward(s)
                return float(ensemble_stats(means)[1].mean())
        # overfit BC first so heads collapse toward the targets
        for _ in range(300):
            loss = bc_loss(p, s, a)
            opt.zero_grad(); loss.backward(); opt.step()
        collapsed = spread()
        for _ in range(200):
            loss = ctrl_loss(p, s, a)
            opt.zero_grad(); loss.backward(); opt.step()
        assert spread() > collapsed


class TestTrainEpoch:
    def fill(self, ds, n, seed=0):
        rng = np.random.default_rng(seed)
        for _ in range(n):
            ds.add(rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2))

    def test_batch_count(self):
        p = tiny_policy(seed=8)
        ds = Dataset()
        self.fill(ds, 500)
        opt = torch.optim.Adam(p.parameters(), lr=1e-3)
        out = train_epoch(p, ds, 50, opt, np.random.default_rng(0))
        assert out["batches"] == 10

    def test_empty_dataset_warns(self):
        p = tiny_policy()
        opt = torch.optim.Adam(p.parameters(), lr=1e-3)
        with pytest.warns(UserWarning):
            out = train_epoch(p, Dataset(), 50, opt, np.random.default_rng(0))
        assert out["batches"] == 0

    def test_ev_epoch_leaves_constraint_heads_untouched(self):
        p = tiny_policy(seed=9)
        ds = Dataset()
        self.fill(ds, 100)
        opt = torch.optim.Adam(p.parameters(), lr=1e-3)
        lam_w = p.lambda_head.weight.detach().clone()
        dlt_w = p.delta_head.weight.detach().clone()
        train_epoch(p, ds, 50, opt, np.random.default_rng(0), use_ctrl=False)
        assert torch.equal(p.lambda_head.weight, lam_w)
        assert torch.equal(p.delta_head.weight, dlt_w)

    def test_seed_determinism_bit_identical(self):
        params = []
        for _ in range(2):
            p = tiny_policy(seed=11)
            ds = Dataset()
            self.fill(ds, 120, seed=4)
            opt = torch.optim.Adam(p.parameters(), lr=1e-3)
            for ep in range(3):
                train_epoch(p, ds, 50, opt, np.random.default_rng(ep))
            params.append({n: q.detach().clone() for n, q in p.named_parameters()})
        for n in params[0]:
            assert torch.equal(params[0][n], params[1][n]), n


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        p = tiny_policy(seed=12, nonneg_lambda=True)
        path = str(tmp_path / "ckpt.npz")
        save_checkpoint(p, path)
        q = load_checkpoint(path)
        assert q.hyper() == p.hyper()
        for (n1, a), (n2, b) in zip(p.state_dict().items(), q.state_dict().items()):
            assert n1 == n2 and torch.equal(a, b)

    def test_corrupted_checkpoint(self, tmp_path):
        path = tmp_path / "bad.npz"
        path.write_bytes(b"not an npz")
        with pytest.raises(ValueError):
            load_checkpoint(str(path))

    def test_version_mismatch(self, tmp_path):
        p = tiny_policy()
        path = str(tmp_path / "v.npz")
        save_checkpoint(p, path)
        data = dict(np.load(path).items())
        data["__version__"] = np.array(99)
        np.savez(path, **data)
        with pytest.raises(ValueError, match="version"):
            load_checkpoint(path)

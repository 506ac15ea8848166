import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from leno import autodiff as ad
from leno.dataset import CoeffDataset, compute_residuals, project_trajectories
from leno.errors import DivergenceError, ValidationError
from leno.metrics import fit_order
from leno.leno import TrainConfig, learned_operator, loss, loss_graph, predict, rollout, train
from leno.neuralnet import CoeffNet, forward, param_tensors
from leno.pde_lab import builtin_problem, generate
from leno.spectral_basis import build_basis


def _constant_net(P, c):
    net = CoeffNet.init((P, 4, P), seed=0)
    net.weights = [np.zeros_like(W) for W in net.weights]
    net.biases = [np.zeros(4), np.asarray(c, dtype=float)]
    return net


def _synthetic(net, lambdas, M=3, N=5, tau=0.01, seed=0, alpha=1.0):
    """Dataset whose trajectories are exactly the model's own rollouts."""
    beta0 = np.random.default_rng(seed).standard_normal((M, net.sizes[0]))
    times = tau * np.arange(N + 1)
    b = rollout(net, beta0, times, lambdas, alpha=alpha)
    return CoeffDataset(times, b, compute_residuals(b, times, lambdas), lambdas)


@given(st.floats(1e-4, 0.1), st.integers(1, 8))
def test_rollout_closed_form_constant_forcing(tau, N):
    lam = np.array([0.5, 3.0, 40.0, 900.0])
    c = np.array([1.0, -2.0, 0.5, 3.0])
    beta0 = np.array([0.3, 1.0, -1.0, 2.0])
    out = rollout(_constant_net(4, c), beta0, tau, lam, n_steps=N)
    star = c / lam
    exact = star + (beta0 - star) / (1 + tau * lam) ** N
    assert np.abs(out[-1] - exact).max() <= 1e-12 * max(1.0, np.abs(exact).max())
    assert np.array_equal(out[0], beta0)


def test_rollout_alpha_rescales_time():
    lam = np.array([1.0, 5.0])
    net = CoeffNet.init((2, 6, 2), 3)
    b0 = np.array([[0.4, -0.2]])
    a = rollout(net, b0, 0.02, lam, alpha=2.0, n_steps=4)
    b = rollout(net, b0, 0.01, lam, n_steps=4)
    assert np.allclose(a, b, rtol=0, atol=1e-15)
    assert np.array_equal(rollout(net, b0, 0.01, lam, alpha=1.0, n_steps=4), b)


def test_rollout_rejects_negative_eigenvalues():
    with pytest.raises(ValidationError):
        rollout(_constant_net(2, [0.0, 0.0]), np.ones(2), 0.1, np.array([-50.0, 1.0]), n_steps=3)


def test_loss_vanishes_on_model_generated_data():
    lam = np.array([1.0, 4.0, 9.0])
    net = CoeffNet.init((3, 16, 3), 1)
    ds = _synthetic(net, lam)
    L, LD, LR = loss(net, ds)
    assert LD < 1e-14 and LR < 1e-12


def test_loss_by_hand(rng):
    lam = np.array([1.0, 4.0])
    net = CoeffNet.init((2, 5, 2), 4)
    times = np.array([0.0, 0.1, 0.25])
    b = rng.standard_normal((2, 3, 2))
    ds = CoeffDataset(times, b, compute_residuals(b, times, lam), lam)
    LD = LR = 0.0
    for m in range(2):
        x = b[m, 0]
        for n in (1, 2):
            k = times[n] - times[n - 1]
            x = (x + k * forward(net, x)) / (1 + k * lam)
            LD += np.linalg.norm(x - b[m, n]) / np.linalg.norm(b[m, n])
            R = (b[m, n] - b[m, n - 1]) / k + lam * b[m, n]
            LR += np.linalg.norm(forward(net, b[m, n - 1]) - R) / np.linalg.norm(R)
    L, got_D, got_R = loss(net, ds)
    assert got_D == pytest.approx(LD / 4, rel=1e-13)
    assert got_R == pytest.approx(LR / 4, rel=1e-13)
    assert L == pytest.approx((LD + LR) / 4, rel=1e-13)
    assert loss(net, ds, "data-only")[2] == 0.0 and loss(net, ds, "residual-only")[1] == 0.0


def test_eps_floor_on_zero_targets():
    lam = np.array([1.0, 2.0])
    times = np.array([0.0, 0.1])
    b = np.zeros((1, 2, 2))
    ds = CoeffDataset(times, b, compute_residuals(b, times, lam), lam)
    L, _, _ = loss(_constant_net(2, [1e-13, 0.0]), ds, eps=1e-12)
    assert math.isfinite(L)


def _fd_check(net, ds, mode, idx, log_alpha=None):
    params = param_tensors(net)
    la = None if log_alpha is None else ad.Tensor(np.array(log_alpha), requires_grad=True)
    loss_graph(net, params, ds, mode, log_alpha=la).total.backward()
    worst = 0.0
    for p_i, ij in idx:
        P = net.parameters()[p_i]
        h = 1e-6 * max(1.0, abs(P[ij]))
        P[ij] += h
        fp = loss_graph(net, [ad.Tensor(p) for p in net.parameters()], ds, mode,
                        log_alpha=None if la is None else ad.Tensor(np.array(log_alpha))).total.data
        P[ij] -= 2 * h
        fm = loss_graph(net, [ad.Tensor(p) for p in net.parameters()], ds, mode,
                        log_alpha=None if la is None else ad.Tensor(np.array(log_alpha))).total.data
        P[ij] += h
        fd = (fp - fm) / (2 * h)
        worst = max(worst, abs(params[p_i].grad[ij] - fd) / max(abs(fd), 1e-8))
    if la is not None:
        h = 1e-6
        f = lambda a: loss_graph(net, [ad.Tensor(p) for p in net.parameters()], ds, mode,
                                 log_alpha=ad.Tensor(np.array(a))).total.data
        fd = (f(log_alpha + h) - f(log_alpha - h)) / (2 * h)
        worst = max(worst, abs(la.grad - fd) / max(abs(fd), 1e-8))
    return worst


@pytest.mark.parametrize("mode", ["combined", "data-only", "residual-only"])
def test_full_pipeline_gradient_check(mode):
    prob = builtin_problem("kpp", {"resolution": 64})
    basis = build_basis(prob.domain, "dirichlet", P=6)
    ds = project_trajectories(generate(prob, 4, seed=0, n_records=4), [basis])
    net = CoeffNet.init((6, 12, 12, 6), seed=7)
    rng = np.random.default_rng(0)
    idx = [(p, tuple(rng.integers(0, s) for s in net.parameters()[p].shape)) for p in range(6) for _ in range(3)]
    net.biases = [b + 0.1 for b in net.biases]
    assert _fd_check(net, ds, mode, idx) <= 1e-5
    if mode == "combined":
        assert _fd_check(net, ds, mode, idx[:3], log_alpha=0.2) <= 1e-5


def test_semi_implicit_data_residual_is_projected_reaction():
    prob = builtin_problem("kpp", {"resolution": 256})
    basis = build_basis(prob.domain, "dirichlet", P=64)
    traj = generate(prob, 5, seed=2, n_records=10, scheme="imex")
    ds = project_trajectories(traj, [basis])
    PF = basis.project(prob.F(traj.samples[:, :-1])[:, :, 0])
    assert np.abs(ds.residuals - PF).max() <= 1e-10 * np.abs(PF).max()


def test_residual_approaches_reaction_at_first_order_in_tau():
    prob = builtin_problem("kpp", {"resolution": 256})
    basis = build_basis(prob.domain, "dirichlet", P=64)
    T, taus, errs = 0.04, [0.001, 0.002, 0.004, 0.008], []
    for tau in taus:
        traj = generate(prob, 5, seed=2, n_records=round(T / tau), tau=tau)
        ds = project_trajectories(traj, [basis])
        F = prob.F(traj.samples[:, -1:])[:, :, 0]
        diff = basis.reconstruct(ds.residuals[:, -1:] - basis.project(F))
        errs.append(np.mean(basis.norm(diff) / basis.norm(F)))
    slope, r2 = fit_order(np.array(taus), np.array(errs))
    assert 0.9 <= slope <= 1.1 and r2 > 0.99
    assert errs[0] <= 0.05


def test_training_reduces_loss_and_writes_history(tmp_path):
    lam = np.array([1.0, 4.0, 9.0])
    ds = _synthetic(CoeffNet.init((3, 16, 3), 1), lam, M=4)
    net = CoeffNet.init((3, 16, 3), 9)
    hist_path = tmp_path / "h.csv"
    net, hist = train(net, ds, TrainConfig(epochs=200, lr=1e-2, history_path=str(hist_path)))
    assert hist[-1]["L"] < 0.2 * hist[0]["L"]
    rows = list(csv.reader(open(hist_path)))
    assert rows[0] == ["epoch", "L", "L_D", "L_R", "lr", "wall_time"] and len(rows) == 201
    assert net.optimizer.step == 200


def test_training_is_deterministic():
    lam = np.array([1.0, 4.0])
    ds = _synthetic(CoeffNet.init((2, 8, 2), 1), lam)
    a, _ = train(CoeffNet.init((2, 8, 2), 2), ds, TrainConfig(epochs=20))
    b, _ = train(CoeffNet.init((2, 8, 2), 2), ds, TrainConfig(epochs=20))
    assert a.same_parameters(b)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_training_divergence_reports_history():
    lam = np.array([1.0, 4.0])
    ds = _synthetic(CoeffNet.init((2, 8, 2), 1), lam)
    net = CoeffNet.init((2, 8, 2), 2)
    net.weights[0][:] = 1e200
    with pytest.raises(DivergenceError) as exc:
        train(net, ds, TrainConfig(epochs=5))
    assert exc.value.history is not None


def test_training_width_mismatch():
    ds = _synthetic(CoeffNet.init((2, 8, 2), 1), np.array([1.0, 2.0]))
    with pytest.raises(ValidationError):
        train(CoeffNet.init((3, 8, 3), 0), ds, TrainConfig(epochs=1))


def test_learned_operator_and_predict_shapes():
    prob = builtin_problem("kpp", {"resolution": 64})
    basis = build_basis(prob.domain, "dirichlet", P=8)
    net = CoeffNet.init((8, 16, 8), 0)
    u = generate(prob, 2, seed=0, n_records=1).samples[:, 0, 0]
    N = learned_operator(net, [basis])
    assert np.allclose(basis.project(N(u)), forward(net, basis.project(u)))
    pred = predict(net, [basis], u, 30, 0.01, prob)
    assert pred.samples.shape == (2, 31, 1, 65) and pred.meta["norms"].shape == (2, 31, 1)
    assert np.array_equal(pred.samples[:, 0, 0], u)
    assert predict(net, [basis], u, 0, 0.01).samples.shape[1] == 1

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from leno.dataset import CoeffDataset, compute_residuals, project_trajectories
from leno.errors import ValidationError
from leno.leno import reconstruct_fields, rollout
from leno.metrics import ErrorReport, evaluate, fit_order, norm_curve_deviation
from leno.neuralnet import CoeffNet
from leno.pde_lab import builtin_problem, generate
from leno.spectral_basis import build_basis

_PROB = builtin_problem("kpp", {"resolution": 64})
_BASIS = build_basis(_PROB.domain, "dirichlet", P=8)


def _self_consistent(net, M=3, N=5, tau=0.01):
    beta0 = project_trajectories(generate(_PROB, M, seed=0, n_records=1), [_BASIS]).betas[:, 0]
    times = tau * np.arange(N + 1)
    b = rollout(net, beta0, times, _BASIS.lambdas)
    return CoeffDataset(times, b, compute_residuals(b, times, _BASIS.lambdas), _BASIS.lambdas)


def test_identical_prediction_has_zero_errors():
    net = CoeffNet.init((8, 16, 8), 1)
    net.biases[-1] += 0.1
    ds = _self_consistent(net)
    rep = evaluate(net, ds, [_BASIS])
    assert rep.E_L2 <= 1e-14 and rep.E_Res <= 1e-12 and rep.E_Nonlinear is None


def test_zero_net_on_heat_data_residual_is_order_tau():
    net = CoeffNet.init((8, 4, 8), 0)
    net.weights = [np.zeros_like(w) for w in net.weights]
    errs = []
    for tau in (1e-5, 5e-6):
        times = tau * np.arange(4)
        beta0 = np.linspace(1, 0.2, 8)
        b = (beta0 * np.exp(-np.outer(times, _BASIS.lambdas)))[None]
        ds = CoeffDataset(times, b, compute_residuals(b, times, _BASIS.lambdas), _BASIS.lambdas)
        errs.append(evaluate(net, ds, [_BASIS]).E_Res)
    # G = 0 gives E_Res = 1 by definition; the data residual itself is O(tau)
    assert errs == [1.0, 1.0]
    r1 = compute_residuals(b, times, _BASIS.lambdas)
    assert np.abs(r1).max() < 1e-2 * np.abs(_BASIS.lambdas * b[0, 0]).max()


def test_nonlinear_error_against_reference_reaction():
    net = CoeffNet.init((8, 16, 8), 2)
    ds = _self_consistent(net)
    rep = evaluate(net, ds, [_BASIS], _PROB.F)
    beta_t = rollout(net, ds.betas[:, 0], ds.times, ds.lambdas)
    u = reconstruct_fields([_BASIS], beta_t)[:, 1:]
    Nu = reconstruct_fields([_BASIS], net.forward(beta_t[:, 1:]))
    Fu = _PROB.F(u)
    w = _BASIS.weights
    manual = np.mean(np.sqrt(np.sum((Nu - Fu) ** 2 * w, axis=(-2, -1)))
                     / np.sqrt(np.sum(Fu ** 2 * w, axis=(-2, -1))))
    assert rep.E_Nonlinear == pytest.approx(manual, rel=1e-12)


def test_report_outputs():
    rep = ErrorReport(1e-3, 2e-3, None, 4, 10)
    text = rep.to_csv()
    assert text.splitlines()[1].endswith("n/a,4,10")
    assert rep.violations({"E_L2": 5e-4}) == ["E_L2"]
    assert rep.violations({"E_Nonlinear": 1.0}) == ["E_Nonlinear"]
    assert rep.violations({"E_Res": 1.0}) == []
    with pytest.raises(ValidationError):
        ErrorReport(float("nan"), 0.0, None, 1, 1)


@given(st.floats(-3, -0.5), st.floats(-5, 5))
def test_fit_order_recovers_power_law(p, logc):
    x = np.array([2.0, 4.0, 8.0, 16.0])
    slope, r2 = fit_order(x, np.exp(logc) * x ** p)
    assert slope == pytest.approx(p, abs=1e-10) and r2 == pytest.approx(1.0)


def test_norm_curve_deviation():
    ref = np.ones((2, 5, 1))
    pred = ref.copy()
    pred[0, 3] = 1.1
    assert norm_curve_deviation(pred, ref, start=2) == pytest.approx(0.05)
    assert norm_curve_deviation(pred, ref, start=4) == 0.0

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from leno.errors import ValidationError
from leno.lifting import harmonic_extend, shift_problem, unshift
from leno.pde_lab import builtin_problem, generate
from leno.spectral_basis import BoundaryCondition, Domain


def test_constant_dirichlet_data_lifts_to_constant():
    lift = harmonic_extend(Domain.interval(0, 1, 64), BoundaryCondition("inhomogeneous-dirichlet", 1.0))
    assert np.allclose(lift.u_g, 1.0, atol=1e-13)


def test_linear_data_is_reproduced_in_2d():
    dom = Domain.rectangle((0, 1), (0, 2), (16, 20))
    g = lambda x, y: 1.0 + 2.0 * x - 0.5 * y
    lift = harmonic_extend(dom, BoundaryCondition("inhomogeneous-dirichlet", g))
    assert np.allclose(lift.u_g, g(*dom.coords()), atol=1e-12)


def test_neumann_flux_lift():
    dom = Domain.interval(0, 1, 32)
    # outward flux -1 at x=0 and +1 at x=1 is the slope-one profile
    lift = harmonic_extend(dom, BoundaryCondition("neumann", lambda x: np.where(x < 0.5, -1.0, 1.0)))
    assert np.allclose(np.diff(lift.u_g), 1 / 32, atol=1e-12)
    with pytest.raises(ValidationError):
        harmonic_extend(dom, BoundaryCondition("neumann", 1.0))


@given(st.floats(-5, 5), st.integers(0, 1000))
def test_shift_unshift_round_trip(g, seed):
    dom = Domain.interval(0, 1, 32)
    lift = harmonic_extend(dom, BoundaryCondition("inhomogeneous-dirichlet", g))
    u = np.random.default_rng(seed).standard_normal((3, 33))
    back = unshift(shift_problem(u, lift), lift)
    assert np.abs(back - u).max() <= 4 * np.finfo(float).eps * (abs(g) + np.abs(u).max())


def test_shifted_trajectory_has_homogeneous_boundary():
    prob = builtin_problem("kpp", {"resolution": 64,
                                   "bc": BoundaryCondition("inhomogeneous-dirichlet", 1.0)})
    lift = harmonic_extend(prob.domain, prob.bc)
    w = shift_problem(generate(prob, 2, seed=0, n_records=2, lift=lift), lift)
    assert w.meta["lifted"] and np.all(w.samples[..., [0, -1]] == 0.0)

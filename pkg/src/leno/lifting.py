"""Harmonic lifting of inhomogeneous boundary data.

Problems with boundary data ``g`` are trained on ``w = u - u_g`` where
``u_g`` is the discrete harmonic extension of ``g``; ``w`` then satisfies
homogeneous conditions and uses the homogeneous eigenbasis.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NumericalError, ValidationError
from .spectral_basis import BoundaryCondition, DiffusionSpec, assemble

HARMONIC_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class BoundaryLift:
    u_g: np.ndarray
    g: np.ndarray
    kind: str
    static: bool = True

    def __post_init__(self):
        self.u_g.setflags(write=False)


def neumann_flux_vector(domain, bc):
    """Boundary integral of the outward flux ``g`` against each nodal test function."""
    if not domain.node_grid:
        raise ValidationError("Neumann flux data is supported on interval and rectangle domains")
    g = bc.values(domain)
    if domain.ndim == 1:
        b = np.zeros(domain.grid_shape)
        b[0], b[-1] = g[0], g[-1]
        return b.ravel()
    nx, ny = domain.resolution
    hx, hy = domain.spacing
    wx = np.full(nx + 1, hx)
    wx[[0, -1]] = hx / 2
    wy = np.full(ny + 1, hy)
    wy[[0, -1]] = hy / 2
    b = np.zeros(domain.grid_shape)
    b[0, :] += g[0, :] * wy
    b[-1, :] += g[-1, :] * wy
    b[:, 0] += g[:, 0] * wx
    b[:, -1] += g[:, -1] * wx
    return b.ravel()


def harmonic_extend(domain, bc):
    """Discrete harmonic extension of the boundary data carried by ``bc``."""
    if not isinstance(bc, BoundaryCondition):
        raise ValidationError("harmonic_extend needs a BoundaryCondition with data")
    if not domain.node_grid:
        raise ValidationError("lifting is supported on interval and rectangle domains")
    op = assemble(domain, DiffusionSpec("constant", 1.0), bc.basis_kind)
    K = op.K.tocsr()
    G = domain.size
    if bc.kind in ("dirichlet", "inhomogeneous-dirichlet"):
        g = bc.values(domain).ravel()
        held = domain.boundary_mask().ravel()
        free = ~held
        u = np.where(held, g, 0.0)
        rhs = -(K[free][:, held] @ g[held])
        u[free] = spla.spsolve(K[free][:, free].tocsc(), rhs)
        kind = "dirichlet"
    else:
        b = neumann_flux_vector(domain, bc)
        total = b.sum()
        if abs(total) > 1e-10:
            raise ValidationError(f"incompatible Neumann data: boundary flux integral is {total:.3e}, not 0")
        w = op.w
        bordered = sp.bmat([[K, sp.csr_matrix(w.reshape(-1, 1))],
                            [sp.csr_matrix(w.reshape(1, -1)), None]]).tocsc()
        sol = spla.spsolve(bordered, np.concatenate([b, [0.0]]))
        u = sol[:G]
        free = np.ones(G, bool)
        kind = "neumann"
        g = bc.values(domain).ravel()
        b_check = b
    res = K @ u
    if kind == "dirichlet":
        resid = np.abs(res[free]).max() if free.any() else 0.0
    else:
        resid = np.abs(res - b_check).max()
    scale = max(1.0, np.abs(u).max()) * abs(K.diagonal()).max()
    if resid > HARMONIC_TOL * scale:
        raise NumericalError(f"harmonic extension residual {resid:.3e} above tolerance")
    return BoundaryLift(u.reshape(domain.grid_shape), g.reshape(domain.grid_shape), kind)


def _check(u, lift):
    u = np.asarray(u, dtype=float)
    gs = lift.u_g.shape
    if u.shape[u.ndim - len(gs):] != gs:
        raise ValidationError(f"field shape {u.shape} does not end with grid shape {gs}")
    return u


def shift_problem(u, lift):
    """``w = u - u_g`` for a field or a trajectory set."""
    if hasattr(u, "samples"):
        samples = shift_problem(u.samples, lift)
        return replace(u, samples=samples, meta={**u.meta, "lifted": True})
    return _check(u, lift) - lift.u_g


def unshift(w, lift):
    if hasattr(w, "samples"):
        return replace(w, samples=unshift(w.samples, lift), meta={**w.meta, "lifted": False})
    return _check(w, lift) + lift.u_g

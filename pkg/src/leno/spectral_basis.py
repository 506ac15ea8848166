"""Discrete diffusion eigenbases on intervals, rectangles and masked pixel grids.

Interval and rectangle domains are discretized on a node grid of
``resolution + 1`` points per axis with trapezoidal quadrature weights.
Masked grids are cell-centred: every ``True`` entry of the mask is one
unknown with weight equal to the cell area.

The discrete operator is always assembled as a symmetric stiffness matrix
``K`` (the energy form of ``-div(D grad u)``) together with a diagonal mass
``W``; the basis solves ``K phi = lam W phi`` and is orthonormal under ``W``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import CapacityError, NumericalError, ValidationError
from .hashing import fnv1a64

DENSE_LIMIT = 4096
SIGN_THRESHOLD = 1e-8

_BC_ALIASES = {
    "dirichlet": "dirichlet",
    "homogeneous-dirichlet": "dirichlet",
    "inhomogeneous-dirichlet": "inhomogeneous-dirichlet",
    "neumann": "neumann",
}


@dataclass(frozen=True, eq=False)
class Domain:
    kind: str
    bounds: tuple
    resolution: tuple
    mask: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("interval", "rectangle", "masked-grid"):
            raise ValidationError(f"unknown domain kind {self.kind!r}")
        bounds = tuple((float(a), float(b)) for a, b in self.bounds)
        res = tuple(int(r) for r in np.atleast_1d(self.resolution))
        ndim = {"interval": 1, "rectangle": 2}.get(self.kind, len(bounds))
        if len(bounds) != ndim or len(res) != ndim:
            raise ValidationError(f"{self.kind} needs {ndim} bounds and resolutions")
        for a, b in bounds:
            if not b - a > 0:
                raise ValidationError(f"bounds ({a}, {b}) must have positive length")
        if any(r < 4 for r in res):
            raise ValidationError(f"resolution must be >= 4 per axis, got {res}")
        mask = self.mask
        if self.kind == "masked-grid":
            if mask is None:
                raise ValidationError("masked-grid domain requires a mask")
            mask = np.array(mask, dtype=bool)
            if mask.shape != res:
                raise ValidationError(f"mask shape {mask.shape} does not match resolution {res}")
            if not mask.any():
                raise ValidationError("mask has no interior cells")
            mask.setflags(write=False)
        elif mask is not None:
            raise ValidationError("mask is only allowed for masked-grid domains")
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "resolution", res)
        object.__setattr__(self, "mask", mask)

    @classmethod
    def interval(cls, a, b, n):
        return cls("interval", ((a, b),), (n,))

    @classmethod
    def rectangle(cls, xbounds, ybounds, resolution):
        if np.isscalar(resolution):
            resolution = (resolution, resolution)
        return cls("rectangle", (xbounds, ybounds), tuple(resolution))

    @classmethod
    def masked(cls, mask, bounds):
        mask = np.asarray(mask, dtype=bool)
        return cls("masked-grid", tuple(bounds), mask.shape, mask)

    @property
    def ndim(self):
        return len(self.bounds)

    @property
    def spacing(self):
        return tuple((b - a) / n for (a, b), n in zip(self.bounds, self.resolution))

    @property
    def node_grid(self):
        return self.kind != "masked-grid"

    @property
    def grid_shape(self):
        if self.node_grid:
            return tuple(n + 1 for n in self.resolution)
        return self.resolution

    @property
    def size(self):
        return int(np.prod(self.grid_shape))

    def axes(self):
        """1D coordinate arrays: nodes for node grids, cell centres for masks."""
        out = []
        for (a, b), n, h in zip(self.bounds, self.resolution, self.spacing):
            if self.node_grid:
                out.append(a + h * np.arange(n + 1))
            else:
                out.append(a + h * (np.arange(n) + 0.5))
        return out

    def coords(self):
        return np.meshgrid(*self.axes(), indexing="ij")

    def boundary_mask(self):
        """True on grid points held by Dirichlet data (node grids) or outside the mask."""
        if not self.node_grid:
            return ~self.mask
        out = np.zeros(self.grid_shape, dtype=bool)
        for ax in range(self.ndim):
            idx = [slice(None)] * self.ndim
            idx[ax] = 0
            out[tuple(idx)] = True
            idx[ax] = -1
            out[tuple(idx)] = True
        return out

    def __eq__(self, other):
        if not isinstance(other, Domain):
            return NotImplemented
        same = (self.kind, self.bounds, self.resolution) == (other.kind, other.bounds, other.resolution)
        if same and self.mask is not None:
            same = np.array_equal(self.mask, other.mask)
        return same

    __hash__ = None

    def to_dict(self):
        out = {"kind": self.kind, "bounds": [list(b) for b in self.bounds],
               "resolution": list(self.resolution)}
        return out

    @classmethod
    def from_dict(cls, d, mask=None):
        return cls(d["kind"], tuple(tuple(b) for b in d["bounds"]), tuple(d["resolution"]), mask)


@dataclass(frozen=True)
class BoundaryCondition:
    """Boundary condition kind plus optional data ``g``.

    ``data`` may be a scalar, a full-grid array or a callable of the grid
    coordinates. For Neumann it is the outward normal flux.
    """

    kind: str = "dirichlet"
    data: object = None

    def __post_init__(self):
        if self.kind not in _BC_ALIASES:
            raise ValidationError(f"unknown boundary condition {self.kind!r}")
        kind = _BC_ALIASES[self.kind]
        object.__setattr__(self, "kind", kind)
        if kind == "inhomogeneous-dirichlet" and self.data is None:
            raise ValidationError("inhomogeneous Dirichlet condition needs boundary data")
        if kind == "dirichlet" and self.data is not None:
            raise ValidationError("homogeneous Dirichlet condition takes no boundary data")

    @property
    def basis_kind(self):
        return "neumann" if self.kind == "neumann" else "dirichlet"

    def values(self, domain):
        """Boundary data evaluated on the full grid (zero when absent)."""
        if self.data is None:
            return np.zeros(domain.grid_shape)
        if callable(self.data):
            out = np.broadcast_to(np.asarray(self.data(*domain.coords()), float), domain.grid_shape)
            return np.array(out)
        out = np.asarray(self.data, dtype=float)
        return np.array(np.broadcast_to(out, domain.grid_shape))

    def to_dict(self):
        d = {"kind": self.kind}
        if self.data is not None and np.isscalar(self.data):
            d["data"] = float(self.data)
        return d


def _as_bc(bc):
    if isinstance(bc, BoundaryCondition):
        return bc
    return BoundaryCondition(_BC_ALIASES.get(bc, bc) if bc != "inhomogeneous-dirichlet" else "dirichlet")


@dataclass(frozen=True, eq=False)
class DiffusionSpec:
    """Diffusion coefficient: a positive constant, a positive scalar field, or an SPD matrix field.

    Fields are callables of the coordinates or grid-sampled arrays (node
    values on node grids, cell values on masked grids). A constant ``d x d``
    array is accepted as a matrix field.
    """

    kind: str = "constant"
    value: object = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "scalar-field", "spd-matrix-field"):
            raise ValidationError(f"unknown diffusion kind {self.kind!r}")
        if self.kind == "constant":
            v = float(self.value)
            if not v > 0 or not math.isfinite(v):
                raise ValidationError(f"constant diffusion must be positive, got {self.value}")
            object.__setattr__(self, "value", v)
        elif self.kind == "spd-matrix-field" and not callable(self.value):
            arr = np.array(self.value, dtype=float)
            _check_spd(arr)
            arr.setflags(write=False)
            object.__setattr__(self, "value", arr)
        elif self.kind == "scalar-field" and not callable(self.value):
            arr = np.array(self.value, dtype=float)
            if not np.all(arr > 0):
                raise ValidationError("scalar diffusion field must be strictly positive")
            arr.setflags(write=False)
            object.__setattr__(self, "value", arr)

    @classmethod
    def constant(cls, value):
        return cls("constant", value)

    def is_constant_matrix(self):
        return self.kind == "spd-matrix-field" and not callable(self.value) and self.value.ndim == 2

    def separable_constants(self, ndim):
        """Per-axis constants when the operator is constant and diagonal, else None."""
        if self.kind == "constant":
            return (self.value,) * ndim
        if self.is_constant_matrix():
            m = self.value
            if m.shape == (ndim, ndim) and np.count_nonzero(m - np.diag(np.diag(m))) == 0:
                return tuple(float(x) for x in np.diag(m))
        return None

    def _scalar_at(self, points, domain):
        """Scalar diffusion evaluated at arbitrary coordinate arrays."""
        if self.kind == "constant":
            return np.full(points[0].shape, self.value)
        out = np.asarray(self.value(*points), dtype=float)
        out = np.broadcast_to(out, points[0].shape)
        if not np.all(out > 0):
            raise ValidationError("scalar diffusion field must be strictly positive")
        return out

    def _matrix_at(self, points, domain):
        d = domain.ndim
        if self.kind == "constant":
            return np.broadcast_to(self.value * np.eye(d), points[0].shape + (d, d))
        if self.kind == "scalar-field":
            s = self._sampled_scalar(points, domain)
            return s[..., None, None] * np.eye(d)
        if callable(self.value):
            out = np.asarray(self.value(*points), dtype=float)
        else:
            out = self.value
        out = np.broadcast_to(out, points[0].shape + (d, d))
        _check_spd(out)
        return out

    def _sampled_scalar(self, points, domain):
        if callable(self.value) or self.kind == "constant":
            return self._scalar_at(points, domain)
        raise ValidationError("grid-sampled fields are averaged, not evaluated pointwise")

    def component(self, domain, a, b, points, neighbours=None):
        """Entry ``D[a, b]`` at ``points``; grid-sampled arrays are averaged over ``neighbours``."""
        if not callable(self.value) and self.kind != "constant" and not self.is_constant_matrix():
            arr = np.asarray(self.value)
            if self.kind == "scalar-field":
                if arr.shape != domain.grid_shape:
                    raise ValidationError(f"diffusion field shape {arr.shape} != grid {domain.grid_shape}")
                vals = arr if a == b else np.zeros_like(arr)
            else:
                if arr.shape != domain.grid_shape + (domain.ndim,) * 2:
                    raise ValidationError("matrix diffusion field must be sampled on the grid")
                _check_spd(arr)
                vals = arr[..., a, b]
            return np.mean([vals[s] for s in neighbours], axis=0)
        if self.kind in ("constant", "scalar-field"):
            if a != b:
                return np.zeros(points[0].shape)
            return self._scalar_at(points, domain)
        return np.array(self._matrix_at(points, domain)[..., a, b])

    def max_eigenvalue(self, domain):
        """Largest diffusivity over the grid; used by explicit stability bounds."""
        if self.kind == "constant":
            return self.value
        pts = domain.coords()
        if self.kind == "scalar-field":
            if callable(self.value):
                return float(np.max(self._scalar_at(pts, domain)))
            return float(np.max(self.value))
        if callable(self.value):
            m = self._matrix_at(pts, domain)
        else:
            m = np.broadcast_to(self.value, domain.grid_shape + (domain.ndim,) * 2)
        return float(np.max(np.linalg.eigvalsh(m)))

    def to_dict(self):
        if self.kind == "constant":
            return {"kind": "constant", "value": self.value}
        if self.is_constant_matrix():
            return {"kind": self.kind, "value": self.value.tolist()}
        return {"kind": self.kind, "value": None}


def _check_spd(m):
    m = np.asarray(m, dtype=float)
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise ValidationError("matrix diffusion must be square")
    if not np.allclose(m, np.swapaxes(m, -1, -2), rtol=0, atol=1e-14 * max(1.0, np.abs(m).max())):
        raise ValidationError("matrix diffusion field is not symmetric")
    ev = np.linalg.eigvalsh(m)
    if not np.all(ev[..., 0] > 0):
        raise ValidationError(f"matrix diffusion field is not positive definite (min eigenvalue {ev[..., 0].min():.3g})")


# --------------------------------------------------------------------------- assembly


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """Stiffness ``K`` on the full grid, diagonal mass ``w`` and the free unknowns."""

    K: sp.csr_matrix
    w: np.ndarray
    free: np.ndarray
    grid_shape: tuple

    def apply(self, u):
        """``-div(D grad u)`` at every grid point; ``u`` has shape (G, ...)."""
        return (self.K @ u) / self.w.reshape((-1,) + (1,) * (np.ndim(u) - 1))


def _trapezoid(n, h):
    w = np.full(n + 1, h)
    w[0] = w[-1] = h / 2
    return w


def _add_edges(rows, cols, vals, p, q, c):
    rows += [p, q, p, q]
    cols += [p, q, q, p]
    vals += [c, c, -c, -c]


def _assemble_node_grid(domain, diffusion):
    shape = domain.grid_shape
    idx = np.arange(domain.size).reshape(shape)
    hs = domain.spacing
    ws = [_trapezoid(n, h) for n, h in zip(domain.resolution, hs)]
    axes = domain.axes()
    rows, cols, vals = [], [], []
    for ax in range(domain.ndim):
        lo = [slice(None)] * domain.ndim
        hi = [slice(None)] * domain.ndim
        lo[ax] = slice(0, -1)
        hi[ax] = slice(1, None)
        lo, hi = tuple(lo), tuple(hi)
        mids = [x if k != ax else 0.5 * (x[:-1] + x[1:]) for k, x in enumerate(axes)]
        pts = np.meshgrid(*mids, indexing="ij")
        dval = diffusion.component(domain, ax, ax, pts, neighbours=(lo, hi))
        # cross-sectional quadrature weight of each face
        cross = np.ones(pts[0].shape)
        for k in range(domain.ndim):
            if k != ax:
                sh = [1] * domain.ndim
                sh[k] = -1
                cross = cross * ws[k].reshape(sh)
        c = (dval * cross / hs[ax]).ravel()
        _add_edges(rows, cols, vals, idx[lo].ravel(), idx[hi].ravel(), c)
    if domain.ndim == 2 and diffusion.kind == "spd-matrix-field":
        cx = [0.5 * (x[:-1] + x[1:]) for x in axes]
        pts = np.meshgrid(*cx, indexing="ij")
        corners = ((slice(0, -1), slice(0, -1)), (slice(1, None), slice(0, -1)),
                   (slice(0, -1), slice(1, None)), (slice(1, None), slice(1, None)))
        d01 = diffusion.component(domain, 0, 1, pts, neighbours=corners)
        if np.any(d01 != 0):
            hx, hy = hs
            gx = np.array([-1.0, 1.0, -1.0, 1.0]) / (2 * hx)
            gy = np.array([-1.0, -1.0, 1.0, 1.0]) / (2 * hy)
            local = np.outer(gx, gy) + np.outer(gy, gx)
            nodes = [idx[c].ravel() for c in corners]
            coef = (hx * hy * d01).ravel()
            for a in range(4):
                for b in range(4):
                    rows.append(nodes[a])
                    cols.append(nodes[b])
                    vals.append(coef * local[a, b])
    K = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(domain.size, domain.size)).tocsr()
    w = ws[0]
    for k in range(1, domain.ndim):
        w = np.multiply.outer(w, ws[k])
    return K, np.asarray(w, dtype=float).ravel()


def _assemble_masked(domain, diffusion, bc_kind):
    if diffusion.kind == "spd-matrix-field" and diffusion.separable_constants(domain.ndim) is None:
        raise ValidationError("masked grids support only constant diagonal or scalar diffusion")
    nd = domain.ndim
    mask = np.pad(domain.mask, 1, constant_values=False)
    idx = np.pad(np.arange(domain.size).reshape(domain.grid_shape), 1, constant_values=-1)
    hs = domain.spacing
    cell = float(np.prod(hs))
    axes = [np.concatenate(([x[0] - h], x, [x[-1] + h])) for x, h in zip(domain.axes(), hs)]
    sampled = None
    if diffusion.kind == "scalar-field" and not callable(diffusion.value):
        if diffusion.value.shape != domain.grid_shape:
            raise ValidationError(f"diffusion field shape {diffusion.value.shape} != grid {domain.grid_shape}")
        sampled = np.pad(diffusion.value, 1, mode="edge")
    rows, cols, vals = [], [], []
    diag = np.zeros(domain.size)
    for ax in range(nd):
        lo = tuple(slice(0, -1) if k == ax else slice(None) for k in range(nd))
        hi = tuple(slice(1, None) if k == ax else slice(None) for k in range(nd))
        if sampled is not None:
            dval = 0.5 * (sampled[lo] + sampled[hi])
        else:
            mids = [x if k != ax else 0.5 * (x[:-1] + x[1:]) for k, x in enumerate(axes)]
            pts = np.meshgrid(*mids, indexing="ij")
            dval = diffusion.component(domain, ax, ax, pts)
        c = dval * cell / hs[ax] ** 2
        both = mask[lo] & mask[hi]
        _add_edges(rows, cols, vals, idx[lo][both], idx[hi][both], c[both])
        if bc_kind == "dirichlet":
            # zero extension: the outside neighbour cell holds 0
            for inside, outside in ((lo, hi), (hi, lo)):
                sel = mask[inside] & ~mask[outside]
                np.add.at(diag, idx[inside][sel], c[sel])
    K = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(domain.size, domain.size)).tocsr()
    K = (K + sp.diags(diag)).tocsr()
    return K, np.full(domain.size, cell)


def assemble(domain, diffusion=None, bc="dirichlet"):
    """Assemble the discrete operator of ``-div(D grad .)`` on ``domain``."""
    diffusion = diffusion or DiffusionSpec()
    kind = _as_bc(bc).basis_kind
    if domain.node_grid:
        K, w = _assemble_node_grid(domain, diffusion)
        if kind == "dirichlet":
            free = np.flatnonzero(~domain.boundary_mask().ravel())
        else:
            free = np.arange(domain.size)
    else:
        K, w = _assemble_masked(domain, diffusion, kind)
        free = np.flatnonzero(domain.mask.ravel())
    return DiscreteOperator(K, w, free, domain.grid_shape)


# --------------------------------------------------------------------------- eigenbasis


@dataclass(frozen=True, eq=False)
class EigenBasis:
    domain: Domain
    bc: str
    diffusion: DiffusionSpec
    lambdas: np.ndarray
    modes: np.ndarray
    weights: np.ndarray
    _flat: np.ndarray = field(default=None, repr=False)
    _wflat: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        lam = np.array(self.lambdas, dtype=float)
        modes = np.array(self.modes, dtype=float)
        weights = np.array(self.weights, dtype=float)
        if modes.shape[1:] != self.domain.grid_shape or weights.shape != self.domain.grid_shape:
            raise ValidationError("modes/weights do not match the domain grid")
        if lam.shape != (modes.shape[0],):
            raise ValidationError(f"{lam.size} eigenvalues for {modes.shape[0]} modes")
        for a in (lam, modes, weights):
            a.setflags(write=False)
        flat = modes.reshape(modes.shape[0], -1)
        wflat = flat * weights.ravel()
        wflat.setflags(write=False)
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "_flat", flat)
        object.__setattr__(self, "_wflat", wflat)

    @property
    def P(self):
        return self.lambdas.size

    def project(self, field):
        return project(self, field)

    def reconstruct(self, coeffs):
        return reconstruct(self, coeffs)

    def norm(self, field):
        """Discrete L2 norm over the trailing grid dimensions."""
        f = np.asarray(field, dtype=float)
        nd = self.domain.ndim
        return np.sqrt(np.sum(f * f * self.weights, axis=tuple(range(-nd, 0))))

    def inner(self, a, b):
        nd = self.domain.ndim
        return np.sum(np.asarray(a) * np.asarray(b) * self.weights, axis=tuple(range(-nd, 0)))

    def gram(self):
        return self._wflat @ self._flat.T

    def fingerprint(self):
        payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes()
                           for a in (self.lambdas, self.modes, self.weights))
        return f"{fnv1a64(payload):016x}"

    def truncated(self, P):
        if P > self.P:
            raise CapacityError(f"basis has {self.P} modes, {P} requested")
        return EigenBasis(self.domain, self.bc, self.diffusion, self.lambdas[:P], self.modes[:P], self.weights)

    def with_lambdas(self, lambdas):
        return EigenBasis(self.domain, self.bc, self.diffusion, lambdas, self.modes, self.weights)


def project(basis, field):
    """Coefficients ``<field, phi_i>_h`` for a field or a stack of fields."""
    f = np.asarray(field, dtype=float)
    gs = basis.domain.grid_shape
    if f.shape[f.ndim - len(gs):] != gs or f.ndim < len(gs):
        raise ValidationError(f"field shape {f.shape} does not end with grid shape {gs}")
    lead = f.shape[:f.ndim - len(gs)]
    return (f.reshape(-1, basis.domain.size) @ basis._wflat.T).reshape(lead + (basis.P,))


def reconstruct(basis, coeffs):
    c = np.asarray(coeffs, dtype=float)
    if c.ndim == 0 or c.shape[-1] != basis.P:
        raise ValidationError(f"expected {basis.P} coefficients, got shape {c.shape}")
    return (c.reshape(-1, basis.P) @ basis._flat).reshape(c.shape[:-1] + basis.domain.grid_shape)


def _fix_signs(vecs):
    """Make the first component with |v| > threshold positive (rows are modes)."""
    out = vecs.copy()
    for k in range(out.shape[0]):
        nz = np.flatnonzero(np.abs(out[k]) > SIGN_THRESHOLD)
        if nz.size and out[k, nz[0]] < 0:
            out[k] = -out[k]
    return out


def _orthonormalize(vecs, w):
    """Symmetric (Loewdin) orthonormalization of rows under the weights ``w``."""
    g = (vecs * w) @ vecs.T
    ev, U = np.linalg.eigh(g)
    if ev.min() <= 0:
        raise NumericalError("modes are linearly dependent")
    return (U @ np.diag(ev ** -0.5) @ U.T) @ vecs


def _analytic_1d(n, kind):
    j = np.arange(n + 1)
    if kind == "dirichlet":
        k = np.arange(1, n)
        vecs = np.sin(np.pi * np.outer(k, j) / n)
    else:
        k = np.arange(0, n + 1)
        vecs = np.cos(np.pi * np.outer(k, j) / n)
    mu = 4.0 * np.sin(np.pi * k / (2 * n)) ** 2
    return k, mu, vecs


def _analytic_basis(domain, kind, dconst, P):
    ks, mus, vecs = [], [], []
    for n, h, d in zip(domain.resolution, domain.spacing, dconst):
        k, mu, v = _analytic_1d(n, kind)
        ks.append(k)
        mus.append(d * mu / h ** 2)
        vecs.append(v)
    if domain.ndim == 1:
        lam = mus[0]
        order = np.lexsort((ks[0], lam))[:P]
        modes = vecs[0][order]
        lam = lam[order]
    else:
        lam2 = mus[0][:, None] + mus[1][None, :]
        ii, jj = np.meshgrid(np.arange(len(ks[0])), np.arange(len(ks[1])), indexing="ij")
        order = np.lexsort((jj.ravel(), ii.ravel(), lam2.ravel()))[:P]
        a, b = ii.ravel()[order], jj.ravel()[order]
        lam = lam2.ravel()[order]
        modes = np.einsum("pi,pj->pij", vecs[0][a], vecs[1][b]).reshape(P, -1)
    return lam, modes


def _solve_generalized(Kf, wf, P, method):
    n = wf.size
    s = 1.0 / np.sqrt(wf)
    S = sp.diags(s) @ Kf @ sp.diags(s)
    S = (0.5 * (S + S.T)).tocsr()
    if method == "dense" or (method == "auto" and n <= DENSE_LIMIT) or P >= n - 1:
        lam, V = scipy.linalg.eigh(S.toarray(), subset_by_index=[0, P - 1])
    else:
        scale = S.diagonal().mean()
        sigma = -1e-6 * scale
        v0 = np.random.default_rng(0).standard_normal(n)
        try:
            lam, V = spla.eigsh(S, k=P, sigma=sigma, which="LM", v0=v0, tol=0, maxiter=max(1000, 20 * n))
        except spla.ArpackNoConvergence as exc:
            lam, V = exc.eigenvalues, exc.eigenvectors
            res = np.linalg.norm(S @ V - V * lam, axis=0).max() if lam.size else np.inf
            raise NumericalError(f"eigen-iteration did not converge (residual {res:.3e})") from exc
        order = np.argsort(lam, kind="stable")
        lam, V = lam[order], V[:, order]
        res = np.linalg.norm(S @ V - V * lam, axis=0)
        bound = 1e-8 * max(1.0, np.abs(lam).max())
        if res.max() > bound:
            raise NumericalError(f"eigen-iteration residual {res.max():.3e} exceeds {bound:.1e}")
    return lam, (V * s[:, None]).T


def build_basis(domain, bc="dirichlet", diffusion=None, P=1, method="auto"):
    """The ``P`` smallest eigenpairs of ``-div(D grad .)`` on ``domain``.

    ``method`` is ``auto`` (analytic for constant diagonal diffusion on
    intervals/rectangles, dense eigensolver up to 4096 unknowns, shift-invert
    Lanczos above), or one of ``analytic``, ``dense``, ``iterative``.
    """
    diffusion = diffusion or DiffusionSpec()
    kind = _as_bc(bc).basis_kind
    op = assemble(domain, diffusion, kind)
    ndof = op.free.size
    if not 1 <= P <= ndof:
        raise CapacityError(f"P={P} exceeds the {ndof} interior degrees of freedom")
    dconst = diffusion.separable_constants(domain.ndim)
    if method == "analytic" or (method == "auto" and domain.node_grid and dconst is not None):
        if dconst is None or not domain.node_grid:
            raise ValidationError("analytic modes need constant diagonal diffusion on an interval or rectangle")
        lam, vecs = _analytic_basis(domain, kind, dconst, P)
        full = vecs
    else:
        Kf = op.K[op.free][:, op.free]
        lam, sub = _solve_generalized(Kf, op.w[op.free], P, method)
        full = np.zeros((P, domain.size))
        full[:, op.free] = sub
    full = _orthonormalize(full, op.w)
    full = _fix_signs(full)
    lam = np.where(np.abs(lam) < 1e-12 * max(1.0, np.abs(lam).max()), 0.0, lam)
    if lam.min() < 0:
        raise NumericalError(f"negative eigenvalue {lam.min():.3e}; diffusion discretization is indefinite")
    return EigenBasis(domain, kind, diffusion, lam, full.reshape((P,) + domain.grid_shape),
                      op.w.reshape(domain.grid_shape))


def rayleigh_residuals(basis):
    """``||K phi - lam W phi|| / ||W phi||`` per mode against a fresh assembly."""
    op = assemble(basis.domain, basis.diffusion, basis.bc)
    out = []
    for lam, phi in zip(basis.lambdas, basis._flat):
        r = (op.K @ phi - lam * op.w * phi)[op.free]
        out.append(np.linalg.norm(r) / np.linalg.norm((op.w * phi)[op.free]))
    return np.array(out)

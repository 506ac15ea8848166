"""Benchmark reaction-diffusion problems, random initial data and reference trajectories."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DivergenceError, StabilityError, ValidationError
from .spectral_basis import BoundaryCondition, DiffusionSpec, Domain, assemble, build_basis, reconstruct

CATALOG = ("kpp", "kpp-variable", "kpp-anisotropic", "allen-cahn", "gray-scott", "schrodinger", "custom")

# Time grids per problem: recording step, training horizon, evaluation horizon.
_TIME_DEFAULTS = {
    "kpp": (0.01, 10, 30),
    "kpp-variable": (0.01, 10, 30),
    "kpp-anisotropic": (0.01, 10, 30),
    "allen-cahn": (0.05, 20, 60),
    "gray-scott": (0.1, 20, 60),
    "schrodinger": (0.001, 20, 60),
    "custom": (0.01, 10, 30),
}


def _kpp(U, spatial, p):
    u = U[0]
    return (u * (1.0 - u))[None]


def _allen_cahn(U, spatial, p):
    u = U[0]
    return (p["sign"] * (u ** 3 - u))[None]


def _gray_scott(U, spatial, p):
    A, S = U[0], U[1]
    sa2 = S * A * A
    return np.stack([sa2 - (p["mu"] + p["rho"]) * A, -sa2 + p["rho"] * (1.0 - S)])


def _schrodinger(U, spatial, p):
    u = U[0]
    return (p["lam"] * u - spatial["V"] * u - p["alpha"] * u ** 3)[None]


_REACTIONS = {
    "kpp": _kpp,
    "kpp-variable": _kpp,
    "kpp-anisotropic": _kpp,
    "allen-cahn": _allen_cahn,
    "gray-scott": _gray_scott,
    "schrodinger": _schrodinger,
}


def schrodinger_potential(x, y):
    return 100.0 * (np.sin(np.pi * x / 4) ** 2 + np.sin(np.pi * y / 4) ** 2) + x ** 2 + y ** 2


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    name: str
    domain: Domain
    bc: BoundaryCondition
    diffusion: tuple
    params: dict = field(default_factory=dict)
    variables: tuple = ("u",)
    reaction: object = None

    def __post_init__(self):
        if self.name not in CATALOG:
            raise ValidationError(f"unknown problem {self.name!r}")
        if len(self.diffusion) != len(self.variables):
            raise ValidationError("need one diffusion spec per variable")
        if (len(self.variables) == 2) != (self.name == "gray-scott") and self.name != "custom":
            raise ValidationError("only gray-scott has two variables")
        if self.name == "custom" and self.reaction is None:
            raise ValidationError("custom problems need a reaction callable")

    @property
    def c(self):
        return len(self.variables)

    @property
    def tau(self):
        return self.params["tau"]

    def spatial_fields(self, flat=True):
        out = {}
        if self.name == "schrodinger":
            V = self.params.get("V")
            if V is None:
                V = schrodinger_potential(*self.domain.coords())
            V = np.asarray(V, dtype=float)
            out["V"] = V.reshape(-1, 1) if flat else V
        return out

    def reaction_flat(self, U, spatial=None):
        """Reaction terms for ``U`` of shape (c, G, B); returns the same shape."""
        spatial = self.spatial_fields() if spatial is None else spatial
        if self.reaction is not None:
            return np.asarray(self.reaction(U, spatial, self.params))
        return _REACTIONS[self.name](U, spatial, self.params)

    def F(self, fields):
        """Reaction terms for fields of shape (..., c, *grid)."""
        f = np.asarray(fields, dtype=float)
        gs = self.domain.grid_shape
        nd = len(gs)
        if f.shape[f.ndim - nd - 1:] != (self.c,) + gs:
            raise ValidationError(f"fields shape {f.shape} does not end with {(self.c,) + gs}")
        lead = f.shape[:f.ndim - nd - 1]
        U = np.moveaxis(f.reshape((-1, self.c, self.domain.size)), 0, -1)
        out = self.reaction_flat(U)
        return np.moveaxis(out, -1, 0).reshape(f.shape)

    def to_dict(self):
        params = {k: v for k, v in self.params.items() if np.isscalar(v)}
        return {"name": self.name, "domain": self.domain.to_dict(), "bc": self.bc.to_dict(),
                "diffusion": [d.to_dict() for d in self.diffusion], "params": params,
                "variables": list(self.variables)}

    @classmethod
    def from_dict(cls, d, mask=None):
        domain = Domain.from_dict(d["domain"], mask)
        overrides = dict(d.get("params", {}))
        overrides["domain"] = domain
        bcd = d.get("bc", {})
        overrides["bc"] = BoundaryCondition(bcd.get("kind", "dirichlet"), bcd.get("data"))
        if d["name"] == "custom":
            raise ValidationError("custom problems cannot be rebuilt without their reaction callable")
        return builtin_problem(d["name"], overrides)


def builtin_problem(name, overrides=None):
    """The catalogued benchmark ``name`` with its default parameters, then ``overrides``."""
    if name not in CATALOG:
        raise ValidationError(f"unknown problem {name!r}; choose from {CATALOG}")
    ov = dict(overrides or {})
    if "dt" in ov:
        ov["tau"] = ov.pop("dt")
    tau, n_train, n_eval = _TIME_DEFAULTS[name]
    params = {"tau": tau, "n_train": n_train, "n_eval": n_eval}
    variables = ("u",)
    reaction = None
    dim = int(ov.pop("dim", 1))
    resolution = ov.pop("resolution", None)
    if name in ("kpp", "kpp-variable", "custom"):
        bounds, bc, default_res = [(0.0, 1.0)], BoundaryCondition("dirichlet"), 1024
        if name == "kpp-variable":
            diff = [DiffusionSpec("scalar-field", lambda x: 2.0 + np.cos(np.pi * x))]
        else:
            diff = [DiffusionSpec("constant", 1.0)]
        if name == "custom":
            reaction = ov.pop("F", None)
    elif name == "kpp-anisotropic":
        bounds, bc, default_res = [(0.0, 1.0)] * 2, BoundaryCondition("dirichlet"), 256
        diff = [DiffusionSpec("spd-matrix-field", np.diag([1.0, 0.001]))]
    elif name == "allen-cahn":
        params.update(eps=0.1, sign=1.0)
        bounds, bc, default_res = [(0.0, 2 * math.pi)], BoundaryCondition("neumann"), 1024
        diff = None
    elif name == "gray-scott":
        params.update(D_A=2.5e-4, D_S=5e-4, rho=0.04, mu=0.065)
        bounds = [(0.0, 2 * math.pi)] * dim
        bc, default_res = BoundaryCondition("neumann"), 1024 if dim == 1 else 256
        variables = ("A", "S")
        diff = None
    else:  # schrodinger
        params.update(alpha=1600.0, lam=15.87)
        bounds, bc, default_res = [(-8.0, 8.0)] * 2, BoundaryCondition("dirichlet"), 256
        diff = [DiffusionSpec("constant", 1.0)]

    domain = ov.pop("domain", None)
    bc = ov.pop("bc", bc)
    if isinstance(bc, str):
        bc = BoundaryCondition(bc)
    diff_override = ov.pop("diffusion", None)
    for k, v in ov.items():
        if k not in params and not (name == "schrodinger" and k == "V"):
            raise ValidationError(f"unknown parameter {k!r} for problem {name!r}")
        params[k] = v
    if domain is None:
        res = resolution or default_res
        if len(bounds) == 1:
            domain = Domain.interval(*bounds[0], res if np.isscalar(res) else res[0])
        else:
            domain = Domain.rectangle(bounds[0], bounds[1], res)
    elif not isinstance(domain, Domain):
        b = tuple(domain) if np.ndim(domain) == 2 else (tuple(domain),)
        res = resolution or default_res
        if len(b) == 1:
            domain = Domain.interval(*b[0], res if np.isscalar(res) else res[0])
        else:
            domain = Domain.rectangle(b[0], b[1], res)
    if name == "allen-cahn":
        diff = [DiffusionSpec("constant", params["eps"] ** 2)]
    elif name == "gray-scott":
        diff = [DiffusionSpec("constant", params["D_A"]), DiffusionSpec("constant", params["D_S"])]
    if diff_override is not None:
        diff = list(diff_override) if isinstance(diff_override, (list, tuple)) else [diff_override]
        diff = [d if isinstance(d, DiffusionSpec) else DiffusionSpec("constant", float(d)) for d in diff]
    return ProblemSpec(name, domain, bc, tuple(diff), params, variables, reaction)


@dataclass(frozen=True, eq=False)
class TrajectorySet:
    """``samples`` has shape (M, N+1, c, *grid)."""

    problem: ProblemSpec | None
    times: np.ndarray
    samples: np.ndarray
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        s = np.asarray(self.samples, dtype=float)
        if t.ndim != 1 or np.any(np.diff(t) <= 0):
            raise ValidationError("times must be strictly increasing")
        if s.ndim < 4 or s.shape[1] != t.size or s.shape[0] < 1:
            raise ValidationError(f"samples shape {s.shape} inconsistent with {t.size} times")
        if not np.all(np.isfinite(s)):
            raise ValidationError("trajectory contains non-finite values")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "samples", s)

    @property
    def M(self):
        return self.samples.shape[0]

    @property
    def N(self):
        return self.times.size - 1

    def truncate(self, n_steps):
        return replace(self, times=self.times[:n_steps + 1], samples=self.samples[:, :n_steps + 1])

    def subset(self, index):
        return replace(self, samples=self.samples[index])


def sample_grf(basis, seed=None, count=None, variance_scale=49.0, shift=7.0, power=2.5, rng=None):
    """Gaussian random field ``sum_i xi_i sigma_i phi_i`` with ``sigma_i = sqrt(s) (lam_i + shift)^(-power/2)``.

    The basis should be the plain Laplacian one (unit diffusion) for the
    ``N(0, s(-Lap + shift)^(-power))`` measure.
    """
    rng = rng if rng is not None else np.random.default_rng(seed)
    sigma = math.sqrt(variance_scale) * (basis.lambdas + shift) ** (-power / 2)
    shape = (basis.P,) if count is None else (count, basis.P)
    xi = rng.standard_normal(shape)
    return reconstruct(basis, xi * sigma)


def grf_basis(domain, bc, max_modes=1024):
    """Unit-diffusion Laplacian basis used to draw initial data."""
    kind = bc.basis_kind if isinstance(bc, BoundaryCondition) else bc
    ndof = domain.size if kind == "neumann" and domain.node_grid else int(
        (~domain.boundary_mask()).sum())
    return build_basis(domain, kind, DiffusionSpec("constant", 1.0), min(ndof, max_modes))


def stable_dt(problem, safety=0.9):
    h = min(problem.domain.spacing)
    dmax = max(d.max_eigenvalue(problem.domain) for d in problem.diffusion)
    return safety * h * h / (2 * problem.domain.ndim * dmax)


def substeps_for(problem, tau, max_dt=None):
    """Solver steps per recording interval ``tau`` that respect the stability bound."""
    limit = stable_dt(problem)
    if max_dt is not None:
        limit = min(limit, max_dt)
    k = max(1, math.ceil(tau / limit * (1 - 1e-12)))
    return k, tau / k


def _normalize_u0(problem, u0):
    u = np.asarray(u0, dtype=float)
    nd = problem.domain.ndim
    if u.ndim == nd:
        u = u[None, None]
    elif u.ndim == nd + 1:
        u = u[:, None] if problem.c == 1 else u[None]
    if u.ndim != nd + 2 or u.shape[1:] != (problem.c,) + problem.domain.grid_shape:
        raise ValidationError(f"initial data shape {np.shape(u0)} incompatible with problem grid")
    return u


SCHEMES = ("explicit", "imex")


def evolve_reference(problem, u0, dt, n_steps, record_every=1, force=False, t0=0.0, scheme="explicit"):
    """Euler time stepping of ``u_t = div(D grad u) + F(u)``, recording every ``record_every`` steps.

    ``explicit`` steps both terms forward and is stability-checked.
    ``imex`` keeps the reaction explicit and solves the diffusion implicitly,
    ``(W + dt K) u^n = W (u^{n-1} + dt F(u^{n-1}))``, which is stable for any
    ``dt`` and makes the backward-difference residual of the projected data
    equal the projected reaction term.
    """
    if scheme not in SCHEMES:
        raise ValidationError(f"scheme must be one of {SCHEMES}")
    limit = stable_dt(problem)
    if scheme == "explicit" and dt > limit * (1 + 1e-12) and not force:
        raise StabilityError(f"dt={dt:.3g} violates the explicit stability bound; use dt <= {limit:.3g}",
                             suggested_dt=limit)
    if n_steps % record_every:
        raise ValidationError("n_steps must be a multiple of record_every")
    u = _normalize_u0(problem, u0)
    M, c = u.shape[:2]
    dom = problem.domain
    G = dom.size
    ops = [assemble(dom, d, problem.bc) for d in problem.diffusion]
    held = dom.boundary_mask().ravel() if problem.bc.basis_kind == "dirichlet" else np.zeros(G, bool)
    free = ~held
    U = np.ascontiguousarray(np.moveaxis(u.reshape(M, c, G), 0, -1))  # (c, G, M)
    if problem.bc.kind == "inhomogeneous-dirichlet":
        g = problem.bc.values(dom).ravel()
        U[:, held, :] = g[held, None]
    elif held.any():
        U[:, held, :] = 0.0
    source = np.zeros((c, G, 1))
    if problem.bc.kind == "neumann" and problem.bc.data is not None:
        from .lifting import neumann_flux_vector

        flux = neumann_flux_vector(dom, problem.bc)
        for v, (op, d) in enumerate(zip(ops, problem.diffusion)):
            if d.kind != "constant":
                raise ValidationError("Neumann flux data requires constant diffusion")
            source[v, :, 0] = d.value * flux / op.w
    spatial = problem.spatial_fields()
    n_rec = n_steps // record_every
    out = np.empty((n_rec + 1, c, G, M))
    out[0] = U
    check_every = min(record_every, 500)
    if scheme == "imex":
        fused = _imex_stepper(problem, ops, source, spatial, dt)
    else:
        fused = _fused_stepper(problem, ops, held, source[:, :, 0], spatial, dt) if problem.reaction is None else None
    buf = np.empty_like(U)
    for step in range(1, n_steps + 1):
        if fused is not None:
            fused(U, buf)
            U, buf = buf, U
        else:
            rhs = problem.reaction_flat(U, spatial) + source
            for v, op in enumerate(ops):
                rhs[v] -= op.apply(U[v])
            rhs[:, held, :] = 0.0
            U = U + dt * rhs
        if step % check_every == 0 or step % record_every == 0:
            if not np.all(np.isfinite(U)):
                raise DivergenceError(f"reference solution became non-finite at step {step}", step=step)
        if step % record_every == 0:
            out[step // record_every] = U
    samples = np.moveaxis(out, -1, 0).reshape((M, n_rec + 1, c) + dom.grid_shape)
    times = t0 + dt * record_every * np.arange(n_rec + 1)
    return TrajectorySet(problem, times, samples, meta={"dt": dt, "record_every": record_every, "scheme": scheme})


def _imex_stepper(problem, ops, source, spatial, dt):
    """Semi-implicit step with one sparse factorization per variable, shared by all samples."""
    free = ops[0].free
    held = np.ones(problem.domain.size, bool)
    held[free] = False
    solvers = []
    for op in ops:
        K = op.K.tocsr()
        A = (sp.diags(op.w) + dt * K).tocsr()[free][:, free].tocsc()
        solvers.append((spla.splu(A), K[free][:, held], op.w[free, None]))

    def step(U, out):
        rhs = U + dt * (problem.reaction_flat(U, spatial) + source)
        for v, (lu, K_fh, wf) in enumerate(solvers):
            b = wf * rhs[v, free]
            if K_fh.shape[1]:
                b -= dt * (K_fh @ U[v, held])
            out[v, free] = lu.solve(b)
            out[v, held] = U[v, held]

    return step


def _fused_stepper(problem, ops, held, source, spatial, dt):
    """Compiled single-step update sharing one sparsity pattern across variables."""
    from . import _kernels

    Ls = [sp.diags(1.0 / op.w) @ op.K for op in ops]
    pattern = sum(abs(L) for L in Ls).tocsr()
    pattern.sort_indices()
    rows = np.repeat(np.arange(pattern.shape[0]), np.diff(pattern.indptr))
    data = np.stack([np.asarray(L.tocsr()[rows, pattern.indices]).ravel() for L in Ls])
    p = problem.params
    code = _kernels.CODES[problem.name]
    p0, p1 = {
        _kernels.ALLEN_CAHN: (p.get("sign", 1.0), 0.0),
        _kernels.GRAY_SCOTT: (p.get("mu", 0.0), p.get("rho", 0.0)),
        _kernels.SCHRODINGER: (p.get("lam", 0.0), p.get("alpha", 0.0)),
    }.get(code, (0.0, 0.0))
    V = spatial["V"].ravel() if "V" in spatial else np.zeros(1)
    indptr = pattern.indptr.astype(np.int64)
    indices = pattern.indices.astype(np.int64)
    source = np.ascontiguousarray(source)

    def step(U, out):
        _kernels.euler_step(U, out, indptr, indices, data, held, source, dt, code, float(p0), float(p1), V)

    return step


def initial_conditions(problem, M, seed=None, grf_modes=1024, lift=None, rng=None):
    """``M`` GRF draws per variable, shaped (M, c, *grid); lifted for inhomogeneous Dirichlet data."""
    rng = rng if rng is not None else np.random.default_rng(seed)
    basis = grf_basis(problem.domain, problem.bc, grf_modes)
    u0 = sample_grf(basis, count=M * problem.c, rng=rng)
    u0 = u0.reshape((M, problem.c) + problem.domain.grid_shape)
    if problem.bc.kind == "inhomogeneous-dirichlet":
        if lift is None:
            from .lifting import harmonic_extend

            lift = harmonic_extend(problem.domain, problem.bc)
        u0 = u0 + lift.u_g
    return u0


def generate(problem, M, seed, n_records=None, tau=None, max_dt=None, grf_modes=1024, lift=None, u0=None,
             dt=None, force=False, scheme="imex"):
    """Draw ``M`` GRF initial conditions and evolve them to ``n_records`` recordings spaced ``tau``.

    For inhomogeneous Dirichlet data the harmonic extension ``lift`` (or a
    freshly computed one) is added to the homogeneous random field. The
    ``imex`` scheme steps once per recording unless ``max_dt`` or ``dt`` asks
    for substeps; the ``explicit`` scheme substeps below the stability limit.
    An explicit ``dt`` is rounded to divide ``tau`` and, for the explicit
    scheme, stability-checked unless ``force`` is set.
    """
    tau = problem.tau if tau is None else tau
    n_records = problem.params["n_eval"] if n_records is None else n_records
    if u0 is None:
        u0 = initial_conditions(problem, M, seed, grf_modes, lift)
    if dt is not None:
        k = max(1, round(tau / dt))
    elif scheme == "explicit":
        k, _ = substeps_for(problem, tau, max_dt)
    else:
        k = 1 if max_dt is None else max(1, math.ceil(tau / max_dt * (1 - 1e-12)))
    traj = evolve_reference(problem, u0, tau / k, n_records * k, record_every=k, force=force, scheme=scheme)
    return replace(traj, seed=seed, meta={**traj.meta, "tau": tau, "substeps": k})

"""Spectral coefficients and discrete PDE residuals of trajectory data."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ValidationError

RESIDUAL_TOL = 1e-12


def compute_residuals(betas, times, lambdas):
    """``R^n = (beta^n - beta^{n-1}) / (t_n - t_{n-1}) + lambdas * beta^n`` for n = 1..N."""
    b = np.asarray(betas, dtype=float)
    t = np.asarray(times, dtype=float)
    dt = np.diff(t)
    if np.any(dt <= 0):
        raise ValidationError("time grid must have positive increments")
    return (b[:, 1:] - b[:, :-1]) / dt[None, :, None] + np.asarray(lambdas)[None, None, :] * b[:, 1:]


@dataclass(frozen=True, eq=False)
class CoeffDataset:
    """Coefficients ``betas`` (M, N+1, cP) and residuals (M, N, cP).

    Multi-variable coefficients are stored variable-major: all ``P`` modes of
    the first variable, then the second. ``lambdas`` holds the diagonal of the
    linear operator in the same layout. ``lift`` is the static boundary lift
    subtracted before projection, if any.
    """

    times: np.ndarray
    betas: np.ndarray
    residuals: np.ndarray
    lambdas: np.ndarray
    c: int = 1
    basis_ref: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    lift: np.ndarray | None = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        b = np.asarray(self.betas, dtype=float)
        r = np.asarray(self.residuals, dtype=float)
        lam = np.asarray(self.lambdas, dtype=float)
        if b.ndim != 3 or b.shape[1] != t.size or t.size < 2:
            raise ValidationError(f"betas shape {b.shape} does not match {t.size} times")
        if r.shape != (b.shape[0], b.shape[1] - 1, b.shape[2]):
            raise ValidationError(f"residuals shape {r.shape} inconsistent with betas {b.shape}")
        if lam.shape != (b.shape[2],) or b.shape[2] % self.c:
            raise ValidationError("lambdas must hold one value per coefficient")
        if np.any(np.diff(t) <= 0):
            raise ValidationError("time grid must have positive increments")
        if not (np.all(np.isfinite(b)) and np.all(np.isfinite(r))):
            raise ValidationError("dataset contains non-finite values")
        for name, a in (("times", t), ("betas", b), ("residuals", r), ("lambdas", lam)):
            object.__setattr__(self, name, a)

    @property
    def M(self):
        return self.betas.shape[0]

    @property
    def N(self):
        return self.times.size - 1

    @property
    def P(self):
        return self.betas.shape[2] // self.c

    @property
    def width(self):
        return self.betas.shape[2]

    def taus(self):
        return np.diff(self.times)

    def residual_error(self):
        """Max deviation of the stored residuals from their defining identity."""
        return float(np.max(np.abs(compute_residuals(self.betas, self.times, self.lambdas) - self.residuals)))

    def check(self, tol=RESIDUAL_TOL):
        err = self.residual_error()
        scale = max(1.0, float(np.max(np.abs(self.residuals))))
        if err > tol * scale:
            raise ValidationError(f"stored residuals deviate from the recomputed ones by {err:.3e}")
        return self

    def truncate(self, n_steps):
        if not 1 <= n_steps <= self.N:
            raise ValidationError(f"cannot truncate {self.N} steps to {n_steps}")
        return replace(self, times=self.times[:n_steps + 1], betas=self.betas[:, :n_steps + 1],
                       residuals=self.residuals[:, :n_steps])

    def subset(self, index):
        return replace(self, betas=self.betas[index], residuals=self.residuals[index])

    def variable(self, v):
        """Column slice of variable ``v`` in the coefficient layout."""
        return slice(v * self.P, (v + 1) * self.P)


def _bases_for(bases, c):
    if not isinstance(bases, (list, tuple)):
        bases = [bases] * c
    if len(bases) != c:
        raise ValidationError(f"need {c} bases, got {len(bases)}")
    P = bases[0].P
    for b in bases:
        if b.P != P or b.domain != bases[0].domain:
            raise ValidationError("all variables must share the domain and mode count")
    return list(bases)


def project_trajectories(traj, bases, lift=None):
    """Project every sample and variable of ``traj`` and form the residuals.

    ``bases`` is one basis or one per variable; their eigenvalues carry the
    diffusion and so enter the residual directly. With ``lift`` the data is
    shifted by the harmonic extension first.
    """
    c = traj.samples.shape[2]
    bases = _bases_for(bases, c)
    dom = bases[0].domain
    if traj.samples.shape[3:] != dom.grid_shape:
        raise ValidationError(f"trajectory grid {traj.samples.shape[3:]} does not match basis grid {dom.grid_shape}")
    if traj.problem is not None and traj.problem.domain != dom:
        raise ValidationError("trajectory domain differs from the basis domain")
    if traj.problem is not None and traj.problem.bc.basis_kind != bases[0].bc:
        raise ValidationError(f"{traj.problem.bc.basis_kind} data cannot use a {bases[0].bc} basis")
    samples = traj.samples
    u_g = None
    if lift is not None:
        from .lifting import shift_problem

        samples = shift_problem(samples, lift)
        u_g = np.array(lift.u_g)
    betas = np.concatenate([b.project(samples[:, :, v]) for v, b in enumerate(bases)], axis=-1)
    lambdas = np.concatenate([b.lambdas for b in bases])
    residuals = compute_residuals(betas, traj.times, lambdas)
    prov = {"problem": traj.problem.name if traj.problem is not None else None,
            "seed": traj.seed, "grid": list(dom.grid_shape), "lifted": lift is not None,
            "tau": traj.meta.get("tau")}
    if traj.problem is not None:
        prov["spec"] = traj.problem.to_dict()
    ref = {"fingerprints": [b.fingerprint() for b in bases], "P": bases[0].P, "bc": bases[0].bc,
           "domain": dom.to_dict()}
    return CoeffDataset(traj.times, betas, residuals, lambdas, c, ref, prov, u_g)


def check_basis(dataset, bases):
    """Refuse a basis that is not the one the dataset was projected with."""
    bases = _bases_for(bases, dataset.c)
    want = dataset.basis_ref.get("fingerprints")
    got = [b.fingerprint() for b in bases]
    if want is not None and want != got:
        raise ValidationError("basis fingerprint does not match the dataset")
    if bases[0].P != dataset.P:
        raise ValidationError(f"basis has {bases[0].P} modes, dataset {dataset.P}")
    return bases

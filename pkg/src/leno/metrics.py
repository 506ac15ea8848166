"""Relative error metrics of learned dynamics and convergence-order fits."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .leno import project_fields, reconstruct_fields, rollout
from .neuralnet import forward

_FLOOR = 1e-300


@dataclass
class ErrorReport:
    E_L2: float
    E_Res: float
    E_Nonlinear: float | None
    M: int
    N: int
    per_variable: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("E_L2", "E_Res", "E_Nonlinear"):
            v = getattr(self, name)
            if v is not None and not (math.isfinite(v) and v >= 0):
                raise ValidationError(f"{name} = {v} is not a finite non-negative number")

    def as_dict(self):
        return {"E_L2": self.E_L2, "E_Res": self.E_Res, "E_Nonlinear": self.E_Nonlinear,
                "M": self.M, "N": self.N}

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["variable", "E_L2", "E_Res", "E_Nonlinear", "M", "N"])
        rows = [("all", self)] + [(k, v) for k, v in self.per_variable.items()]
        for name, r in rows:
            nl = "n/a" if r.E_Nonlinear is None else repr(r.E_Nonlinear)
            w.writerow([name, repr(r.E_L2), repr(r.E_Res), nl, r.M, r.N])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def table(self):
        nl = "n/a" if self.E_Nonlinear is None else f"{self.E_Nonlinear:.3e}"
        lines = [f"{'':>10} {'E_L2':>10} {'E_Res':>10} {'E_Nonlin':>10}",
                 f"{'all':>10} {self.E_L2:10.3e} {self.E_Res:10.3e} {nl:>10}"]
        for k, r in self.per_variable.items():
            nl = "n/a" if r.E_Nonlinear is None else f"{r.E_Nonlinear:.3e}"
            lines.append(f"{k:>10} {r.E_L2:10.3e} {r.E_Res:10.3e} {nl:>10}")
        return "\n".join(lines)

    def violations(self, thresholds):
        """Names of metrics above their thresholds; a missing metric counts as a violation."""
        bad = []
        for name, limit in (thresholds or {}).items():
            value = getattr(self, name, None)
            if value is None or value > limit:
                bad.append(name)
        return bad


def _rel(num, den, weights=None, axes=-1):
    if weights is None:
        a = np.sqrt(np.sum(num * num, axis=axes))
        b = np.sqrt(np.sum(den * den, axis=axes))
    else:
        a = np.sqrt(np.sum(num * num * weights, axis=axes))
        b = np.sqrt(np.sum(den * den * weights, axis=axes))
    return a / np.maximum(b, _FLOOR)


def _as_list(bases, c):
    bases = list(bases) if isinstance(bases, (list, tuple)) else [bases] * c
    if len(bases) != c:
        raise ValidationError(f"need {c} bases, got {len(bases)}")
    return bases


def evaluate(net, dataset, bases, reference_F=None, traj=None, lift=None, alpha=1.0, dscale=1.0):
    """E_L2, E_Res and (with ``reference_F``) E_Nonlinear averaged over samples and steps 1..N.

    ``traj`` supplies the reference fields on the grid; without it they are
    reconstructed from the stored coefficients. ``reference_F`` maps fields
    (..., c, *grid) to the true reaction term. For lifted datasets ``lift``
    restores the original unknown before the field metrics are taken.
    ``alpha`` and ``dscale`` rescale time and diffusion as in transfer.
    """
    c = dataset.c
    bases = _as_list(bases, c)
    if bases[0].P != dataset.P:
        raise ValidationError(f"basis has {bases[0].P} modes, dataset {dataset.P}")
    if net.sizes[0] != dataset.width:
        raise ValidationError("network and dataset widths differ")
    P, N, M = dataset.P, dataset.N, dataset.M
    beta_t = rollout(net, dataset.betas[:, 0], dataset.times, dataset.lambdas, diffusion=dscale, alpha=alpha)
    nd = bases[0].domain.ndim
    w = bases[0].weights
    gaxes = tuple(range(-nd, 0))
    if traj is not None:
        u_ref = np.asarray(traj.samples[:, :N + 1], dtype=float)
        if u_ref.shape[:3] != (M, N + 1, c):
            raise ValidationError(f"trajectory shape {traj.samples.shape} does not match the dataset")
    else:
        u_ref = reconstruct_fields(bases, dataset.betas)
        if lift is not None:
            u_ref = u_ref + lift.u_g
    u_til = reconstruct_fields(bases, beta_t)
    if lift is not None:
        u_til = u_til + lift.u_g
    el2 = _rel(u_til[:, 1:] - u_ref[:, 1:], u_ref[:, 1:], w, gaxes)  # (M, N, c)
    el2_all = np.sqrt(np.sum((u_til[:, 1:] - u_ref[:, 1:]) ** 2 * w, axis=(-nd - 1,) + gaxes)) / np.maximum(
        np.sqrt(np.sum(u_ref[:, 1:] ** 2 * w, axis=(-nd - 1,) + gaxes)), _FLOOR)

    G_t = forward(net, beta_t[:, :-1]).astype(float)  # G on rollout states n-1
    R = dataset.residuals
    if alpha != 1.0 or dscale != 1.0:
        b = dataset.betas
        R = alpha * (b[:, 1:] - b[:, :-1]) / dataset.taus()[None, :, None] + dscale * dataset.lambdas * b[:, 1:]
    d = G_t - R
    eres_all = _rel(d, R)
    eres = np.stack([_rel(d[..., v * P:(v + 1) * P], R[..., v * P:(v + 1) * P]) for v in range(c)], axis=-1)

    enl = enl_all = None
    if reference_F is not None:
        Fu = np.asarray(reference_F(u_ref[:, 1:]), dtype=float)
        G_n = forward(net, beta_t[:, 1:]).astype(float)
        Nu = reconstruct_fields(bases, G_n)
        diff = Nu - Fu
        enl = _rel(diff, Fu, w, gaxes)
        enl_all = np.sqrt(np.sum(diff ** 2 * w, axis=(-nd - 1,) + gaxes)) / np.maximum(
            np.sqrt(np.sum(Fu ** 2 * w, axis=(-nd - 1,) + gaxes)), _FLOOR)

    per = {}
    if c > 1:
        names = traj.problem.variables if traj is not None and traj.problem is not None else [f"u{v}" for v in range(c)]
        for v, name in enumerate(names):
            per[name] = ErrorReport(float(el2[..., v].mean()), float(eres[..., v].mean()),
                                    None if enl is None else float(enl[..., v].mean()), M, N)
    return ErrorReport(float(el2_all.mean()), float(eres_all.mean()),
                       None if enl_all is None else float(enl_all.mean()), M, N, per)


def norm_curve_deviation(pred_norms, ref_norms, start=0):
    """Per-sample maximum relative deviation of the L2-norm curves, averaged over samples."""
    p = np.asarray(pred_norms, dtype=float)[:, start:]
    r = np.asarray(ref_norms, dtype=float)[:, start:]
    if p.shape != r.shape:
        raise ValidationError(f"norm curves of shapes {p.shape} and {r.shape} differ")
    rel = np.abs(p - r) / np.maximum(np.abs(r), _FLOOR)
    return float(np.mean(rel.reshape(rel.shape[0], -1).max(axis=1)))


def fit_order(xs, errs):
    """Least-squares slope of log(err) against log(x); returns ``(slope, r2)``."""
    x = np.asarray(xs, dtype=float)
    e = np.asarray(errs, dtype=float)
    if x.shape != e.shape or x.ndim != 1 or x.size < 3:
        raise ValidationError("fit_order needs at least three matching points")
    if np.any(x <= 0) or np.any(e <= 0) or not np.all(np.isfinite(e)):
        raise ValidationError("fit_order needs positive finite values")
    lx, le = np.log(x), np.log(e)
    if np.ptp(lx) == 0:
        raise ValidationError("abscissae are all equal")
    A = np.stack([lx, np.ones_like(lx)], axis=1)
    (slope, icpt), *_ = np.linalg.lstsq(A, le, rcond=None)
    resid = le - (slope * lx + icpt)
    ss = np.sum((le - le.mean()) ** 2)
    r2 = 1.0 if ss == 0 else float(1 - np.sum(resid ** 2) / ss)
    return float(slope), r2

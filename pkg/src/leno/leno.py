"""Semi-implicit coefficient rollout, the combined data/residual loss and training."""

from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .errors import DivergenceError, NumericalError, ValidationError
from .neuralnet import AdamState, adam_step, forward, forward_tensor

MODES = ("combined", "data-only", "residual-only")


def _layout(values, c, P):
    """Broadcast a scalar or per-variable value to the variable-major coefficient layout."""
    v = np.asarray(values, dtype=float)
    if v.ndim == 0:
        return np.full(c * P, float(v))
    if v.shape == (c,):
        return np.repeat(v, P)
    if v.shape == (c * P,):
        return v
    raise ValidationError(f"cannot lay out values of shape {v.shape} over {c} variables x {P} modes")


def _time_grid(times, n_steps=None):
    t = np.asarray(times, dtype=float)
    if t.ndim == 0:
        if n_steps is None:
            raise ValidationError("a scalar step size needs a step count")
        return np.full(n_steps, float(t))
    taus = np.diff(t)
    if np.any(taus <= 0):
        raise ValidationError("time grid must be strictly increasing")
    return taus


def rollout(net, beta0, times, lambdas, diffusion=1.0, alpha=1.0, n_steps=None, check=True):
    """``beta^n = (beta^{n-1} + k G(beta^{n-1})) / (1 + k D lambda)`` with ``k = tau_n / alpha``.

    ``times`` is the time grid t_0..t_N, or a scalar step used ``n_steps``
    times. Returns an array (..., N+1, cP) whose first slice is ``beta0``.
    """
    b = np.asarray(beta0, dtype=float)
    if b.shape[-1] != net.sizes[0]:
        raise ValidationError(f"beta0 width {b.shape[-1]} != network input {net.sizes[0]}")
    taus = _time_grid(times, n_steps)
    width = b.shape[-1]
    c = np.size(diffusion) if np.ndim(diffusion) == 1 and np.size(diffusion) < width else 1
    lam = np.asarray(lambdas, dtype=float) * _layout(diffusion, c, width // c)
    if np.any(lam < 0) or not alpha > 0:
        raise ValidationError("rollout needs non-negative eigenvalues and a positive time scale")
    out = [b]
    for n, tau in enumerate(taus, start=1):
        k = tau / alpha
        g = forward(net, b).astype(float)
        nxt = (b + k * g) / (1 + k * lam)
        if not np.all(np.isfinite(nxt)):
            raise DivergenceError(f"rollout became non-finite at step {n}", step=n)
        if check:
            lhs = np.linalg.norm(nxt, axis=-1)
            rhs = np.linalg.norm(b, axis=-1) + k * np.linalg.norm(g, axis=-1)
            if np.any(lhs > rhs * (1 + 1e-10) + 1e-300):
                raise NumericalError(f"rollout step {n} expanded the linear part; check the eigenvalue signs")
        out.append(nxt)
        b = nxt
    return np.stack(out, axis=-2)


@dataclass
class TrainConfig:
    epochs: int = 5000
    mode: str = "combined"
    eps: float = 1e-12
    seed: int = 0
    lr: float = 1e-3
    lr_decay: float = 0.25
    lr_interval: int = 1000
    horizon: int | None = None
    dtype: str = "float64"
    checkpoint_every: int = 0
    checkpoint_path: str | None = None
    history_path: str | None = None
    log_every: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError("epochs must be at least 1")
        if not self.eps > 0:
            raise ValidationError("eps must be positive")
        if self.mode not in MODES:
            raise ValidationError(f"loss mode must be one of {MODES}")
        if self.dtype not in ("float32", "float64"):
            raise ValidationError("dtype must be float32 or float64")

    def to_dict(self):
        return asdict(self)


@dataclass
class LossParts:
    total: ad.Tensor
    data: float
    residual: float


def _floored_norms(x, eps):
    return np.maximum(np.linalg.norm(x, axis=-1), eps)


def loss_graph(net, params, dataset, mode="combined", eps=1e-12, log_alpha=None, log_dscale=None):
    """Recorded combined loss on ``dataset``.

    ``log_alpha``/``log_dscale`` are optional scalar tensors for the time
    scale and a multiplicative diffusion factor.
    """
    if mode not in MODES:
        raise ValidationError(f"loss mode must be one of {MODES}")
    M, N = dataset.M, dataset.N
    if M == 0 or N == 0:
        raise ValidationError("empty dataset")
    dt = net.dtype
    betas = dataset.betas.astype(dt)
    lam = dataset.lambdas.astype(dt)
    taus = dataset.taus()
    scale = 1.0 / (M * N)
    inv_alpha = ad.exp(-log_alpha) if log_alpha is not None else None
    dscale = ad.exp(log_dscale) if log_dscale is not None else None
    zero = ad.Tensor(np.zeros((), dt))
    LD = LR = zero
    if mode != "residual-only":
        b = ad.Tensor(betas[:, 0])
        acc = zero
        for n in range(1, N + 1):
            k = taus[n - 1] if inv_alpha is None else inv_alpha * taus[n - 1]
            klam = k * lam if dscale is None else k * dscale * lam
            b = (b + k * forward_tensor(net, b, params)) / (1.0 + klam)
            target = betas[:, n]
            acc = acc + ad.total(ad.row_norms(b - target) * (1.0 / _floored_norms(target, eps)).astype(dt))
        LD = acc * scale
    if mode != "data-only":
        X = betas[:, :-1].reshape(-1, betas.shape[2])
        G = forward_tensor(net, X, params)
        if inv_alpha is None and dscale is None:
            R = dataset.residuals.reshape(-1, betas.shape[2]).astype(dt)
            denom = (1.0 / _floored_norms(R, eps)).astype(dt)
            LR = ad.total(ad.row_norms(G - R) * denom) * scale
        else:
            diffq = ((betas[:, 1:] - betas[:, :-1]) / taus[None, :, None].astype(dt)).reshape(X.shape)
            lamb = (betas[:, 1:] * lam).reshape(X.shape)
            alpha = ad.exp(log_alpha) if log_alpha is not None else 1.0
            R = alpha * ad.Tensor(diffq) + (dscale if dscale is not None else 1.0) * ad.Tensor(lamb)
            LR = ad.total(ad.row_norms(G - R) / ad.clamp_min(ad.row_norms(R), eps)) * scale
    return LossParts(LD + LR, float(LD.data), float(LR.data))


def loss(net, dataset, mode="combined", eps=1e-12):
    """Loss value without gradients: (total, data term, residual term)."""
    parts = loss_graph(net, [ad.Tensor(p) for p in net.parameters()], dataset, mode, eps)
    return float(parts.total.data), parts.data, parts.residual


def write_history(history, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "L", "L_D", "L_R", "lr", "wall_time"])
        for h in history:
            w.writerow([h["epoch"], repr(h["L"]), repr(h["L_D"]), repr(h["L_R"]), repr(h["lr"]),
                        f"{h['wall_time']:.3f}"])


def train(net, dataset, config=None):
    """Full-batch Adam on the chosen loss; returns ``(net, history)``.

    ``net`` is trained in place, cast to ``config.dtype``.
    """
    config = config or TrainConfig()
    if config.horizon is not None:
        dataset = dataset.truncate(config.horizon)
    if net.sizes[0] != dataset.width or net.sizes[-1] != dataset.width:
        raise ValidationError(f"network {net.sizes} does not map {dataset.width} coefficients")
    dtype = np.dtype(config.dtype)
    if net.dtype != dtype:
        cast = net.astype(dtype)
        net.weights, net.biases = cast.weights, cast.biases
    params = net.parameters()
    mask = net.trainable_mask()
    state = AdamState.for_params(params, lr0=config.lr, decay=config.lr_decay, interval=config.lr_interval)
    history = []
    t0 = time.perf_counter()
    for epoch in range(config.epochs):
        tensors = [ad.Tensor(p, requires_grad=t) for p, t in zip(params, mask)]
        parts = loss_graph(net, tensors, dataset, config.mode, config.eps)
        L = float(parts.total.data)
        row = {"epoch": epoch, "L": L, "L_D": parts.data, "L_R": parts.residual,
               "lr": state.lr(epoch), "wall_time": time.perf_counter() - t0}
        history.append(row)
        if not np.isfinite(L):
            raise DivergenceError(f"loss became non-finite at epoch {epoch}", step=epoch, history=history)
        parts.total.backward()
        adam_step(params, [t.grad if t.requires_grad else None for t in tensors], state, epoch)
        if config.log_every and epoch % config.log_every == 0:
            print(f"epoch {epoch:5d}  L={L:.4e}  L_D={parts.data:.4e}  L_R={parts.residual:.4e}", flush=True)
        if config.checkpoint_every and config.checkpoint_path and (epoch + 1) % config.checkpoint_every == 0:
            from .container import save

            save(net, config.checkpoint_path, meta={"epoch": epoch + 1, "train": config.to_dict()}, optimizer=state)
    net.optimizer = state
    if config.history_path:
        write_history(history, config.history_path)
    return net, history


def learned_operator(net, bases):
    """The field map ``u -> sum_i G_i(project(u)) phi_i``.

    Fields are (..., c, *grid); single-variable fields may omit the variable axis.
    """
    bases = list(bases) if isinstance(bases, (list, tuple)) else [bases]
    c = len(bases)
    if net.sizes[0] != c * bases[0].P:
        raise ValidationError(f"network expects {net.sizes[0]} coefficients, bases give {c * bases[0].P}")
    gs = bases[0].domain.grid_shape
    nd = len(gs)

    def N(u):
        u = np.asarray(u, dtype=float)
        bare = c == 1 and (u.ndim == nd or u.shape[-nd - 1] != 1)
        if bare:
            u = np.expand_dims(u, -nd - 1)
        if u.shape[u.ndim - nd - 1:] != (c,) + gs:
            raise ValidationError(f"field shape {u.shape} does not match {c} variables on grid {gs}")
        out = reconstruct_fields(bases, forward(net, project_fields(bases, u)).astype(float))
        return np.take(out, 0, axis=-nd - 1) if bare else out

    return N


def project_fields(bases, u):
    """Variable-major coefficients of fields (..., c, *grid)."""
    nd = bases[0].domain.ndim
    return np.concatenate([b.project(np.take(u, v, axis=-nd - 1)) for v, b in enumerate(bases)], axis=-1)


def reconstruct_fields(bases, beta):
    nd = bases[0].domain.ndim
    P = bases[0].P
    return np.stack([b.reconstruct(beta[..., v * P:(v + 1) * P]) for v, b in enumerate(bases)], axis=-nd - 1)


def predict(net, bases, u0, horizon, dt, problem=None, lift=None, alpha=1.0, t0=0.0):
    """Roll the learned dynamics forward ``horizon`` steps of size ``dt`` from ``u0``.

    ``u0`` is (c, *grid) or (M, c, *grid); a single-variable field may omit
    the variable axis. Returns a TrajectorySet whose ``meta['norms']`` holds
    the L2 norm series (M, horizon+1, c).
    """
    from .pde_lab import TrajectorySet
    from .lifting import shift_problem, unshift

    bases = list(bases) if isinstance(bases, (list, tuple)) else [bases]
    c = len(bases)
    gs = bases[0].domain.grid_shape
    u = np.asarray(u0, dtype=float)
    if u.ndim == len(gs):
        u = u[None]
    if u.ndim == len(gs) + 1:
        u = u[None] if c > 1 else u[:, None]
    if u.shape[1:] != (c,) + gs:
        raise ValidationError(f"initial field shape {np.shape(u0)} incompatible with {c} variables on {gs}")
    if horizon < 0:
        raise ValidationError("horizon must be non-negative")
    w = shift_problem(u, lift) if lift is not None else u
    beta0 = project_fields(bases, w)
    lam = np.concatenate([b.lambdas for b in bases])
    if horizon == 0:
        fields = u[:, None]
    else:
        betas = rollout(net, beta0, dt, lam, alpha=alpha, n_steps=horizon)
        fields = reconstruct_fields(bases, betas)
        fields[:, 0] = w
        if lift is not None:
            fields = unshift(fields, lift)
    norms = np.stack([bases[0].norm(fields[:, :, v]) for v in range(c)], axis=-1)
    times = t0 + dt * np.arange(horizon + 1) if horizon > 0 else np.array([t0])
    return TrajectorySet(problem, times, fields, meta={"norms": norms, "predicted": True})

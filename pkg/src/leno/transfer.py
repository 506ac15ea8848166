"""Adapting a trained operator to a new subject.

The hidden layers stay fixed; the output layer, a time scale ``alpha`` in
``alpha u_t - D Lap u = N(u)`` and optionally a diffusion factor are refit.
Both scalars are trained through their logarithms to stay positive.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import DivergenceError, ValidationError
from .leno import MODES, loss_graph
from .neuralnet import AdamState, adam_step, split_for_transfer


@dataclass
class TransferConfig:
    alpha0: float = 1.0
    train_alpha: bool = True
    train_diffusion: bool = False
    d_scale0: float = 1.0
    epochs: int = 1000
    lr: float = 1e-3
    scalar_lr: float = 5e-2
    lr_decay: float = 0.25
    lr_interval: int = 1000
    mode: str = "combined"
    eps: float = 1e-12
    log_every: int = 0

    def __post_init__(self):
        if not self.alpha0 > 0 or not self.d_scale0 > 0:
            raise ValidationError("alpha0 and d_scale0 must be positive")
        if self.epochs < 0:
            raise ValidationError("epochs must be non-negative")
        if self.mode not in MODES:
            raise ValidationError(f"loss mode must be one of {MODES}")

    def to_dict(self):
        return asdict(self)


@dataclass
class TransferResult:
    net: object
    alpha: float
    d_scale: float
    history: list = field(default_factory=list)

    def accuracy(self, dataset, bases=None, eps=1e-12):
        """Table of ``1 - L^D``, ``1 - E_L2`` and ``1 - E_Res`` on ``dataset``."""
        out = {"1-L_D": 1.0 - transfer_loss(self, dataset, "data-only", eps)}
        if bases is not None:
            from .metrics import evaluate

            rep = evaluate(self.net, dataset, bases, alpha=self.alpha, dscale=self.d_scale)
            out["1-E_L2"] = 1.0 - rep.E_L2
            out["1-E_Res"] = 1.0 - rep.E_Res
        return out


def transfer_loss(result, dataset, mode="combined", eps=1e-12):
    net = result.net
    la = ad.Tensor(np.array(math.log(result.alpha), dtype=net.dtype))
    ld = ad.Tensor(np.array(math.log(result.d_scale), dtype=net.dtype))
    params = [ad.Tensor(p) for p in net.parameters()]
    return float(loss_graph(net, params, dataset, mode, eps, la, ld).total.data)


def transfer_train(base, dataset, config=None):
    """Retrain the output layer (and ``log alpha``, optionally ``log D``) of a copy of ``base``."""
    config = config or TransferConfig()
    if base.sizes[0] != dataset.width:
        raise ValidationError(f"network input {base.sizes[0]} does not match dataset width {dataset.width}")
    _, net = split_for_transfer(base)
    dtype = net.dtype
    log_a = np.array(math.log(config.alpha0), dtype=dtype)
    log_d = np.array(math.log(config.d_scale0), dtype=dtype)
    params = net.parameters()
    mask = net.trainable_mask()
    state = AdamState.for_params(params, lr0=config.lr, decay=config.lr_decay, interval=config.lr_interval)
    sstate = AdamState.for_params([log_a, log_d], lr0=config.scalar_lr, decay=config.lr_decay,
                                  interval=config.lr_interval)
    history = []
    t0 = time.perf_counter()
    for epoch in range(config.epochs):
        tensors = [ad.Tensor(p, requires_grad=t) for p, t in zip(params, mask)]
        ta = ad.Tensor(log_a, requires_grad=config.train_alpha)
        td = ad.Tensor(log_d, requires_grad=config.train_diffusion)
        parts = loss_graph(net, tensors, dataset, config.mode, config.eps, ta, td)
        L = float(parts.total.data)
        history.append({"epoch": epoch, "L": L, "L_D": parts.data, "L_R": parts.residual,
                        "alpha": float(np.exp(log_a)), "d_scale": float(np.exp(log_d)),
                        "lr": state.lr(epoch), "wall_time": time.perf_counter() - t0})
        if not np.isfinite(L):
            raise DivergenceError(f"transfer loss became non-finite at epoch {epoch}", step=epoch, history=history)
        parts.total.backward()
        adam_step(params, [t.grad if t.requires_grad else None for t in tensors], state, epoch)
        adam_step([log_a, log_d], [ta.grad if config.train_alpha else None,
                                   td.grad if config.train_diffusion else None], sstate, epoch)
        if config.log_every and epoch % config.log_every == 0:
            print(f"epoch {epoch:5d}  L={L:.4e}  alpha={float(np.exp(log_a)):.4f}  "
                  f"D={float(np.exp(log_d)):.4f}", flush=True)
    net.optimizer = state
    return TransferResult(net, float(np.exp(log_a)), float(np.exp(log_d)), history)

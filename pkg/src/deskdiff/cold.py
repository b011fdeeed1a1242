"""Cold diffusion: arbitrary degradations D(x, t) and a learned restorer R(x, t).

Two degradations ship:

* ``fixed_noise`` -- the Gaussian marginal with one noise vector frozen for
  all inputs and steps, D(x, t) = sqrt(ab_t) x + sqrt(1 - ab_t) z.
* ``blur`` -- t successive applications of a discrete Gaussian blur whose
  width grows linearly with the step.  Kernels are truncated at 3 widths and
  each *column* is renormalised after truncation at the borders, so every
  application conserves the signal's total mass.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .denoiser import DenoiserParams, NetConfig, backward, forward, init_params
from .forward import sample_marginal
from .rng import make_rng
from .schedule import Schedule
from .trainer import TrainConfig, TrainLog, _as_dataset, check_loss, make_optimizer, step_rng


class DegradationKind(str, enum.Enum):
    FIXED_NOISE = "fixed_noise"
    BLUR = "blur"


def blur_matrix(dim: int, width: float) -> np.ndarray:
    """Column-stochastic matrix B with (B @ x) the blurred signal."""
    if width <= 0:
        return np.eye(dim)
    radius = max(1, math.ceil(3 * width))
    idx = np.arange(dim)
    diff = idx[:, None] - idx[None, :]
    k = np.exp(-0.5 * (diff / width) ** 2) * (np.abs(diff) <= radius)
    return k / k.sum(axis=0, keepdims=True)


@dataclass(eq=False)
class DegradationOp:
    kind: DegradationKind
    T: int
    schedule: Schedule | None = None
    noise: np.ndarray | None = None  # fixed_noise: the frozen z
    widths: np.ndarray | None = None  # blur: per-step kernel width, slot 0 unused
    dim: int | None = None
    _cum: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.kind = DegradationKind(self.kind)
        if self.kind is DegradationKind.FIXED_NOISE:
            if self.schedule is None or self.noise is None:
                raise ValueError("fixed_noise needs a schedule and a noise vector")
            self.noise = np.asarray(self.noise, dtype=np.float64)
            self.dim = self.noise.size
            self.T = self.schedule.T
        else:
            self.widths = np.asarray(self.widths, dtype=np.float64)
            if self.widths.shape != (self.T + 1,):
                raise ValueError("blur needs T + 1 widths")
            cum = [np.eye(self.dim)]
            for t in range(1, self.T + 1):
                cum.append(blur_matrix(self.dim, self.widths[t]) @ cum[-1])
            self._cum = np.stack(cum)

    def params_dict(self) -> dict:
        d = {"kind": self.kind.value, "T": self.T, "dim": self.dim}
        if self.kind is DegradationKind.FIXED_NOISE:
            d["noise"] = self.noise.tolist()
            d["schedule_hash"] = self.schedule.hash
        else:
            d["widths"] = self.widths.tolist()
        return d


def fixed_noise_op(s: Schedule, dim: int, rng: np.random.Generator | None = None, noise=None):
    if noise is None:
        noise = rng.standard_normal(dim)
    return DegradationOp(DegradationKind.FIXED_NOISE, s.T, schedule=s, noise=noise)


def blur_op(T: int, dim: int, width_min: float = 0.5, width_max: float = 2.0) -> DegradationOp:
    widths = np.zeros(T + 1)
    if T == 1:
        widths[1] = width_min
    elif T > 1:
        widths[1:] = width_min + np.arange(T) * (width_max - width_min) / (T - 1)
    return DegradationOp(DegradationKind.BLUR, T, widths=widths, dim=dim)


def degrade(op: DegradationOp, x, t) -> np.ndarray:
    """D(x, t); ``x`` is ``(d,)`` or ``(n, d)``, ``t`` an int or a length-n vector."""
    x = np.asarray(x, dtype=np.float64)
    t_arr = np.asarray(t)
    if t_arr.size and (t_arr.min() < 0 or t_arr.max() > op.T):
        raise IndexError(f"severity out of range [0, {op.T}]: {t}")
    if t_arr.ndim == 0:
        t = int(t)
        if t == 0:
            return x.copy()
        if op.kind is DegradationKind.FIXED_NOISE:
            return sample_marginal(x, t, op.schedule, z=np.broadcast_to(op.noise, x.shape))[0]
        return x @ op._cum[t].T
    if op.kind is DegradationKind.FIXED_NOISE:
        ab = op.schedule.alpha_bar[t_arr][:, None]
        out = np.sqrt(ab) * x + np.sqrt(1.0 - ab) * op.noise
    else:
        out = np.einsum("nij,nj->ni", op._cum[t_arr], x)
    out[t_arr == 0] = x[t_arr == 0]
    return out


@dataclass
class RestorationModel:
    params: DenoiserParams
    op: DegradationOp

    def __call__(self, x_t, t) -> np.ndarray:
        x_t = np.asarray(x_t, dtype=np.float64)
        out, cache = forward(self.params, x_t, t)
        return out[0] if x_t.ndim == 1 else out


def restoration_loss_and_grad(params: DenoiserParams, op: DegradationOp, x0, t):
    """Mean over the batch of ||R(D(x0, t), t) - x0||_1, with sign(0) = 0."""
    x_t = degrade(op, x0, t)
    out, cache = forward(params, x_t, t)
    resid = out - x0
    n = x0.shape[0]
    loss = float(np.abs(resid).sum(axis=1).mean())
    return loss, backward(params, cache, np.sign(resid) / n)


def train_restoration(data, op: DegradationOp, cfg: TrainConfig, net: NetConfig | None = None,
                      log: TrainLog | None = None) -> RestorationModel:
    """Minimise E_{x, t}[||R(D(x, t), t) - x||_1] with t ~ U{0..T}."""
    data, _ = _as_dataset(data)
    if net is None:
        net = NetConfig(data_dim=data.shape[1], T=op.T)
    params = init_params(net, make_rng(cfg.seed, "init"))
    opt = make_optimizer(cfg)
    for step in range(1, cfg.steps + 1):
        rng = step_rng(cfg.seed, step, "cold")
        idx = rng.integers(0, data.shape[0], size=cfg.batch_size)
        t = rng.integers(0, op.T + 1, size=cfg.batch_size)
        loss, grads = restoration_loss_and_grad(params, op, data[idx], t)
        check_loss(step, loss)
        opt.update(params.arrays, grads)
        if log is not None:
            gn = float(np.sqrt(sum(np.sum(g * g) for g in grads.values())))
            log.append(step, loss, gn)
    return RestorationModel(params, op)


def restore_iterative(model, op: DegradationOp, x_T, start: int | None = None) -> np.ndarray:
    """Alternate x0_hat = R(x_t, t) and x_{t-1} = D(x0_hat, t - 1) for t = start..1.

    ``start`` defaults to the full severity T; with ``start = 0`` the input is
    returned unchanged.
    """
    x = np.asarray(x_T, dtype=np.float64)
    start = op.T if start is None else int(start)
    x0_hat = x
    for t in range(start, 0, -1):
        x0_hat = model(x, t)
        if not np.all(np.isfinite(x0_hat)):
            raise FloatingPointError(f"non-finite restoration at step {t}")
        x = degrade(op, x0_hat, t - 1)
    return x0_hat


def restore_one_step(model, op: DegradationOp, x_T, start: int | None = None) -> np.ndarray:
    """R(x_T, T) (or R(x, start) for a partially degraded input)."""
    return model(np.asarray(x_T, dtype=np.float64), op.T if start is None else int(start))


def sample_limit_pool(op: DegradationOp, data, rng: np.random.Generator, n: int = 1) -> np.ndarray:
    """Starting points for generation at full severity.

    fixed_noise draws N(0, I) directly; blur picks dataset rows with
    replacement and degrades them to step T.
    """
    data, _ = _as_dataset(data)
    if op.kind is DegradationKind.FIXED_NOISE:
        return rng.standard_normal((n, data.shape[1]))
    idx = rng.integers(0, data.shape[0], size=n)
    return degrade(op, data[idx], op.T)

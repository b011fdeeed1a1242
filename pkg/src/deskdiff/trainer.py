"""Stochastic-gradient training of the noise predictor."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .denoiser import (
    DenoiserParams,
    NetConfig,
    Weighting,
    init_params,
    loss_and_grad,
    predict_noise,
)
from .io import fmt, write_csv
from .rng import STREAMS, make_rng
from .schedule import Schedule

DIVERGENCE_LIMIT = 1e6


class OptimizerKind(str, enum.Enum):
    SGD = "sgd"
    ADAM = "adam"


class TrainingDiverged(FloatingPointError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"loss diverged at step {step}: {loss!r}")
        self.step = step
        self.loss = loss


@dataclass
class TrainConfig:
    steps: int = 20_000
    batch_size: int = 128
    learning_rate: float = 1e-3
    optimizer: OptimizerKind = OptimizerKind.ADAM
    weighting: Weighting = Weighting.UNWEIGHTED
    seed: int = 0
    eval_every: int = 1000

    def __post_init__(self):
        self.optimizer = OptimizerKind(self.optimizer)
        self.weighting = Weighting(self.weighting)
        for name in ("steps", "batch_size", "eval_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        self.eval_every = min(self.eval_every, self.steps)


class SGD:
    def __init__(self, lr: float):
        self.lr = lr
        self.t = 0

    def update(self, arrays: dict, grads: dict) -> None:
        self.t += 1
        for k, g in grads.items():
            arrays[k] -= self.lr * g

    def state_arrays(self) -> dict:
        return {"opt_t": np.array([float(self.t)])}

    def load_state(self, arrays: dict) -> None:
        self.t = int(arrays["opt_t"][0])


class Adam:
    def __init__(self, lr: float, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def update(self, arrays: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k in sorted(grads):
            g = grads[k]
            m = self.m.setdefault(k, np.zeros_like(g))
            v = self.v.setdefault(k, np.zeros_like(g))
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            arrays[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self) -> dict:
        out = {"opt_t": np.array([float(self.t)])}
        out.update({f"m/{k}": v for k, v in self.m.items()})
        out.update({f"v/{k}": v for k, v in self.v.items()})
        return out

    def load_state(self, arrays: dict) -> None:
        self.t = int(arrays["opt_t"][0])
        self.m = {k[2:]: v.copy() for k, v in arrays.items() if k.startswith("m/")}
        self.v = {k[2:]: v.copy() for k, v in arrays.items() if k.startswith("v/")}


def make_optimizer(cfg: TrainConfig):
    return Adam(cfg.learning_rate) if cfg.optimizer is OptimizerKind.ADAM else SGD(cfg.learning_rate)


@dataclass
class TrainLog:
    step: list[int] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    grad_norm: list[float] = field(default_factory=list)
    eval_metric: list[float] = field(default_factory=list)

    def append(self, step, loss, grad_norm, eval_metric=math.nan):
        if self.step and step <= self.step[-1]:
            raise ValueError("TrainLog steps must increase")
        self.step.append(step)
        self.loss.append(loss)
        self.grad_norm.append(grad_norm)
        self.eval_metric.append(eval_metric)

    def rows(self):
        for s, l, g, e in zip(self.step, self.loss, self.grad_norm, self.eval_metric):
            yield s, fmt(l), fmt(g), "" if math.isnan(e) else fmt(e)

    def write_csv(self, path) -> None:
        write_csv(path, ["step", "loss", "grad_norm", "eval_metric"], self.rows())


def step_rng(seed: int, step: int, stream: str = "train") -> np.random.Generator:
    """Per-step generator, so a resumed run replays the same draws."""
    ss = np.random.SeedSequence(seed, spawn_key=(STREAMS[stream], step))
    return np.random.Generator(np.random.PCG64(ss))


def sample_timesteps(rng: np.random.Generator, n: int, T: int, low: int = 1) -> np.ndarray:
    return rng.integers(low, T + 1, size=n)


def draw_batch(rng, data, labels, batch_size, T, t_low=1):
    idx = rng.integers(0, data.shape[0], size=batch_size)
    t = sample_timesteps(rng, batch_size, T, t_low)
    z = rng.standard_normal((batch_size, data.shape[1]))
    return data[idx], t, z, (None if labels is None else labels[idx])


def _as_dataset(data, labels=None):
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 1:
        data = data[:, None]
    if data.shape[0] == 0:
        raise ValueError("dataset is empty")
    if labels is not None:
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != (data.shape[0],):
            raise ValueError("one label per datum required")
    return data, labels


def check_loss(step: int, loss: float) -> None:
    if not math.isfinite(loss) or loss > DIVERGENCE_LIMIT:
        raise TrainingDiverged(step, loss)


def train(data, s: Schedule, cfg: TrainConfig, net: NetConfig | None = None, labels=None, *,
          params: DenoiserParams | None = None, optimizer=None, start_step: int = 0,
          eval_data=None, eval_labels=None, eval_n_mc: int = 8, on_eval=None):
    """Minimise the (optionally weighted) noise-prediction loss.

    Each step draws ``batch_size`` data indices, steps t ~ U{1..T} and fresh
    noise from a generator keyed on ``(seed, step)``.  Passing ``params``,
    ``optimizer`` and ``start_step`` resumes an earlier run exactly.
    ``on_eval(step, params, optimizer)`` fires every ``eval_every`` steps.
    Returns ``(params, log)``.
    """
    data, labels = _as_dataset(data, labels)
    if params is None:
        if net is None:
            n_classes = 0 if labels is None else int(labels.max()) + 1
            net = NetConfig(data_dim=data.shape[1], T=s.T, n_classes=n_classes)
        params = init_params(net, make_rng(cfg.seed, "init"))
    else:
        params = params.copy()
    if params.config.T != s.T:
        raise ValueError("network step range does not match the schedule")
    if optimizer is None:
        optimizer = make_optimizer(cfg)
    log = TrainLog()
    for step in range(start_step + 1, cfg.steps + 1):
        rng = step_rng(cfg.seed, step)
        x0, t, z, cond = draw_batch(rng, data, labels, cfg.batch_size, s.T)
        gb = loss_and_grad(params, x0, t, z, s, cfg.weighting, cond)
        check_loss(step, gb.loss)
        optimizer.update(params.arrays, gb.grads)
        metric = math.nan
        if step % cfg.eval_every == 0 or step == cfg.steps:
            if eval_data is not None:
                metric = evaluate(params, eval_data, s, eval_n_mc, seed=cfg.seed, labels=eval_labels)
            if on_eval is not None:
                on_eval(step, params, optimizer)
        log.append(step, gb.loss, gb.norm(), metric)
    return params, log


def evaluate(params, held_out, s: Schedule, n_mc: int = 8, seed: int = 0, labels=None,
             return_se: bool = False, chunk: int = 65536):
    """Monte-Carlo unweighted noise-prediction loss on held-out data.

    Every held-out datum is paired with ``n_mc`` draws of (t, z).
    ``params`` may also be any callable ``fn(x_t, t, cond)``.
    """
    data, labels = _as_dataset(held_out, labels)
    rng = make_rng(seed, "eval")
    n, d = data.shape
    x0 = np.repeat(data, n_mc, axis=0)
    cond = None if labels is None else np.repeat(labels, n_mc)
    t = sample_timesteps(rng, n * n_mc, s.T)
    z = rng.standard_normal(x0.shape)
    ab = s.alpha_bar[t][:, None]
    x_t = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * z
    fn = params if callable(params) else (lambda x, tt, c: predict_noise(params, x, tt, c))
    losses = np.empty(n * n_mc)
    for lo in range(0, n * n_mc, chunk):
        hi = min(lo + chunk, n * n_mc)
        c = None if cond is None else cond[lo:hi]
        r = z[lo:hi] - fn(x_t[lo:hi], t[lo:hi], c)
        losses[lo:hi] = np.sum(r * r, axis=1)
    mean = float(losses.mean())
    if return_se:
        return mean, float(losses.std(ddof=1) / math.sqrt(losses.size))
    return mean

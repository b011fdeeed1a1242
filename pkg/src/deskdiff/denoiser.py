"""Noise predictor z_theta(x_t, t[, label]): a small numpy MLP with exact gradients.

The network input is the concatenation ``[x_t, time features, label
embedding]``.  Hidden layers use SiLU; the output layer is linear with the
data width.  Backpropagation is written out by hand and checked against
central finite differences in the test-suite.

Batches are ``(n, d)`` arrays with integer step vectors ``t`` of shape
``(n,)`` (a scalar ``t`` is broadcast).
"""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from .io import atomic_write
from .schedule import Schedule


class TimeMode(str, enum.Enum):
    SINUSOIDAL = "sinusoidal"
    LEARNED = "learned"
    NONE = "none"


class Weighting(str, enum.Enum):
    WEIGHTED = "weighted"
    UNWEIGHTED = "unweighted"


@dataclass(frozen=True)
class NetConfig:
    data_dim: int
    hidden: tuple[int, ...] = (64, 64, 64)
    time_mode: TimeMode = TimeMode.SINUSOIDAL
    time_dim: int = 16
    T: int = 1000
    n_classes: int = 0
    cond_dim: int = 0
    activation: str = "silu"

    def __post_init__(self):
        object.__setattr__(self, "time_mode", TimeMode(self.time_mode))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.time_mode is TimeMode.NONE:
            object.__setattr__(self, "time_dim", 0)
        if self.n_classes and not self.cond_dim:
            object.__setattr__(self, "cond_dim", self.n_classes)

    @property
    def input_dim(self) -> int:
        return self.data_dim + self.time_dim + (self.cond_dim if self.n_classes else 0)

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim, *self.hidden, self.data_dim]

    @property
    def conditioned(self) -> bool:
        return self.n_classes > 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["time_mode"] = self.time_mode.value
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class DenoiserParams:
    config: NetConfig
    arrays: dict[str, np.ndarray]

    @property
    def n_layers(self) -> int:
        return len(self.config.layer_sizes) - 1

    def copy(self) -> "DenoiserParams":
        return DenoiserParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([self.arrays[k].ravel() for k in sorted(self.arrays)])


@dataclass
class GradientBundle:
    grads: dict[str, np.ndarray]
    loss: float
    per_item: np.ndarray = field(default=None, repr=False)

    def norm(self) -> float:
        return float(np.sqrt(sum(np.sum(g * g) for g in self.grads.values())))


def init_params(cfg: NetConfig, rng: np.random.Generator,
                cond_table: np.ndarray | None = None) -> DenoiserParams:
    sizes = cfg.layer_sizes
    arrays = {}
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        lim = 1.0 / np.sqrt(fan_in)
        arrays[f"W{i}"] = rng.uniform(-lim, lim, size=(fan_in, fan_out))
        arrays[f"b{i}"] = rng.uniform(-lim, lim, size=fan_out)
    if cfg.time_mode is TimeMode.LEARNED:
        arrays["time_table"] = rng.uniform(-1.0, 1.0, size=(cfg.T + 1, cfg.time_dim))
    if cfg.conditioned:
        if cond_table is None:
            cond_table = np.eye(cfg.n_classes, cfg.cond_dim)
        cond_table = np.asarray(cond_table, dtype=np.float64)
        if cond_table.shape != (cfg.n_classes, cfg.cond_dim):
            raise ValueError(f"condition table must be {(cfg.n_classes, cfg.cond_dim)}")
        arrays["cond_table"] = cond_table.copy()
    return DenoiserParams(cfg, arrays)


def sinusoidal_features(t, dim: int) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64).reshape(-1, 1)
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    ang = t * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def _silu(a):
    s = expit(a)
    return a * s, s


def _act(name, a):
    if name == "silu":
        h, s = _silu(a)
        return h, s + h * (1.0 - s)
    if name == "tanh":
        h = np.tanh(a)
        return h, 1.0 - h * h
    raise ValueError(f"unknown activation {name!r}")


def _prepare(params: DenoiserParams, x, t, cond):
    cfg = params.config
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != cfg.data_dim:
        raise ValueError(f"expected data width {cfg.data_dim}, got {x.shape[1]}")
    n = x.shape[0]
    t = np.broadcast_to(np.asarray(t, dtype=np.int64), (n,))
    if t.min() < 0 or t.max() > cfg.T:
        raise IndexError(f"step index out of range [0, {cfg.T}]")
    parts = [x]
    if cfg.time_mode is TimeMode.SINUSOIDAL:
        parts.append(sinusoidal_features(t, cfg.time_dim))
    elif cfg.time_mode is TimeMode.LEARNED:
        parts.append(params.arrays["time_table"][t])
    if cfg.conditioned:
        if cond is None:
            raise ValueError("this network is conditioned; a label is required")
        cond = np.broadcast_to(np.asarray(cond, dtype=np.int64), (n,))
        if cond.min() < 0 or cond.max() >= cfg.n_classes:
            raise KeyError(f"unknown condition label in {np.unique(cond)}")
        parts.append(params.arrays["cond_table"][cond])
    elif cond is not None:
        raise ValueError("this network is unconditioned; got a label")
    return np.concatenate(parts, axis=1), t, cond, single


def forward(params: DenoiserParams, x, t, cond=None):
    """Network output plus the cache needed by :func:`backward`."""
    inp, t, cond, single = _prepare(params, x, t, cond)
    act = params.config.activation
    h = inp
    hs, derivs = [inp], []
    L = params.n_layers
    for i in range(L - 1):
        h, dh = _act(act, h @ params.arrays[f"W{i}"] + params.arrays[f"b{i}"])
        hs.append(h)
        derivs.append(dh)
    out = h @ params.arrays[f"W{L - 1}"] + params.arrays[f"b{L - 1}"]
    return out, (hs, derivs, t, cond, single)


def backward(params: DenoiserParams, cache, dout: np.ndarray) -> dict[str, np.ndarray]:
    hs, derivs, t, cond, _ = cache
    cfg = params.config
    L = params.n_layers
    grads = {}
    g = dout
    for i in reversed(range(L)):
        grads[f"W{i}"] = hs[i].T @ g
        grads[f"b{i}"] = g.sum(axis=0)
        g = g @ params.arrays[f"W{i}"].T
        if i > 0:
            g = g * derivs[i - 1]
    col = cfg.data_dim
    if cfg.time_mode is TimeMode.LEARNED:
        gt = np.zeros_like(params.arrays["time_table"])
        np.add.at(gt, t, g[:, col:col + cfg.time_dim])
        grads["time_table"] = gt
    col += cfg.time_dim
    if cfg.conditioned:
        gc = np.zeros_like(params.arrays["cond_table"])
        np.add.at(gc, cond, g[:, col:col + cfg.cond_dim])
        grads["cond_table"] = gc
    return grads


def predict_noise(params: DenoiserParams, x_t, t, cond=None) -> np.ndarray:
    out, cache = forward(params, x_t, t, cond)
    return out[0] if cache[-1] else out


def as_noise_fn(model):
    """Wrap params (or pass through a callable) as ``fn(x_t, t, cond) -> z_hat``."""
    if isinstance(model, DenoiserParams):
        return lambda x, t, cond=None: predict_noise(model, x, t, cond)
    if callable(model):
        return model
    raise TypeError(f"not a noise predictor: {type(model).__name__}")


def _col(v, ndim):
    v = np.asarray(v)
    return v.reshape(v.shape + (1,) * (ndim - v.ndim)) if v.ndim else v


def mu_from_noise(x_t, z_hat, t, s: Schedule) -> np.ndarray:
    """(x_t - beta_t / sqrt(1 - ab_t) * z_hat) / sqrt(alpha_t)."""
    x_t = np.asarray(x_t, dtype=np.float64)
    coef = _col(s.beta[t] / np.sqrt(1.0 - s.alpha_bar[t]), x_t.ndim)
    return (x_t - coef * z_hat) / _col(np.sqrt(s.alpha[t]), x_t.ndim)


def mu_theta(params, x_t, t, s: Schedule, cond=None) -> np.ndarray:
    s.check_step(t)
    return mu_from_noise(x_t, as_noise_fn(params)(x_t, t, cond), t, s)


def loss_weights(s: Schedule, weighting: Weighting | str) -> np.ndarray:
    """Per-step weights w_t, slot 0 unused.

    Weighted: beta_t^2 / (2 sigma_t^2 alpha_t (1 - ab_t)); unweighted: 1.
    """
    if Weighting(weighting) is Weighting.UNWEIGHTED:
        return np.ones(s.T + 1)
    w = np.zeros(s.T + 1)
    b, a, ab, var = s.beta[1:], s.alpha[1:], s.alpha_bar[1:], s.model_var[1:]
    w[1:] = b * b / (2.0 * var * a * (1.0 - ab))
    return w


def loss_and_grad(params: DenoiserParams, x0, t, z, s: Schedule,
                  weighting: Weighting | str = Weighting.UNWEIGHTED, cond=None) -> GradientBundle:
    """Mean over the batch of w_t ||z - z_theta(sqrt(ab_t) x0 + sqrt(1-ab_t) z, t)||^2."""
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    n = x0.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    t = np.broadcast_to(np.asarray(t, dtype=np.int64), (n,))
    s.check_step(t)
    ab = s.alpha_bar[t][:, None]
    x_t = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * z
    out, cache = forward(params, x_t, t, cond)
    w = loss_weights(s, weighting)[t]
    resid = z - out
    per_item = w * np.sum(resid * resid, axis=1)
    dout = (-2.0 / n) * w[:, None] * resid
    return GradientBundle(backward(params, cache, dout), float(per_item.mean()), per_item)


# ---------------------------------------------------------------------------
# checkpoints
#
# Layout: b"DDCKPT1\n", u64 little-endian header length, UTF-8 JSON header,
# then the arrays as contiguous little-endian float64 in header order.
# ---------------------------------------------------------------------------

MAGIC = b"DDCKPT1\n"


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, params: DenoiserParams, step: int, schedule_hash: str,
                    extra_arrays: dict[str, np.ndarray] | None = None, meta: dict | None = None) -> None:
    blobs = {f"param/{k}": v for k, v in params.arrays.items()}
    blobs.update({f"extra/{k}": v for k, v in (extra_arrays or {}).items()})
    names = sorted(blobs)
    header = {
        "format": "deskdiff-checkpoint",
        "byte_order": "little",
        "dtype": "float64",
        "config": params.config.to_dict(),
        "layer_sizes": params.config.layer_sizes,
        "schedule_hash": schedule_hash,
        "step": int(step),
        "meta": meta or {},
        "arrays": [{"name": k, "shape": list(blobs[k].shape)} for k in names],
    }
    head = json.dumps(header, sort_keys=True).encode()
    with atomic_write(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for k in names:
            fh.write(np.ascontiguousarray(blobs[k], dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns ``(params, header, extra_arrays)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a deskdiff checkpoint")
    try:
        (hlen,) = struct.unpack_from("<Q", data, len(MAGIC))
        off = len(MAGIC) + 8
        header = json.loads(data[off:off + hlen])
    except (struct.error, ValueError) as e:
        raise CheckpointError(f"{path}: unreadable header ({e})") from None
    off += hlen
    params, extra = {}, {}
    for spec in header["arrays"]:
        count = int(np.prod(spec["shape"], dtype=np.int64))
        if off + 8 * count > len(data):
            raise CheckpointError(f"{path}: truncated at array {spec['name']}")
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).astype(np.float64)
        off += 8 * count
        kind, name = spec["name"].split("/", 1)
        (params if kind == "param" else extra)[name] = arr.reshape(spec["shape"])
    cfg_d = dict(header["config"])
    cfg_d["hidden"] = tuple(cfg_d["hidden"])
    return DenoiserParams(NetConfig(**cfg_d), params), header, extra

"""Ancestral sampling of the learned reverse chain, x_T ~ N(0, I) down to x_0."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .denoiser import as_noise_fn, mu_theta
from .io import fmt, write_csv
from .rng import make_rng
from .schedule import Schedule, SigmaMode


class FinalDecode(str, enum.Enum):
    NONE = "none"
    CLAMP = "clamp"


class NonFiniteState(FloatingPointError):
    def __init__(self, t: int):
        super().__init__(f"non-finite state produced at step {t}")
        self.t = t


@dataclass
class SampleRunConfig:
    n_samples: int = 2000
    seed: int = 0
    sigma_mode: SigmaMode | None = None  # None: keep the schedule's own
    record_intermediate: bool | int = False  # True records every step; an int is a stride
    final_decode: FinalDecode = FinalDecode.NONE

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.sigma_mode is not None:
            self.sigma_mode = SigmaMode(self.sigma_mode)
        self.final_decode = FinalDecode(self.final_decode)

    @property
    def stride(self) -> int:
        r = self.record_intermediate
        if r is True:
            return 1
        return int(r) if r else 0


@dataclass
class SampleResult:
    samples: np.ndarray  # (n, d)
    steps: np.ndarray | None = None  # recorded t values, descending from T
    states: np.ndarray | None = None  # (len(steps), n, d)

    def rows(self):
        if self.states is None:
            n, d = self.samples.shape
            for i in range(n):
                for j in range(d):
                    yield i, j, fmt(self.samples[i, j])
        else:
            n, d = self.samples.shape
            for i in range(n):
                for k, t in enumerate(self.steps):
                    for j in range(d):
                        yield i, int(t), j, fmt(self.states[k, i, j])

    def write_csv(self, path) -> None:
        if self.states is None:
            header = ["sample_id", "component_index", "value"]
        else:
            header = ["sample_id", "t", "component_index", "value"]
        write_csv(path, header, self.rows())


def reverse_step_direct(mu, t: int, s: Schedule, rng: np.random.Generator | None = None, z=None):
    """mu + sigma_t z; the noise is dropped at t = 1 so the last step returns its mean."""
    s.check_step(t)
    mu = np.asarray(mu, dtype=np.float64)
    if t == 1:
        return mu
    if z is None:
        z = rng.standard_normal(mu.shape)
    return mu + math.sqrt(s.sigma_sq[t]) * z


def reverse_step(params, x_t, t: int, s: Schedule, rng: np.random.Generator | None = None,
                 cond=None, z=None):
    """(x_t - beta_t / sqrt(1 - ab_t) z_theta(x_t, t)) / sqrt(alpha_t) + sigma_t z."""
    return reverse_step_direct(mu_theta(params, x_t, t, s, cond), t, s, rng, z)


def generate(params, s: Schedule, cfg: SampleRunConfig, cond=None, data_dim: int | None = None,
             rng: np.random.Generator | None = None) -> SampleResult:
    """Draw ``cfg.n_samples`` samples by iterating the reverse step from t = T to 1."""
    if cfg.sigma_mode is not None and cfg.sigma_mode is not s.sigma_mode:
        s = s.with_sigma_mode(cfg.sigma_mode)
    if data_dim is None:
        data_dim = params.config.data_dim
    fn = as_noise_fn(params)
    if rng is None:
        rng = make_rng(cfg.seed, "sample")
    n = cfg.n_samples
    if cond is not None:
        cond = np.broadcast_to(np.asarray(cond, dtype=np.int64), (n,))
    x = rng.standard_normal((n, data_dim))
    stride = cfg.stride
    steps, states = ([s.T], [x.copy()]) if stride else (None, None)
    for t in range(s.T, 0, -1):
        x = reverse_step(fn, x, t, s, rng, cond)
        if not np.all(np.isfinite(x)):
            raise NonFiniteState(t)
        if stride and ((t - 1) % stride == 0):
            steps.append(t - 1)
            states.append(x.copy())
    if cfg.final_decode is FinalDecode.CLAMP:
        x = np.clip(x, -1.0, 1.0)
        if stride:
            states[-1] = x.copy()
    if stride:
        return SampleResult(x, np.array(steps), np.stack(states))
    return SampleResult(x)

"""Noise schedules: the per-step coefficient tables of the diffusion chain.

Arrays are stored with a leading slot for step 0 so that ``s.beta[t]`` reads
naturally for ``t`` in ``1..T``.  Slot 0 holds ``beta=0, alpha=1,
alpha_bar=1, sigma_sq=0``.
"""

from __future__ import annotations

import enum
import hashlib
import io
from dataclasses import dataclass, field

import numpy as np


class SigmaMode(str, enum.Enum):
    BETA = "beta"
    POSTERIOR_BETA = "posterior_beta"


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Schedule:
    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma_sq: np.ndarray
    sigma_mode: SigmaMode
    _hash: str = field(default="", repr=False)

    def __post_init__(self):
        for name in ("beta", "alpha", "alpha_bar", "sigma_sq"):
            arr = getattr(self, name)
            arr.setflags(write=False)
        object.__setattr__(self, "_hash", hashlib.sha256(self.to_csv().encode()).hexdigest())

    @property
    def posterior_var(self) -> np.ndarray:
        """beta_t (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t), slot 0 = 0."""
        return _posterior_var(self.beta, self.alpha_bar)

    @property
    def model_var(self) -> np.ndarray:
        """Reverse-step variances with the degenerate t=1 posterior value replaced by beta_1.

        Used wherever a strictly positive sigma_1^2 is needed (loss weights,
        the Gaussian decoder of the reconstruction term).
        """
        var = self.sigma_sq.copy()
        if var[1] <= 0.0:
            var[1] = self.beta[1]
        return var

    def check_step(self, t, lo: int = 1) -> None:
        t_arr = np.asarray(t)
        if t_arr.size and (t_arr.min() < lo or t_arr.max() > self.T):
            raise IndexError(f"step index out of range [{lo}, {self.T}]: {t}")

    def with_sigma_mode(self, mode: SigmaMode | str) -> "Schedule":
        return from_betas(self.beta[1:], mode)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t,beta,alpha,alpha_bar,sigma_sq\n")
        for t in range(self.T + 1):
            row = (self.beta[t], self.alpha[t], self.alpha_bar[t], self.sigma_sq[t])
            buf.write(f"{t}," + ",".join(format(float(v), ".17g") for v in row) + "\n")
        return buf.getvalue()

    @property
    def hash(self) -> str:
        return self._hash


def _posterior_var(beta, alpha_bar):
    out = np.zeros_like(beta)
    out[1:] = beta[1:] * (1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:])
    return out


def from_betas(betas, sigma_mode: SigmaMode | str = SigmaMode.BETA) -> Schedule:
    betas = np.asarray(betas, dtype=np.float64).ravel()
    if betas.size == 0:
        raise ScheduleError("T must be >= 1")
    if not np.all((betas > 0) & (betas < 1)):
        raise ScheduleError("beta must lie in (0, 1)")
    sigma_mode = SigmaMode(sigma_mode)
    T = betas.size
    beta = np.concatenate([[0.0], betas])
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    if sigma_mode is SigmaMode.BETA:
        sigma_sq = beta.copy()
    else:
        sigma_sq = _posterior_var(beta, alpha_bar)
    return Schedule(T, beta, alpha, alpha_bar, sigma_sq, sigma_mode)


def make_linear_schedule(
    T: int = 1000,
    beta_start: float = 0.0004,
    beta_end: float = 0.06,
    sigma_mode: SigmaMode | str = SigmaMode.BETA,
) -> Schedule:
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise ScheduleError(f"T must be a positive integer, got {T!r}")
    if not 0 < beta_start < 1:
        raise ScheduleError(f"beta_start must lie in (0, 1), got {beta_start}")
    if not 0 < beta_end < 1:
        raise ScheduleError(f"beta_end must lie in (0, 1), got {beta_end}")
    if beta_start > beta_end:
        raise ScheduleError(f"beta_start ({beta_start}) must not exceed beta_end ({beta_end})")
    if T == 1:
        betas = np.array([beta_start])
    else:
        betas = beta_start + np.arange(T) * (beta_end - beta_start) / (T - 1)
    return from_betas(betas, sigma_mode)


def schedule_from_csv(text: str) -> Schedule:
    lines = [ln for ln in text.strip().splitlines() if ln]
    if lines[0].strip() != "t,beta,alpha,alpha_bar,sigma_sq":
        raise ScheduleError("bad schedule header")
    rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    beta, sigma_sq = rows[:, 1], rows[:, 4]
    if np.array_equal(sigma_sq[1:], beta[1:]):
        mode = SigmaMode.BETA
    else:
        mode = SigmaMode.POSTERIOR_BETA
    return from_betas(beta[1:], mode)


def alpha_bar_limit_check(s: Schedule) -> float:
    """alpha_bar at the final step; near zero means x_T is close to N(0, I)."""
    return float(s.alpha_bar[s.T])


def sde_consistency_gap(s: Schedule) -> float:
    """max_t |alpha_bar_t - exp(-sum_{u<=t} beta_u)|.

    The right-hand side is the signal retained by the continuous-time limit
    dx = -beta x/2 dt + sqrt(beta) dw; the two agree to first order in beta.
    """
    cum = np.cumsum(s.beta[1:])
    return float(np.max(np.abs(s.alpha_bar[1:] - np.exp(-cum))))


"""Forward noising chain: stepwise simulation and the closed-form marginal.

States are float64 arrays.  Batched routines take ``x`` of shape ``(n, d)``
(one row per trajectory); single-datum calls accept any shape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .io import fmt, write_csv
from .schedule import Schedule


def noising_step(x_prev: np.ndarray, beta: float, z: np.ndarray) -> np.ndarray:
    """sqrt(1 - beta) x_prev + sqrt(beta) z, for any beta in [0, 1]."""
    return math.sqrt(1.0 - beta) * x_prev + math.sqrt(beta) * z


def forward_step(x_prev, t: int, s: Schedule, rng: np.random.Generator | None = None, z=None):
    s.check_step(t)
    x_prev = np.asarray(x_prev, dtype=np.float64)
    if z is None:
        z = rng.standard_normal(x_prev.shape)
    return noising_step(x_prev, s.beta[t], z)


def marginal_params(x0, t: int, s: Schedule) -> tuple[np.ndarray, float]:
    """Mean and isotropic variance of x_t given x0."""
    s.check_step(t, lo=0)
    x0 = np.asarray(x0, dtype=np.float64)
    ab = s.alpha_bar[t]
    return math.sqrt(ab) * x0, float(1.0 - ab)


def sample_marginal(x0, t, s: Schedule, rng: np.random.Generator | None = None, z=None):
    """Draw x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) z in one shot.

    ``t`` may be an int or an integer array broadcastable against the leading
    axis of ``x0``.  Returns ``(x_t, z)``; the noise is needed by the
    training loss.
    """
    s.check_step(t)
    x0 = np.asarray(x0, dtype=np.float64)
    if z is None:
        z = rng.standard_normal(x0.shape)
    ab = s.alpha_bar[t]
    if np.ndim(ab):
        ab = ab.reshape(ab.shape + (1,) * (x0.ndim - ab.ndim))
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * z, z


@dataclass
class Trajectory:
    """Forward states; ``states[k]`` is the batch at step ``steps[k]``."""

    schedule_hash: str
    steps: np.ndarray
    states: np.ndarray  # (len(steps), n, d)
    seed: int | None = None

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def at(self, t: int) -> np.ndarray:
        idx = np.searchsorted(self.steps, t)
        if idx >= len(self.steps) or self.steps[idx] != t:
            raise KeyError(f"step {t} was not recorded")
        return self.states[idx]


def simulate_trajectory(x0, s: Schedule, rng: np.random.Generator, stride: int = 1,
                        seed: int | None = None) -> Trajectory:
    """Run the chain x_t = sqrt(1-b_t) x_{t-1} + sqrt(b_t) z_t for t = 1..T.

    ``x0`` is ``(n, d)`` (or ``(d,)`` for a single trajectory).  Every
    ``stride``-th state is kept, plus x_0 and x_T.
    """
    x = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    if not np.all(np.isfinite(x)):
        raise ValueError("x0 must be finite")
    steps, states = [0], [x.copy()]
    for t in range(1, s.T + 1):
        x = noising_step(x, s.beta[t], rng.standard_normal(x.shape))
        if t % stride == 0 or t == s.T:
            steps.append(t)
            states.append(x.copy())
    return Trajectory(s.hash, np.array(steps), np.stack(states), seed)


def accumulated_noise_variance(s: Schedule, t: int) -> float:
    """Variance of the noise injected by t steps, summed term by term.

    sum_{u=1}^t beta_u prod_{v=u+1}^t (1 - beta_v); the closed form is
    1 - alpha_bar_t.
    """
    total = 0.0
    for u in range(1, t + 1):
        total += s.beta[u] * math.prod(1.0 - s.beta[v] for v in range(u + 1, t + 1))
    return total


def trajectory_rows(traj: Trajectory):
    n, d = traj.states.shape[1:]
    for i in range(n):
        for k, t in enumerate(traj.steps):
            for j in range(d):
                yield i, int(t), j, fmt(traj.states[k, i, j])


def write_trajectory_csv(path, traj: Trajectory) -> None:
    write_csv(path, ["traj_id", "t", "component_index", "value"], trajectory_rows(traj))

"""Closed-form Gaussian pieces of the variational bound."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .denoiser import as_noise_fn, mu_from_noise
from .io import fmt, write_csv
from .schedule import Schedule


@dataclass
class GaussianDiag:
    mean: np.ndarray
    var: float | np.ndarray  # isotropic scalar or per component


def posterior(x_t, x0, t: int, s: Schedule) -> GaussianDiag:
    """p(x_{t-1} | x_t, x0).

    At t=1 the variance is 0 (alpha_bar_0 = 1) and the mean collapses onto x0.
    """
    s.check_step(t)
    x_t = np.asarray(x_t, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    b, a = s.beta[t], s.alpha[t]
    ab, ab_prev = s.alpha_bar[t], s.alpha_bar[t - 1]
    denom = 1.0 - ab
    mean = (math.sqrt(a) * (1.0 - ab_prev) * x_t + b * math.sqrt(ab_prev) * x0) / denom
    return GaussianDiag(mean, float(b * (1.0 - ab_prev) / denom))


def gaussian_kl_equal_cov(p: GaussianDiag, q: GaussianDiag, axis=None) -> float | np.ndarray:
    """||mu_p - mu_q||^2 / (2 var): the KL divergence with its mean-independent part set to 0.

    Only meaningful when both covariances coincide.  ``axis`` selects the
    component axes to sum over (all by default).
    """
    pv, qv = np.asarray(p.var, dtype=np.float64), np.asarray(q.var, dtype=np.float64)
    if pv.shape != qv.shape or not np.array_equal(pv, qv):
        raise ValueError("equal-covariance KL needs identical variances")
    if np.any(pv <= 0):
        raise ValueError("variances must be positive")
    diff = np.asarray(p.mean, dtype=np.float64) - np.asarray(q.mean, dtype=np.float64)
    return np.sum(diff * diff / (2.0 * pv), axis=axis)


def gaussian_kl(p: GaussianDiag, q: GaussianDiag, axis=None) -> float | np.ndarray:
    """Full KL(p || q) for diagonal Gaussians."""
    diff = np.asarray(p.mean, dtype=np.float64) - np.asarray(q.mean, dtype=np.float64)
    pv = np.broadcast_to(np.asarray(p.var, dtype=np.float64), diff.shape)
    qv = np.broadcast_to(np.asarray(q.var, dtype=np.float64), diff.shape)
    r = pv / qv
    return 0.5 * np.sum(r - 1.0 - np.log(r) + diff * diff / qv, axis=axis)


@dataclass
class ElboReport:
    reconstruction_term: float
    kl_terms: np.ndarray  # index k holds t = k + 2
    prior_term: float
    total: float
    reconstruction_se: float = 0.0
    kl_se: np.ndarray | None = None

    @property
    def total_se(self) -> float:
        # terms use independent draws, so variances add
        kl_var = 0.0 if self.kl_se is None else float(np.sum(self.kl_se ** 2))
        return math.sqrt(self.reconstruction_se ** 2 + kl_var)

    def rows(self):
        yield "reconstruction", 1, fmt(self.reconstruction_term), fmt(self.reconstruction_se)
        for k, v in enumerate(self.kl_terms):
            se = 0.0 if self.kl_se is None else self.kl_se[k]
            yield "kl", k + 2, fmt(v), fmt(se)
        T = len(self.kl_terms) + 1
        yield "prior", T, fmt(self.prior_term), fmt(0.0)
        yield "total", "", fmt(self.total), fmt(self.total_se)

    def write_csv(self, path) -> None:
        write_csv(path, ["term", "t", "value", "std_err"], self.rows())


def prior_kl(x0, s: Schedule) -> float:
    """KL(N(sqrt(ab_T) x0, (1-ab_T) I) || N(0, I)), closed form."""
    x0 = np.asarray(x0, dtype=np.float64)
    ab = s.alpha_bar[s.T]
    # (1 - ab) - 1 - log(1 - ab) written so tiny ab keeps its digits
    per = ab * x0 * x0 - ab - math.log1p(-ab)
    return float(0.5 * np.sum(np.broadcast_to(per, x0.shape)))


def _mean_se(v: np.ndarray) -> tuple[float, float]:
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se


def elbo_report(x0, denoiser, s: Schedule, rng: np.random.Generator, n_mc: int = 64,
                cond=None) -> ElboReport:
    """Monte-Carlo estimate of the variational bound on log p_theta(x0).

    The reverse transitions are N(mu_theta, sigma_t^2 I) with sigma_t^2 from
    ``s.model_var``; the t=1 transition doubles as the Gaussian decoder of the
    reconstruction term.  KL terms carry their full value, including the
    variance-mismatch constant, so the total is a genuine lower bound.
    """
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    fn = as_noise_fn(denoiser)
    x0 = np.asarray(x0, dtype=np.float64).ravel()
    d = x0.size
    X0 = np.broadcast_to(x0, (n_mc, d))
    var = s.model_var

    def draw(t):
        z = rng.standard_normal((n_mc, d))
        ab = s.alpha_bar[t]
        return math.sqrt(ab) * X0 + math.sqrt(1.0 - ab) * z

    x1 = draw(1)
    mu1 = mu_from_noise(x1, fn(x1, np.full(n_mc, 1), cond), 1, s)
    r = mu1 - X0
    loglik = -0.5 * np.sum(r * r, axis=1) / var[1] - 0.5 * d * math.log(2 * math.pi * var[1])
    recon, recon_se = _mean_se(loglik)

    kls, kl_se = np.zeros(s.T - 1), np.zeros(s.T - 1)
    for t in range(2, s.T + 1):
        xt = draw(t)
        post = posterior(xt, X0, t, s)
        mu = mu_from_noise(xt, fn(xt, np.full(n_mc, t), cond), t, s)
        quad = gaussian_kl_equal_cov(GaussianDiag(post.mean, var[t]), GaussianDiag(mu, var[t]), axis=1)
        r_ = post.var / var[t]
        offset = 0.5 * d * (r_ - 1.0 - math.log(r_))
        kls[t - 2], kl_se[t - 2] = _mean_se(quad + offset)

    prior = prior_kl(x0, s)
    total = recon - float(kls.sum()) - prior
    return ElboReport(recon, kls, prior, total, recon_se, kl_se)

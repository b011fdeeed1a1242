import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deskdiff.gaussian import (
    GaussianDiag,
    elbo_report,
    gaussian_kl,
    gaussian_kl_equal_cov,
    posterior,
    prior_kl,
)
from deskdiff.io import read_csv
from deskdiff.rng import make_rng
from deskdiff.schedule import SigmaMode, from_betas, make_linear_schedule

from oracles import full_gaussian_kl, grid_posterior, normal_pdf

# grid-Bayes oracle on beta=[0.1, 0.2], t=2, x_t=1, x0=0.5
POST_MEAN_HAND = 0.6582537460894389
POST_VAR_HAND = 0.2 * 0.1 / 0.28


def test_posterior_hand_case():
    s = from_betas([0.1, 0.2])
    p = posterior(np.array([1.0]), np.array([0.5]), 2, s)
    assert p.var == pytest.approx(POST_VAR_HAND, rel=1e-14)
    assert p.mean[0] == pytest.approx(POST_MEAN_HAND, rel=1e-12)
    gm, gv = grid_posterior([0.1, 0.2], 2, 1.0, 0.5)
    assert abs(p.mean[0] - gm) < 1e-9 and abs(p.var - gv) < 1e-9


def test_posterior_t1_degenerate():
    s = from_betas([0.1, 0.2])
    p = posterior(np.array([0.3]), np.array([-0.7]), 1, s)
    assert p.var == 0.0
    assert p.mean[0] == pytest.approx(-0.7, rel=1e-15)


def test_posterior_oracle_random_cases():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(200):
        betas = list(rng.uniform(0.02, 0.5, size=2))
        x0 = rng.uniform(-2, 2)
        x_t = rng.uniform(-2.5, 2.5)
        p = posterior(np.array([x_t]), np.array([x0]), 2, from_betas(betas))
        gm, gv = grid_posterior(betas, 2, x_t, x0)
        worst = max(worst, abs(p.mean[0] - gm), abs(p.var - gv))
    assert worst < 1e-6


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(1e-4, 0.5), min_size=2, max_size=40), st.floats(-3, 3), st.data())
def test_zero_noise_identity(betas, x0, data):
    s = from_betas(betas)
    t = data.draw(st.integers(2, len(betas)))
    x_t = math.sqrt(s.alpha_bar[t]) * x0
    p = posterior(np.array([x_t]), np.array([x0]), t, s)
    assert p.mean[0] == pytest.approx(math.sqrt(s.alpha_bar[t - 1]) * x0, rel=1e-12, abs=1e-300)


def test_kl_equal_cov_values():
    p = GaussianDiag(np.array([0.3]), 0.5)
    q = GaussianDiag(np.array([0.0]), 0.5)
    assert gaussian_kl_equal_cov(p, p) == 0.0
    assert gaussian_kl_equal_cov(p, q) == pytest.approx(0.09, rel=1e-14)
    # the full formula with equal variances has no extra constant
    assert gaussian_kl_equal_cov(p, q) == pytest.approx(full_gaussian_kl([0.3], [0.5], [0.0], [0.5]), rel=1e-12)


def test_kl_equal_cov_shift_invariant():
    p = GaussianDiag(np.array([0.3, -1.0]), 0.2)
    q = GaussianDiag(np.array([0.1, 0.4]), 0.2)
    shift = np.array([5.0, -2.5])
    a = gaussian_kl_equal_cov(p, q)
    b = gaussian_kl_equal_cov(GaussianDiag(p.mean + shift, 0.2), GaussianDiag(q.mean + shift, 0.2))
    assert a == pytest.approx(b, rel=1e-12)


def test_kl_equal_cov_rejects():
    with pytest.raises(ValueError):
        gaussian_kl_equal_cov(GaussianDiag(np.zeros(1), 0.5), GaussianDiag(np.zeros(1), 0.4))
    with pytest.raises(ValueError):
        gaussian_kl_equal_cov(GaussianDiag(np.zeros(1), 0.0), GaussianDiag(np.zeros(1), 0.0))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(-3, 3), st.floats(0.05, 3), st.floats(-3, 3), st.floats(0.05, 3)),
                min_size=1, max_size=5))
def test_full_kl_matches_textbook(rows):
    m1, v1, m2, v2 = (np.array(c) for c in zip(*rows))
    ours = gaussian_kl(GaussianDiag(m1, v1), GaussianDiag(m2, v2))
    assert ours == pytest.approx(full_gaussian_kl(m1, v1, m2, v2), rel=1e-10, abs=1e-12)
    assert ours >= -1e-12


def test_prior_term_default_schedule():
    s = make_linear_schedule()
    assert 0 <= prior_kl(np.array([0.9, -0.4]), s) < 1e-6


def oracle_noise(x0):
    x0 = np.asarray(x0, dtype=float)

    def fn(x_t, t, cond=None):
        ab = S_ORACLE.alpha_bar[np.asarray(t)][:, None]
        return (x_t - np.sqrt(ab) * x0) / np.sqrt(1 - ab)

    return fn


S_ORACLE = make_linear_schedule(50, 0.001, 0.2, SigmaMode.POSTERIOR_BETA)


def test_elbo_oracle_denoiser_zero_kl():
    x0 = np.array([0.4, -0.2])
    rep = elbo_report(x0, oracle_noise(x0), S_ORACLE, make_rng(0, "elbo"), n_mc=32)
    # posterior-beta variances coincide with the posterior, so every KL term vanishes
    np.testing.assert_allclose(rep.kl_terms, 0.0, atol=1e-12)
    assert rep.total == pytest.approx(rep.reconstruction_term - rep.kl_terms.sum() - rep.prior_term, rel=1e-14)


def test_elbo_zero_denoiser_closed_form():
    s = make_linear_schedule(20, 0.01, 0.3, SigmaMode.BETA)
    d = 1
    zero = lambda x, t, cond=None: np.zeros_like(x)  # noqa: E731
    rep = elbo_report(np.zeros(d), zero, s, make_rng(1, "elbo"), n_mc=4000)
    for t in range(2, s.T + 1):
        a, ab, abp, b = s.alpha[t], s.alpha_bar[t], s.alpha_bar[t - 1], s.beta[t]
        # x0 = 0: mean gap (mu_post - x_t / sqrt(a)) = c x_t with E[x_t^2] = 1 - ab
        c = math.sqrt(a) * (1 - abp) / (1 - ab) - 1 / math.sqrt(a)
        pv = b * (1 - abp) / (1 - ab)
        r = pv / b
        expect = c * c * (1 - ab) * d / (2 * b) + 0.5 * d * (r - 1 - math.log(r))
        k = t - 2
        assert abs(rep.kl_terms[k] - expect) < 5 * rep.kl_se[k] + 1e-12


def _grid_log_likelihood(x0, fn, s, lo=-8.0, hi=8.0, n=4001):
    """log p_theta(x0) by pushing the reverse-chain density through a grid."""
    g = np.linspace(lo, hi, n)
    dx = g[1] - g[0]
    var = s.model_var
    dens = normal_pdf(g, 0.0, 1.0)
    for t in range(s.T, 1, -1):
        mu = (g - s.beta[t] / math.sqrt(1 - s.alpha_bar[t]) * fn(g[:, None], np.full(n, t))[:, 0]) / math.sqrt(s.alpha[t])
        kern = normal_pdf(g[:, None], mu[None, :], var[t])  # rows: x_{t-1}, cols: x_t
        dens = kern @ dens * dx
    mu1 = (g - s.beta[1] / math.sqrt(1 - s.alpha_bar[1]) * fn(g[:, None], np.full(n, 1))[:, 0]) / math.sqrt(s.alpha[1])
    return math.log(float(np.sum(normal_pdf(x0, mu1, var[1]) * dens) * dx))


@pytest.mark.parametrize("mode", list(SigmaMode))
def test_elbo_is_a_lower_bound(mode):
    s = from_betas([0.1, 0.2, 0.3, 0.4], mode)
    fn = lambda x, t, cond=None: 0.5 * np.tanh(x) + 0.05 * np.asarray(t)[:, None]  # noqa: E731
    for x0 in (-0.5, 0.0, 0.8):
        rep = elbo_report(np.array([x0]), fn, s, make_rng(2, "elbo"), n_mc=20000)
        ll = _grid_log_likelihood(x0, fn, s)
        assert rep.total <= ll + 4 * rep.total_se


def test_elbo_csv(tmp_path):
    s = make_linear_schedule(5, 0.05, 0.2)
    x0 = np.array([0.1])
    rep = elbo_report(x0, oracle_noise(x0), s, make_rng(0), n_mc=4)
    rep.write_csv(tmp_path / "elbo.csv")
    rows = read_csv(tmp_path / "elbo.csv")
    assert list(rows[0]) == ["term", "t", "value", "std_err"]
    assert [r["term"] for r in rows] == ["reconstruction"] + ["kl"] * 4 + ["prior", "total"]


def test_elbo_rejects_bad_n_mc():
    with pytest.raises(ValueError):
        elbo_report(np.zeros(1), oracle_noise(np.zeros(1)), S_ORACLE, make_rng(0), n_mc=0)

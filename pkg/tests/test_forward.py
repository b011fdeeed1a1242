import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deskdiff.data import bimodal
from deskdiff.forward import (
    accumulated_noise_variance,
    forward_step,
    marginal_params,
    noising_step,
    sample_marginal,
    simulate_trajectory,
    write_trajectory_csv,
)
from deskdiff.io import read_csv
from deskdiff.rng import make_rng
from deskdiff.schedule import from_betas, make_linear_schedule

from oracles import accumulated_variance_naive

# 0.9 * 1.0 + sqrt(0.19) * 0.5, evaluated at 50 digits
NOISING_HAND = 1.1179449471770337


def moment_se(x):
    """Standard errors of the sample mean and sample variance."""
    n = x.size
    m = x.mean()
    v = x.var()
    m4 = np.mean((x - m) ** 4)
    return math.sqrt(v / n), math.sqrt(max(m4 - v * v, 0.0) / n)


def test_noising_step_boundaries():
    z = np.array([0.3, -1.2])
    np.testing.assert_array_equal(noising_step(np.array([5.0, 7.0]), 1.0, z), z)
    x = np.array([0.25, -2.0])
    np.testing.assert_array_equal(noising_step(x, 0.0, np.zeros(2)), x)


def test_noising_step_hand_value():
    out = noising_step(np.array([1.0]), 0.19, np.array([0.5]))
    assert out[0] == pytest.approx(NOISING_HAND, rel=1e-15)


def test_forward_step_uses_schedule_beta():
    s = from_betas([0.19, 0.5])
    out = forward_step(np.array([1.0]), 1, s, z=np.array([0.5]))
    assert out[0] == pytest.approx(NOISING_HAND, rel=1e-15)
    with pytest.raises(IndexError):
        forward_step(np.array([1.0]), 3, s, z=np.array([0.5]))


def test_marginal_params():
    s = from_betas([0.1, 0.2])
    m, v = marginal_params(np.array([1.0]), 0, s)
    assert m[0] == 1.0 and v == 0.0
    m, v = marginal_params(np.array([1.0]), 2, s)
    assert m[0] == pytest.approx(math.sqrt(0.72), rel=1e-15)
    assert v == pytest.approx(0.28, rel=1e-14)


def test_marginal_at_T_default():
    s = make_linear_schedule()
    x0 = np.array([0.7, -0.3])
    m, v = marginal_params(x0, s.T, s)
    assert np.linalg.norm(m) < 1e-4 * np.linalg.norm(x0)
    assert v == pytest.approx(1.0, abs=1e-12)


def test_sample_marginal_pinned_noise():
    s = make_linear_schedule(100, 0.001, 0.05)
    x0 = np.array([[0.4, -0.1]])
    xt, z = sample_marginal(x0, 37, s, z=np.zeros_like(x0))
    np.testing.assert_array_equal(xt, math.sqrt(s.alpha_bar[37]) * x0)
    # essentially pure noise: the output is the noise itself
    s2 = from_betas([0.999999999] * 3)
    zz = np.array([[0.3, 0.9]])
    xt, _ = sample_marginal(x0, 3, s2, z=zz)
    np.testing.assert_allclose(xt, zz, atol=1e-12)


def test_sample_marginal_array_t():
    s = make_linear_schedule(20, 0.01, 0.2)
    x0 = np.ones((3, 2))
    z = np.full((3, 2), 0.5)
    t = np.array([1, 10, 20])
    xt, _ = sample_marginal(x0, t, s, z=z)
    for k in range(3):
        expect, _ = sample_marginal(x0[k], int(t[k]), s, z=z[k])
        np.testing.assert_array_equal(xt[k], expect)


def test_sample_marginal_moments():
    s = make_linear_schedule(200, 0.001, 0.05)
    x0 = np.full((100_000, 1), 0.6)
    t = 80
    xt, _ = sample_marginal(x0, t, s, make_rng(3, "forward"))
    m, v = marginal_params(0.6, t, s)
    se_m, se_v = moment_se(xt)
    assert abs(xt.mean() - m) < 4 * se_m
    assert abs(xt.var() - v) < 4 * se_v


def test_trajectory_determinism_and_shape():
    s = make_linear_schedule(30, 0.01, 0.2)
    x0 = bimodal(7, make_rng(0, "data"))
    a = simulate_trajectory(x0, s, make_rng(5, "forward"))
    b = simulate_trajectory(x0, s, make_rng(5, "forward"))
    np.testing.assert_array_equal(a.states, b.states)
    assert a.states.shape == (31, 7, 1)
    np.testing.assert_array_equal(a.at(0), x0)
    c = simulate_trajectory(x0, s, make_rng(6, "forward"))
    assert not np.array_equal(a.final, c.final)


def test_trajectory_stride_keeps_ends():
    s = make_linear_schedule(25, 0.01, 0.2)
    tr = simulate_trajectory(np.zeros((2, 1)), s, make_rng(0), stride=10)
    assert list(tr.steps) == [0, 10, 20, 25]
    with pytest.raises(KeyError):
        tr.at(5)


def test_trajectory_csv(tmp_path):
    s = make_linear_schedule(3, 0.1, 0.2)
    tr = simulate_trajectory(np.array([[0.5, -0.5]]), s, make_rng(1))
    write_trajectory_csv(tmp_path / "t.csv", tr)
    rows = read_csv(tmp_path / "t.csv")
    assert list(rows[0]) == ["traj_id", "t", "component_index", "value"]
    assert len(rows) == 1 * 4 * 2
    assert float(rows[-1]["value"]) == tr.final[0, 1]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(1e-4, 0.6), min_size=1, max_size=80), st.data())
def test_variance_induction(betas, data):
    s = from_betas(betas)
    t = data.draw(st.integers(1, len(betas)))
    closed = 1.0 - s.alpha_bar[t]
    assert accumulated_noise_variance(s, t) == pytest.approx(closed, rel=1e-10)
    assert accumulated_variance_naive(betas, t) == pytest.approx(closed, rel=1e-10)


@pytest.mark.parametrize("t", [10, 100, 500])
def test_stepwise_matches_closed_form(t):
    s = make_linear_schedule()
    n = 100_000
    x0 = bimodal(n, make_rng(0, "data"))
    rng = make_rng(11, "forward")
    x = x0
    for k in range(1, t + 1):
        x = forward_step(x, k, s, rng)
    y, _ = sample_marginal(x0, t, s, make_rng(12, "forward"))
    (sm_x, sv_x), (sm_y, sv_y) = moment_se(x), moment_se(y)
    assert abs(x.mean() - y.mean()) < 4 * math.hypot(sm_x, sm_y)
    assert abs(x.var() - y.var()) < 4 * math.hypot(sv_x, sv_y)


def test_forward_limit_is_standard_normal():
    from scipy.stats import kstest

    s = make_linear_schedule()
    tr = simulate_trajectory(bimodal(2000, make_rng(0, "data")), s, make_rng(0, "forward"), stride=1000)
    assert kstest(tr.final.ravel(), "norm").pvalue > 0.01

import math

import mpmath
import numpy as np
import pytest

from conftest import make_params
from it2forecast.gradients import random_instance
from it2forecast.network import (ConsequentParams, consequent_interval, defuzzify, firing_report, forward,
                                 link_chain, link_closed_form, new_params, parameter_count, predict,
                                 type_reduce)


def test_consequent_interval_cases():
    p = ConsequentParams(np.array([[[1.0, 2.0]]]), np.array([[[0.5, 0.5]]]))
    assert consequent_interval([-1.0], 0, 0, p) == pytest.approx((-2.0, 0.0))
    assert consequent_interval([0.0], 0, 0, p) == pytest.approx((0.5, 1.5))
    crisp = ConsequentParams(np.array([[[1.0, 2.0, -1.0]]]), np.zeros((1, 1, 3)))
    lo, hi = consequent_interval([0.3, 0.4], 0, 0, crisp)
    assert lo == hi == pytest.approx(1.0 + 0.6 - 0.4)


def test_type_reduce_single_rule_is_halved():
    for q in (0.0, 0.3, 1.0):
        y_l, _ = type_reduce([1.0], [1.0], [2.0], [2.0], q, q)
        assert y_l == pytest.approx(1.0)


def test_type_reduce_two_rules():
    y_l, y_r = type_reduce([1, 1], [1, 1], np.array([0.0, 4.0]), np.array([0.0, 4.0]), 0.7, 0.2)
    assert y_l == pytest.approx(1.0) and y_r == pytest.approx(1.0)


def test_type_reduce_q_zero_uses_lower_only():
    y_l, _ = type_reduce([1.0, 0.5], [3.0, 9.0], np.array([2.0, 4.0]), np.zeros(2), 0.0, 0.0)
    assert y_l == pytest.approx((1 * 2 + 0.5 * 4) / 13.5)


def test_defuzzify():
    assert defuzzify(1.0, 3.0, 1.0) == 1.0
    assert defuzzify(1.0, 3.0, 0.5) == 2.0


def test_link_chain_examples():
    y = np.array([0.3, -0.2, 0.9])
    np.testing.assert_array_equal(link_chain(y, 5.0, 0.0), y)
    assert link_chain([0.9], 1.0, 0.1)[0] == pytest.approx(0.91)
    # a 0.124 link weight leaves 87.6 % of the layer-8 value in the first output
    assert 1 - 0.124 == pytest.approx(0.876)
    assert link_chain([1.0], 0.0, 0.124)[0] == pytest.approx(0.876)


def test_link_closed_form_random(rng):
    for _ in range(200):
        K = int(rng.integers(1, 11))
        y = rng.normal(size=K)
        l, xn = rng.uniform(), rng.normal()
        np.testing.assert_allclose(link_chain(y, xn, l), link_closed_form(y, xn, l), atol=1e-12, rtol=0)


def test_forward_single_rule_desk_calculation():
    # m1 = m2 collapses the interval, s = 0 makes the consequent crisp
    p = make_params(n=2, M=1, K=1, m1=0.5, m2=0.5, sigma=0.2, c=0.0, l=0.0)
    p.c[0, 0] = [0.2, 1.0, 0.5]
    x = np.array([0.3, 0.7])
    y, trace = forward(x, p)
    g = math.exp(-0.5 * (0.2 / 0.2) ** 2)
    assert trace.mu_lower[0] == pytest.approx([g, g])
    log_co = sum(-0.5 * (xi - 0.5) ** 2 for xi in x)
    f = -1.0 / (2 * math.log(g) + log_co)
    assert trace.f_lower[0, 0] == pytest.approx(f) and trace.f_upper[0, 0] == pytest.approx(f)
    w = 0.2 + 0.3 + 0.35
    assert y[0] == pytest.approx(w / 2)  # single-rule halving of the reduction


def test_forward_deterministic(small_params, rng):
    x = rng.uniform(size=small_params.n)
    a, _ = forward(x, small_params)
    b, _ = forward(x, small_params)
    assert a.tobytes() == b.tobytes()


def test_forward_input_shape_checked(small_params):
    with pytest.raises(ValueError):
        forward(np.zeros(small_params.n + 1), small_params)


def test_forward_twelve_inputs_small_memberships():
    p = make_params(n=12, M=2, K=3, m1=0.0, m2=0.0, sigma=0.1, c=0.3, s=0.05)
    x = np.full(12, 0.9)
    y, trace = forward(x, p)
    assert np.all(np.isfinite(y))
    mpmath.mp.dps = 50
    grade = mpmath.exp(-mpmath.mpf("0.5") * (mpmath.mpf("0.9") / mpmath.mpf("0.1")) ** 2)
    # clamping keeps each grade >= 1e-12; exp(-40.5) ~ 2.6e-18 is clamped
    clamped = max(grade, mpmath.mpf("1e-12"))
    rule = clamped ** 12
    co = mpmath.exp(-mpmath.mpf("0.5") * mpmath.mpf("0.4") ** 2) ** 12
    oracle = -1 / mpmath.log(rule * co)
    assert trace.f_lower[0, 0] == pytest.approx(float(oracle), rel=1e-10)
    assert float(rule) == 0.0 or float(rule) < 1e-140  # the raw product is useless in double


def test_trace_orderings(rng):
    for _ in range(300):
        p, x, _ = random_instance(rng, n_max=5, M_max=4, K_max=4)
        _, tr = forward(x, p)
        assert np.all(tr.mu_lower <= tr.mu_upper)
        assert np.all(tr.f_lower <= tr.f_upper) and np.all(tr.f_lower > 0)
        assert np.all(tr.w_l <= tr.w_r)
        assert np.all(np.isfinite(tr.y_l)) and np.all(np.isfinite(tr.y_r))


def test_rule_permutation_invariance(rng):
    p, x, _ = random_instance(rng, n_max=4, M_max=4, K_max=3)
    perm = rng.permutation(p.M)
    q = p.copy()
    for name in ("m1", "m2", "sigma", "c", "s"):
        setattr(q, name, getattr(p, name)[perm])
    np.testing.assert_allclose(forward(x, p)[0], forward(x, q)[0], atol=1e-12)


def test_collapsed_interval_gives_equal_bounds(rng):
    p, x, _ = random_instance(rng)
    p.m2 = p.m1.copy()
    p.s[:] = 0
    p.q_r = p.q_l.copy()
    _, tr = forward(x, p)
    np.testing.assert_allclose(tr.y_l, tr.y_r, atol=1e-14)


def test_firing_report(rng):
    p = make_params(n=1, M=1, K=1, m1=0.0, m2=0.0, sigma=1.0)
    rule_f, _ = firing_report(np.array([math.sqrt(2.0)]), p)  # membership exp(-1)
    assert rule_f[0].lower == pytest.approx(1.0)
    for _ in range(50):
        p, x, _ = random_instance(rng)
        rule_f, grid = firing_report(x, p)
        for i in range(p.M):
            for k in range(p.K):
                assert grid[i][k].lower <= rule_f[i].lower + 1e-15
                assert grid[i][k].upper <= rule_f[i].upper + 1e-15


def test_parameter_count_formula(rng):
    for _ in range(20):
        n, M, K = (int(v) for v in rng.integers(1, 8, 3))
        p = make_params(n=n, M=M, K=K)
        assert parameter_count(p) == n * 3 * M + 2 * K * n + (n + 1) * 2 * M * K + 2 * K + K + 1
        assert parameter_count(p, "stage1") == parameter_count(p) - n * 3 * M


def test_new_params_and_rule_edits():
    p = new_params(3, 2)
    assert p.M == 0 and np.all(p.q_o == 0.5)
    p = p.with_rule(np.zeros(3), np.ones(3), np.ones(3), np.ones((2, 4)), np.zeros((2, 4)))
    p = p.with_rule(np.zeros(3), np.zeros(3), np.ones(3), 2 * np.ones((2, 4)), np.zeros((2, 4)))
    assert p.M == 2
    q = p.without_rule(0)
    assert q.M == 1 and np.all(q.c == 2)
    p.check()


def test_check_reports_violations():
    p = make_params()
    p.s[0, 0, 0] = -0.1
    with pytest.raises(ValueError, match="s >= 0"):
        p.check()


def test_predict_matches_forward(small_params, rng):
    X = rng.uniform(size=(5, small_params.n))
    P = predict(X, small_params)
    for row, pred in zip(X, P):
        np.testing.assert_array_equal(pred, forward(row, small_params)[0])

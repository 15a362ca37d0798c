import numpy as np
import pytest

from conftest import make_params
from it2forecast import backend
from it2forecast.gradients import (STAGE1, STAGE2, GradientSet, TrainConfig, TrainingDiverged, active_fields,
                                   backward, flatten, grad_l, gradcheck, loss, mse, numerical_gradient,
                                   project, random_instance, sgd_step, train_epochs)
from it2forecast.network import forward, link_chain, parameter_count


def test_loss_values():
    assert loss([1, 2], [1, 2]) == 0
    assert loss([1, 0, 0], [0, 0, 0]) == 0.5
    assert loss([0.1, 0.2, 0.3], [0, 0, 0]) == pytest.approx(0.07)


def test_zero_error_gives_zero_gradient(small_params, rng):
    x = rng.uniform(size=small_params.n)
    y, trace = forward(x, small_params)
    g = backward(trace, x, y, small_params)
    assert g.max_abs() == 0.0


def test_stage1_zeroes_antecedents(small_params, rng):
    x = rng.uniform(size=small_params.n)
    _, trace = forward(x, small_params)
    t = rng.normal(size=small_params.K)
    g1 = backward(trace, x, t, small_params, STAGE1)
    g2 = backward(trace, x, t, small_params, STAGE2)
    for name in ("m1", "m2", "sigma"):
        assert not np.any(getattr(g1, name))
    assert np.any(g2.m1) or np.any(g2.sigma)
    for name in ("c", "s", "q_o", "co_m"):
        np.testing.assert_array_equal(getattr(g1, name), getattr(g2, name))


def test_active_field_count_matches_formula(small_params):
    n2 = sum(np.size(getattr(small_params, f)) for f in active_fields(small_params, STAGE2))
    n1 = sum(np.size(getattr(small_params, f)) for f in active_fields(small_params, STAGE1))
    assert n2 == parameter_count(small_params)
    assert n2 - n1 == 3 * small_params.M * small_params.n


def test_identity_link_jacobian():
    # with l = 0 every output only sees its own layer-8 value
    y = np.array([0.2, 0.5, -0.1])
    base = link_chain(y, 0.7, 0.0)
    for k in range(3):
        bumped = y.copy()
        bumped[k] += 1e-3
        d = (link_chain(bumped, 0.7, 0.0) - base) / 1e-3
        np.testing.assert_allclose(d, np.eye(3)[k], atol=1e-12)


def test_grad_l_first_output_at_zero_link():
    p = make_params(n=2, K=1, l=0.0, c=0.3)
    x = np.array([0.2, 0.9])
    _, trace = forward(x, p)
    # E = (y - t)^2 / 2 with t = y - 1, so dE/dl = dy/dl = x_n - y'
    t = trace.y - 1.0
    assert grad_l(trace, t, p) == pytest.approx(x[-1] - trace.y_defuzz[0])


def test_grad_l_vanishes_for_constant_chain():
    p = make_params(n=1, K=3, l=0.3)
    x = np.array([0.5])
    _, trace = forward(x, p)
    trace.y_defuzz[:] = x[-1]
    trace.y[:] = link_chain(trace.y_defuzz, x[-1], p.l)
    assert grad_l(trace, trace.y + 1.0, p) == pytest.approx(0.0, abs=1e-15)


def test_grad_l_finite_difference(rng):
    for _ in range(20):
        p, x, t = random_instance(rng)
        _, trace = forward(x, p)
        h = 1e-6
        up, dn = p.copy(), p.copy()
        up.l += h
        dn.l -= h
        fd = (loss(forward(x, up)[0], t) - loss(forward(x, dn)[0], t)) / (2 * h)
        assert grad_l(trace, t, p) == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_small_network_gradient_matches_fd():
    rng = np.random.default_rng(3)
    for _ in range(10):
        p, x, t = random_instance(rng, n_max=2, M_max=2, K_max=2)
        _, trace = forward(x, p)
        g = flatten(backward(trace, x, t, p), active_fields(p))
        np.testing.assert_allclose(g, numerical_gradient(p, x, t), rtol=1e-4, atol=1e-8)


@pytest.mark.parametrize("flags", [dict(use_co=False), dict(use_link=False), dict(shared_consequent=True)])
def test_gradcheck_ablations(flags):
    rng = np.random.default_rng(11)
    for _ in range(10):
        p, x, t = random_instance(rng, **flags)
        _, trace = forward(x, p)
        g = flatten(backward(trace, x, t, p), active_fields(p))
        np.testing.assert_allclose(g, numerical_gradient(p, x, t), rtol=1e-4, atol=1e-8)


def test_gradcheck_python_and_kernel():
    assert gradcheck(seed=2, trials=20).passed
    if backend.NAME == "cython":
        assert gradcheck(seed=2, trials=20, use_kernel=True).passed


def test_sgd_zero_gradient_is_identity(small_params):
    out = sgd_step(small_params, GradientSet.zeros_like(small_params), 0.1)
    for name in ("m1", "m2", "sigma", "c", "s", "q_o"):
        np.testing.assert_array_equal(getattr(out, name), getattr(small_params, name))
    assert out.l == small_params.l


def test_projection_rules():
    p = make_params(n=1, K=1, s=0.0, q=0.9, l=0.5)
    g = GradientSet.zeros_like(p)
    g.s[:] = 0.1        # s -> -0.01
    g.q_o[:] = -4.0     # q_o -> 1.3
    g.m1[:] = -3.0      # m1 -> 0.7
    g.m2[:] = 1.0       # m2 -> 0.5, so the means cross
    g.sigma[:] = 10.0
    g.l = 100.0
    out = sgd_step(p, g, 0.1)
    assert np.all(out.s == 0)
    assert np.all(out.q_o == 1.0)
    assert np.all(out.m1 <= out.m2)
    np.testing.assert_allclose(out.m1, 0.6)
    np.testing.assert_allclose(out.m2, 0.6)
    assert np.all(out.sigma >= 1e-3)
    assert out.l == 0.0
    out.check()


def test_projection_keeps_link_off():
    p = make_params(use_link=False)
    p.l = 0.4
    assert project(p).l == 0.0


def test_train_zero_iterations(small_params, rng):
    X = rng.uniform(size=(20, small_params.n))
    T = rng.uniform(size=(20, small_params.K))
    out, err = train_epochs(X, T, small_params, TrainConfig(iterations=0))
    assert err == pytest.approx(mse(small_params, X, T))
    np.testing.assert_array_equal(out.c, small_params.c)


def test_convex_toy_loss_non_increasing(rng):
    # one rule, crisp consequent, antecedents fixed: loss is convex in c
    p = make_params(n=2, M=1, K=1, s=0.0, l=0.0)
    X = rng.uniform(size=(50, 2))
    T = (0.5 * X[:, :1] + 0.1)
    cfg = TrainConfig(eta=0.01, iterations=1, mode=STAGE1, seed=0)
    errs = [mse(p, X, T)]
    for _ in range(30):
        p, e = train_epochs(X, T, p, cfg)
        errs.append(e)
    assert all(b <= a + 1e-12 for a, b in zip(errs, errs[1:]))
    assert errs[-1] < errs[0]


def test_train_diverges_loudly(rng):
    p = make_params(n=2, M=1, K=1, c=1.0)
    X = rng.uniform(size=(10, 2))
    T = np.full((10, 1), 1e300)
    with pytest.raises(TrainingDiverged):
        train_epochs(X, T, p, TrainConfig(eta=1e10, iterations=3))


def test_training_deterministic(small_params, rng):
    X = rng.uniform(size=(30, small_params.n))
    T = rng.uniform(size=(30, small_params.K))
    cfg = TrainConfig(iterations=5, mode=STAGE2, seed=4)
    a, ea = train_epochs(X, T, small_params, cfg)
    b, eb = train_epochs(X, T, small_params, cfg)
    assert ea == eb and a.c.tobytes() == b.c.tobytes()


def test_invalid_train_config():
    with pytest.raises(ValueError):
        TrainConfig(eta=0)
    with pytest.raises(ValueError):
        TrainConfig(mode="adam")

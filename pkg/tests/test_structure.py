import numpy as np
import pytest

from it2forecast.clustering import Cluster, ClusterBase
from it2forecast.gradients import STAGE2, active_fields, backward, flatten, mse, numerical_gradient
from it2forecast.network import forward
from it2forecast.structure import (L_HR_SENTINEL, Candidate, LearnConfig, LearnerState, RuleBase,
                                   global_optimize, grow_candidate, initial_rules, learn, remove_candidate,
                                   try_grow, try_remove)

def _toy(n=300, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(n, 1))
    return X, 0.5 * X + 0.1


def _state(L_hr, T_g=0.0025, T_r=0.0025):
    s = LearnerState(T_g, T_r, 10)
    s.L_hr = L_hr
    return s


def _setup(X, T, config, clusters):
    return initial_rules(X, T.shape[1], config), ClusterBase(clusters)


def _cand(loss, cluster, params=None, index=0):
    return Candidate(loss, index, cluster, params)


def test_grow_threshold_cases():
    X, T = _toy(20)
    cfg = LearnConfig(grow_iterations=0)
    c = Cluster([0.5], [0.2])
    rules, bases = _setup(X, T, cfg, [c])
    assert not try_grow(_state(0.010), rules, bases, _cand(0.008, c))
    st = _state(0.010)
    assert try_grow(st, rules, bases, _cand(0.007, c, rules.params))
    assert st.F_s == 1 and st.L_hr == 0.007 and bases.selected == [c]


def test_sentinel_accepts_first_growth():
    X, T = _toy(30)
    cfg = LearnConfig(grow_iterations=2)
    rules, bases = _setup(X, T, cfg, [Cluster([0.5], [0.3])])
    st = LearnerState(cfg.T_g, cfg.T_r, 1)
    assert st.L_hr == L_HR_SENTINEL
    cand = grow_candidate(st, rules, bases, X, T, cfg)
    assert cand.index == 0 and np.isfinite(cand.loss)
    assert try_grow(st, rules, bases, cand) and rules.M == 1


def test_grow_unavailable_when_no_clusters():
    X, T = _toy(10)
    cfg = LearnConfig()
    rules, bases = _setup(X, T, cfg, [])
    assert grow_candidate(LearnerState(cfg.T_g, cfg.T_r, 1), rules, bases, X, T, cfg) is None


def _grown(X, T, cfg, clusters):
    """Rule base holding one rule per cluster, in the given order."""
    rules, bases = _setup(X, T, cfg, clusters)
    st = LearnerState(cfg.T_g, cfg.T_r, 5)
    for c in clusters:
        rest = [a for a in bases.available if a is not c]
        bases.available = [c]
        cand = grow_candidate(st, rules, bases, X, T, cfg)
        bases.available += rest
        st.L_hr = L_HR_SENTINEL
        assert try_grow(st, rules, bases, cand)
    return st, rules, bases


@pytest.mark.parametrize("L_r, L_hr, removed", [(0.010, 0.010, True), (0.012, 0.010, True), (0.013, 0.010, False)])
def test_remove_threshold_cases(L_r, L_hr, removed):
    X, T = _toy(20)
    cfg = LearnConfig(grow_iterations=0)
    _, rules, bases = _grown(X, T, cfg, [Cluster([0.2], [0.2]), Cluster([0.8], [0.2])])
    s = _state(L_hr)
    cand = _cand(L_r, bases.selected[1], rules.params.without_rule(1), index=1)
    assert try_remove(s, rules, bases, cand) is removed
    assert rules.M == (1 if removed else 2)


def test_remove_exact_threshold_keeps():
    X, T = _toy(20)
    cfg = LearnConfig(grow_iterations=0)
    st, rules, bases = _grown(X, T, cfg, [Cluster([0.2], [0.2]), Cluster([0.8], [0.2])])
    s = _state(0.5, T_g=0.25, T_r=0.25)
    cand = _cand(0.75, bases.selected[0], rules.params.without_rule(0), index=0)
    assert not try_remove(s, rules, bases, cand)
    assert rules.M == 2 and s.F_s == 0


def test_remove_identical_rules_tie_breaks_low():
    X, T = _toy(40)
    cfg = LearnConfig(grow_iterations=0)
    st, rules, bases = _grown(X, T, cfg, [Cluster([0.5], [0.2]), Cluster([0.5], [0.2])])
    rules.params.c[1] = rules.params.c[0]
    rules.params.s[1] = rules.params.s[0]
    cand = remove_candidate(st, rules, bases, X, T, cfg)
    assert cand.losses[0] == cand.losses[1] and cand.index == 0


def test_remove_needs_two_rules():
    X, T = _toy(10)
    cfg = LearnConfig()
    rules, bases = _setup(X, T, cfg, [Cluster([0.5], [0.2])])
    with pytest.raises(ValueError):
        remove_candidate(LearnerState(cfg.T_g, cfg.T_r, 1), rules, bases, X, T, cfg)


def test_dead_rule_removed():
    rng = np.random.default_rng(0)
    X = rng.uniform(size=(200, 1))
    T = 0.5 + 0.4 * np.sin(2 * np.pi * X)
    cfg = LearnConfig(grow_iterations=300, T_g=0.001, T_r=0.001)
    # the third rule sits far outside the data and never fires
    clusters = [Cluster([0.25], [0.15]), Cluster([0.75], [0.15]), Cluster([40.0], [0.01])]
    st, rules, bases = _grown(X, T, cfg, clusters)
    st.L_hr = mse(rules.params, X, T)
    cand = remove_candidate(st, rules, bases, X, T, cfg)
    assert cand.index == 2
    assert cand.loss - st.L_hr < cfg.T_r
    assert try_remove(st, rules, bases, cand)
    assert rules.M == 2 and st.F_s == 2 and clusters[2] in bases.available


def test_global_optimize_zero_iterations_identity():
    X, T = _toy(30)
    cfg = LearnConfig(grow_iterations=0, finetune_iterations=0)
    st, rules, bases = _grown(X, T, cfg, [Cluster([0.3], [0.2]), Cluster([0.7], [0.2])])
    before = rules.params.copy()
    global_optimize(st, rules, X, T, cfg)
    for name in ("m1", "m2", "sigma", "c", "s", "q_o"):
        np.testing.assert_array_equal(getattr(rules.params, name), getattr(before, name))


def test_gradients_still_valid_after_global_step():
    X, T = _toy(60)
    cfg = LearnConfig(grow_iterations=5, finetune_iterations=10)
    st, rules, bases = _grown(X, T, cfg, [Cluster([0.3], [0.2]), Cluster([0.7], [0.2])])
    p, _ = global_optimize(st, rules, X, T, cfg)
    x = np.array([0.4321])
    t = np.array([0.3])
    mid = 0.5 * (p.m1 + p.m2)
    assert np.min(np.abs(np.concatenate([x - p.m1, x - p.m2, x - mid], axis=None))) > 1e-5
    _, trace = forward(x, p)
    g = flatten(backward(trace, x, t, p), active_fields(p))
    np.testing.assert_allclose(g, numerical_gradient(p, x, t, STAGE2), rtol=1e-4, atol=1e-8)


def test_episode_max_one():
    X, T = _toy(50)
    res = learn(X, T, LearnConfig(episode_max=1, grow_iterations=3, n_clusters=3))
    assert len(res.log) == 1 and res.log[0].action == "grow"


def test_linear_toy_converges():
    X, T = _toy(300)
    res = learn(X, T, LearnConfig(n_clusters=3, grow_iterations=200, finetune_iterations=200,
                                  T_g=1e-4, T_r=1e-4))
    assert mse(res.params, X, T) < 1e-3
    assert 1 <= res.params.M <= 3


def test_learning_invariants_and_determinism():
    rng = np.random.default_rng(1)
    X = rng.uniform(size=(150, 2))
    T = np.column_stack([np.sin(3 * X[:, 0]) * X[:, 1], X[:, 0] ** 2])
    cfg = LearnConfig(n_clusters=4, grow_iterations=15, finetune_iterations=15, T_g=1e-4, T_r=1e-4,
                      episode_max=12, seed=3)
    a = learn(X, T, cfg)
    b = learn(X, T, cfg)
    assert [e.line() for e in a.log] == [e.line() for e in b.log]
    assert max(e.M for e in a.log) <= cfg.n_clusters
    prev = L_HR_SENTINEL
    for e in a.log:
        assert e.available + e.selected == cfg.n_clusters
        if e.action == "grow" and not e.finetuned:
            assert prev - e.L_hr >= cfg.T_g
        if e.action == "remove" and not e.finetuned:
            assert e.L_hr - prev < cfg.T_r
        prev = e.L_hr


def test_parallel_candidates_match_sequential():
    X, T = _toy(80)
    cfg = LearnConfig(n_clusters=4, grow_iterations=10, finetune_iterations=10, T_g=1e-5, T_r=1e-5,
                      episode_max=5)
    seq = learn(X, T, cfg)
    par = learn(X, T, LearnConfig(**{**cfg.__dict__, "workers": 4}))
    assert [e.line() for e in seq.log] == [e.line() for e in par.log]


def test_invalid_thresholds():
    with pytest.raises(ValueError, match="T_r"):
        LearnConfig(T_g=0.001, T_r=0.002)
    with pytest.raises(ValueError):
        LearnerState(0.001, 0.002, 1)

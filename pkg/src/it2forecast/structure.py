"""Self-organizing rule learning: grow, remove and fine-tune episodes.

Every rule is born from one FCM cluster.  Stage 1 alternates growing (try
every unused cluster as an extra rule) and removing (try dropping every
rule) with the antecedents frozen; once neither helps, the status flag
reaches 3 and stage 2 tunes all parameters jointly.  A second consecutive
failure at flag 3 ends learning.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .clustering import UPSILON, Cluster, ClusterBase, antecedent_arrays, fcm, init_co_antecedent
from .gradients import STAGE1, STAGE2, TrainConfig, mse, train_epochs
from .network import NetworkParams, new_params

log = logging.getLogger(__name__)

L_HR_SENTINEL = 1e10
# seed-stream tags so grow, remove and fine-tune draws never collide
_GROW, _REMOVE, _FINETUNE = 1, 2, 3


@dataclass
class LearnConfig:
    T_g: float = 0.0025
    T_r: float = 0.0025
    eta: float = 0.03
    n_clusters: int = 5
    upsilon: float = UPSILON
    l_init: float = 0.1
    episode_max: int = 100
    grow_iterations: int = 1000
    finetune_iterations: int = 3000
    seed: int = 0
    workers: int = 1
    use_co: bool = True
    use_link: bool = True
    shared_consequent: bool = False
    fcm_fuzzifier: float = 2.0
    fcm_tol: float = 1e-6
    fcm_max_iter: int = 300

    def __post_init__(self):
        if self.T_r > self.T_g:
            raise ValueError(f"T_r ({self.T_r}) must not exceed T_g ({self.T_g}); "
                             "otherwise growing and removing can cycle forever")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.n_clusters < 1 or self.episode_max < 0:
            raise ValueError("n_clusters must be >= 1 and episode_max >= 0")
        if self.grow_iterations < 0 or self.finetune_iterations < 0:
            raise ValueError("iteration counts must be >= 0")
        if not 0.0 <= self.l_init <= 1.0:
            raise ValueError("l_init must lie in [0, 1]")


@dataclass
class LearnerState:
    T_g: float
    T_r: float
    episode_max: int
    L_hr: float = L_HR_SENTINEL
    F_s: int = 0
    episode: int = 0

    def __post_init__(self):
        if self.T_r > self.T_g:
            raise ValueError("T_r must not exceed T_g")


@dataclass
class RuleBase:
    """Accepted rules: the network parameters plus the cluster behind each rule."""

    params: NetworkParams
    provenance: list = field(default_factory=list)

    @property
    def M(self) -> int:
        return self.params.M

    def check(self, bases: ClusterBase) -> None:
        if len(self.provenance) != self.M:
            raise AssertionError("every rule needs exactly one source cluster")
        if sorted(self.provenance) != sorted(c.id for c in bases.selected):
            raise AssertionError("rule provenance does not match the selected clusters")


@dataclass
class Candidate:
    loss: float
    index: int          # position in B^C (grow) or in the rule base (remove)
    cluster: Cluster
    params: NetworkParams
    losses: list = field(default_factory=list)


@dataclass
class LogEntry:
    episode: int
    action: str          # grow | remove | hold | stop
    M: int
    L_hr: float
    F_s: int
    finetuned: bool = False
    available: int = 0
    selected: int = 0

    def line(self) -> str:
        return (f"episode={self.episode} action={self.action} M={self.M} L_hr={self.L_hr!r} "
                f"F_s={self.F_s} finetune={'yes' if self.finetuned else 'no'} "
                f"B_C={self.available} B_S={self.selected}")


@dataclass
class LearnResult:
    params: NetworkParams
    log: list
    state: LearnerState
    bases: ClusterBase
    rules: RuleBase

    @property
    def flags(self) -> list:
        return [0] + [e.F_s for e in self.log]


def _rng(seed, episode, tag, idx):
    return np.random.default_rng(np.random.SeedSequence([seed, episode, tag, idx]))


def _fit(params, X, T, iterations, eta, mode, rng):
    cfg = TrainConfig(eta=eta, iterations=iterations, mode=mode, seed=int(rng.integers(2 ** 63)))
    return train_epochs(X, T, params, cfg)


def _map(fn, items, workers):
    if workers and workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def _best(results, pick):
    losses = [r[1] for r in results]
    b = int(np.argmin(losses))  # first minimum: lowest index wins ties
    return Candidate(losses[b], b, pick(b), results[b][0], losses)


def grow_candidate(state: LearnerState, rules: RuleBase, bases: ClusterBase, X, T, config: LearnConfig):
    """Train one hypothetical network per available cluster; return the best or ``None``."""
    pool = list(bases.available)
    if not pool:
        return None
    kc = 1 if config.shared_consequent else T.shape[1]
    n = X.shape[1]

    def trial(h):
        rng = _rng(config.seed, state.episode, _GROW, h)
        m1, m2, sigma = antecedent_arrays(pool[h], config.upsilon)
        c = rng.uniform(-0.5, 0.5, size=(kc, n + 1))
        s = rng.uniform(0.0, 0.1, size=(kc, n + 1))
        net = rules.params.with_rule(m1, m2, sigma, c, s)
        return _fit(net, X, T, config.grow_iterations, config.eta, STAGE1, rng)

    results = _map(trial, list(range(len(pool))), config.workers)
    return _best(results, lambda b: pool[b])


def try_grow(state: LearnerState, rules: RuleBase, bases: ClusterBase, cand: Candidate | None) -> bool:
    """Accept the grown network iff it lowers the loss by at least T_g."""
    if cand is None or not state.L_hr - cand.loss >= state.T_g:
        return False
    rules.params = cand.params
    rules.provenance.append(cand.cluster.id)
    bases.select(cand.cluster)
    state.L_hr = cand.loss
    state.F_s = 1
    return True


def remove_candidate(state: LearnerState, rules: RuleBase, bases: ClusterBase, X, T, config: LearnConfig):
    """Retrain without each rule in turn; return the cheapest removal."""
    if rules.M < 2:
        raise ValueError("rule removal needs at least two rules")
    by_id = {c.id: c for c in bases.selected}

    def trial(h):
        rng = _rng(config.seed, state.episode, _REMOVE, h)
        return _fit(rules.params.without_rule(h), X, T, config.grow_iterations, config.eta, STAGE1, rng)

    results = _map(trial, list(range(rules.M)), config.workers)
    return _best(results, lambda b: by_id[rules.provenance[b]])


def try_remove(state: LearnerState, rules: RuleBase, bases: ClusterBase, cand: Candidate) -> bool:
    """Remove iff the loss increase stays strictly below T_r.

    Rejection leaves everything untouched; the caller escalates the flag.
    """
    if not cand.loss - state.L_hr < state.T_r:
        return False
    rules.params = cand.params
    del rules.provenance[cand.index]
    bases.release(cand.cluster)
    state.L_hr = cand.loss
    state.F_s = 2
    return True


def global_optimize(state: LearnerState, rules: RuleBase, X, T, config: LearnConfig):
    """Stage 2: tune every parameter, antecedents included."""
    if rules.M < 1:
        raise ValueError("global optimization needs at least one rule")
    rng = _rng(config.seed, state.episode, _FINETUNE, 0)
    params, L_gl = _fit(rules.params, X, T, config.finetune_iterations, config.eta, STAGE2, rng)
    rules.params = params
    state.L_hr = L_gl
    return params, L_gl


def initial_rules(X, K: int, config: LearnConfig) -> RuleBase:
    co_m, co_sigma = init_co_antecedent(X, K)
    if not config.use_co:
        co_m, co_sigma = np.zeros_like(co_m), np.ones_like(co_sigma)
    p = new_params(X.shape[1], K, use_co=config.use_co, use_link=config.use_link,
                   shared_consequent=config.shared_consequent, l=config.l_init,
                   co_m=co_m, co_sigma=co_sigma)
    return RuleBase(p, [])


def learn(X, T, config: LearnConfig, clusters=None, on_episode=None) -> LearnResult:
    """Run the episode loop on normalized training data.

    Parameters
    ----------
    X, T : arrays (N, n) and (N, K)
    clusters : list of Cluster, optional
        Overrides the FCM partition (used to engineer test scenarios).
    on_episode : callable, optional
        Called with every ``LogEntry`` as soon as it is recorded.
    """
    X = np.ascontiguousarray(X, dtype=float)
    T = np.ascontiguousarray(T, dtype=float).reshape(len(X), -1)
    if clusters is None:
        clusters = fcm(X, config.n_clusters, config.fcm_fuzzifier, config.fcm_tol,
                       config.fcm_max_iter, seed=config.seed)
    bases = ClusterBase(clusters)
    rules = initial_rules(X, T.shape[1], config)
    state = LearnerState(config.T_g, config.T_r, config.episode_max)
    entries = []

    def record(action, finetuned=False):
        bases.check()
        rules.check(bases)
        e = LogEntry(state.episode, action, rules.M, state.L_hr, state.F_s, finetuned,
                     len(bases.available), len(bases.selected))
        entries.append(e)
        log.info(e.line())
        if on_episode is not None:
            on_episode(e)

    for episode in range(1, config.episode_max + 1):
        state.episode = episode
        # stage 1
        if try_grow(state, rules, bases, grow_candidate(state, rules, bases, X, T, config)):
            action = "grow"
        elif rules.M <= 1:
            if state.F_s == 3:
                record("stop")
                break
            state.F_s, action = 3, "hold"
        elif try_remove(state, rules, bases, remove_candidate(state, rules, bases, X, T, config)):
            action = "remove"
        else:
            if state.F_s == 3:
                record("stop")
                break
            state.F_s, action = 3, "hold"
        # stage 2
        finetuned = False
        if state.F_s == 3:
            global_optimize(state, rules, X, T, config)
            finetuned = True
        record(action, finetuned)

    return LearnResult(rules.params, entries, state, bases, rules)

"""Nine-layer interval type-2 forecasting network: parameters and forward pass."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .fuzzy import CoMf, FiringInterval, It2Mf, clamp_log, lmf_log, log_gaussian, umf_log

SIGMA_MIN = 1e-3


@dataclass
class ConsequentParams:
    """Interval TSK coefficients, shape (M, Kc, n + 1); column 0 is the bias.

    ``Kc`` is K for per-output consequents and 1 when a single consequent per
    rule is shared by every output.
    """

    c: np.ndarray
    s: np.ndarray


@dataclass
class ReductionParams:
    q_l: np.ndarray
    q_r: np.ndarray
    q_o: np.ndarray


@dataclass
class NetworkParams:
    """Complete trainable parameter set.

    Antecedent arrays are (M, n), co-antecedent arrays (K, n).  The three
    structural flags switch off the co-antecedent layer, the link layer, or
    the per-output consequents for ablation runs.
    """

    m1: np.ndarray
    m2: np.ndarray
    sigma: np.ndarray
    co_m: np.ndarray
    co_sigma: np.ndarray
    c: np.ndarray
    s: np.ndarray
    q_l: np.ndarray
    q_r: np.ndarray
    q_o: np.ndarray
    l: float
    use_co: bool = True
    use_link: bool = True
    shared_consequent: bool = False

    def __post_init__(self):
        for name in ("m1", "m2", "sigma", "co_m", "co_sigma", "c", "s", "q_l", "q_r", "q_o"):
            setattr(self, name, np.array(getattr(self, name), dtype=float))
        self.l = float(self.l)
        M, n = self.m1.shape
        K = self.q_o.shape[0]
        kc = 1 if self.shared_consequent else K
        expected = {
            "m2": (M, n), "sigma": (M, n), "co_m": (K, n), "co_sigma": (K, n),
            "c": (M, kc, n + 1), "s": (M, kc, n + 1), "q_l": (K,), "q_r": (K,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def n(self) -> int:
        return self.m1.shape[1]

    @property
    def M(self) -> int:
        return self.m1.shape[0]

    @property
    def K(self) -> int:
        return self.q_o.shape[0]

    @property
    def consequents(self) -> ConsequentParams:
        return ConsequentParams(self.c, self.s)

    @property
    def reduction(self) -> ReductionParams:
        return ReductionParams(self.q_l, self.q_r, self.q_o)

    def antecedent(self, i: int, j: int) -> It2Mf:
        return It2Mf(self.m1[i, j], self.m2[i, j], self.sigma[i, j])

    def co_antecedent(self, k: int, j: int) -> CoMf:
        return CoMf(self.co_m[k, j], self.co_sigma[k, j])

    def consequent_index(self, k: int) -> int:
        return 0 if self.shared_consequent else k

    def copy(self) -> "NetworkParams":
        return copy.deepcopy(self)

    def without_rule(self, i: int) -> "NetworkParams":
        keep = [r for r in range(self.M) if r != i]
        p = self.copy()
        for name in ("m1", "m2", "sigma", "c", "s"):
            setattr(p, name, getattr(p, name)[keep].copy())
        return p

    def with_rule(self, m1, m2, sigma, c, s) -> "NetworkParams":
        p = self.copy()
        p.m1 = np.vstack([p.m1, np.asarray(m1, float)[None, :]])
        p.m2 = np.vstack([p.m2, np.asarray(m2, float)[None, :]])
        p.sigma = np.vstack([p.sigma, np.asarray(sigma, float)[None, :]])
        p.c = np.concatenate([p.c, np.asarray(c, float)[None]], axis=0)
        p.s = np.concatenate([p.s, np.asarray(s, float)[None]], axis=0)
        return p

    def check(self) -> None:
        """Raise ``ValueError`` if any constraint is violated."""
        problems = []
        if np.any(self.m1 > self.m2):
            problems.append("m1 <= m2")
        if np.any(self.sigma <= 0) or np.any(self.co_sigma <= 0):
            problems.append("sigma > 0")
        if np.any(self.s < 0):
            problems.append("s >= 0")
        for name in ("q_l", "q_r", "q_o"):
            v = getattr(self, name)
            if np.any(v < 0) or np.any(v > 1):
                problems.append(f"{name} in [0, 1]")
        if not 0.0 <= self.l <= 1.0:
            problems.append("l in [0, 1]")
        if not self.use_link and self.l != 0.0:
            problems.append("l == 0 when the link layer is disabled")
        if problems:
            raise ValueError("constraint violation: " + ", ".join(problems))


def parameter_count(params: NetworkParams, stage: str = "stage2") -> int:
    """Number of trainable scalars.

    With every layer active this is ``n*3*M + 2*K*n + (n+1)*2*M*K + 2*K + K + 1``
    in stage 2; stage 1 drops the ``n*3*M`` antecedent terms.
    """
    n, M, K = params.n, params.M, params.K
    total = params.c.size + params.s.size + 3 * K
    if params.use_co:
        total += 2 * K * n
    if params.use_link:
        total += 1
    if stage == "stage2":
        total += 3 * M * n
    return total


def new_params(n: int, K: int, *, use_co: bool = True, use_link: bool = True,
               shared_consequent: bool = False, l: float = 0.1,
               co_m=None, co_sigma=None) -> NetworkParams:
    """Empty-rule-base network with q weights at 0.5."""
    kc = 1 if shared_consequent else K
    co_m = np.zeros((K, n)) if co_m is None else co_m
    co_sigma = np.ones((K, n)) if co_sigma is None else co_sigma
    return NetworkParams(
        m1=np.zeros((0, n)), m2=np.zeros((0, n)), sigma=np.ones((0, n)),
        co_m=co_m, co_sigma=co_sigma,
        c=np.zeros((0, kc, n + 1)), s=np.zeros((0, kc, n + 1)),
        q_l=np.full(K, 0.5), q_r=np.full(K, 0.5), q_o=np.full(K, 0.5),
        l=l if use_link else 0.0,
        use_co=use_co, use_link=use_link, shared_consequent=shared_consequent,
    )


# --------------------------------------------------------------------------
# single layers


def consequent_interval(x, rule: int, output: int, params: ConsequentParams) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    c = params.c[rule, output]
    s = params.s[rule, output]
    centre = c[0] + c[1:] @ x
    spread = s[0] + s[1:] @ np.abs(x)
    return float(centre - spread), float(centre + spread)


def type_reduce(f_lower, f_upper, w_l, w_r, q_l: float, q_r: float) -> tuple[float, float]:
    f_lower = np.asarray(f_lower, dtype=float)
    f_upper = np.asarray(f_upper, dtype=float)
    denom = np.sum(f_lower + f_upper)
    y_l = ((1 - q_l) * f_lower @ w_l + q_l * f_upper @ w_l) / denom
    y_r = ((1 - q_r) * f_lower @ w_r + q_r * f_upper @ w_r) / denom
    return float(y_l), float(y_r)


def defuzzify(y_l, y_r, q_o):
    return q_o * y_l + (1 - q_o) * y_r


def link_chain(y_prime, x_n: float, l: float) -> np.ndarray:
    y_prime = np.asarray(y_prime, dtype=float)
    y = np.empty_like(y_prime)
    prev = x_n
    for k, yp in enumerate(y_prime):
        prev = (1 - l) * yp + l * prev
        y[k] = prev
    return y


def link_closed_form(y_prime, x_n: float, l: float) -> np.ndarray:
    """Explicit form  y^K = sum_k l^(K-k) (1-l) y'^k + l^K x_n  (0**0 == 1)."""
    y_prime = np.asarray(y_prime, dtype=float)
    out = np.empty_like(y_prime)
    for K in range(1, y_prime.size + 1):
        powers = np.array([l ** (K - k) for k in range(1, K + 1)])
        out[K - 1] = (1 - l) * powers @ y_prime[:K] + l ** K * x_n
    return out


# --------------------------------------------------------------------------
# full pass


@dataclass
class ForwardTrace:
    x: np.ndarray
    log_mu_lower: np.ndarray    # (M, n), clamped
    log_mu_upper: np.ndarray
    log_rule_lower: np.ndarray  # (M,)
    log_rule_upper: np.ndarray
    log_co: np.ndarray          # (K,)
    f_lower: np.ndarray         # (M, K)
    f_upper: np.ndarray
    w_l: np.ndarray             # (M, K)
    w_r: np.ndarray
    y_l: np.ndarray             # (K,)
    y_r: np.ndarray
    y_defuzz: np.ndarray
    y: np.ndarray
    extras: dict = field(default_factory=dict)

    @property
    def mu_lower(self):
        return np.exp(self.log_mu_lower)

    @property
    def mu_upper(self):
        return np.exp(self.log_mu_upper)

    @property
    def rule_lower(self):
        return np.exp(self.log_rule_lower)

    @property
    def rule_upper(self):
        return np.exp(self.log_rule_upper)

    @property
    def co(self):
        return np.exp(self.log_co)


def _log_grades(x, params: NetworkParams):
    lo = clamp_log(lmf_log(x[None, :], params.m1, params.m2, params.sigma))
    up = clamp_log(umf_log(x[None, :], params.m1, params.m2, params.sigma))
    if params.use_co:
        co = clamp_log(log_gaussian(x[None, :], params.co_m, params.co_sigma)).sum(axis=1)
    else:
        co = np.zeros(params.K)
    return lo, up, co


def forward(x, params: NetworkParams) -> tuple[np.ndarray, ForwardTrace]:
    """Evaluate layers 1-9 on one normalized input vector."""
    x = np.asarray(x, dtype=float)
    if x.shape != (params.n,):
        raise ValueError(f"expected input of length {params.n}, got shape {x.shape}")
    if params.M == 0:
        raise ValueError("network has no rules")
    log_lo, log_up, log_co = _log_grades(x, params)
    sl = log_lo.sum(axis=1)
    su = log_up.sum(axis=1)
    f_lower = -1.0 / (sl[:, None] + log_co[None, :])
    f_upper = -1.0 / (su[:, None] + log_co[None, :])

    ks = [params.consequent_index(k) for k in range(params.K)]
    c = params.c[:, ks, :]
    s = params.s[:, ks, :]
    centre = c[:, :, 0] + c[:, :, 1:] @ x
    spread = s[:, :, 0] + s[:, :, 1:] @ np.abs(x)
    w_l = centre - spread
    w_r = centre + spread

    denom = (f_lower + f_upper).sum(axis=0)
    y_l = ((1 - params.q_l) * (f_lower * w_l).sum(axis=0) + params.q_l * (f_upper * w_l).sum(axis=0)) / denom
    y_r = ((1 - params.q_r) * (f_lower * w_r).sum(axis=0) + params.q_r * (f_upper * w_r).sum(axis=0)) / denom
    y_defuzz = defuzzify(y_l, y_r, params.q_o)
    y = link_chain(y_defuzz, x[-1], params.l)
    trace = ForwardTrace(x, log_lo, log_up, sl, su, log_co, f_lower, f_upper, w_l, w_r,
                         y_l, y_r, y_defuzz, y)
    return y.copy(), trace


def predict(X, params: NetworkParams) -> np.ndarray:
    """Reference batch prediction, one sample at a time."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return np.array([forward(row, params)[0] for row in X]).reshape(len(X), params.K)


def firing_report(x, params: NetworkParams) -> tuple[list[FiringInterval], list[list[FiringInterval]]]:
    """Per-rule firing intervals with and without the co-antecedent layer.

    Returns ``(F_rule, F_rule_output)`` where ``F_rule[i]`` uses the rule's
    own memberships only and ``F_rule_output[i][k]`` is the layer-5 output.
    """
    _, trace = forward(x, params)
    rule_only = [FiringInterval(-1.0 / lo, -1.0 / up)
                 for lo, up in zip(trace.log_rule_lower, trace.log_rule_upper)]
    per_output = [[FiringInterval(trace.f_lower[i, k], trace.f_upper[i, k]) for k in range(params.K)]
                  for i in range(params.M)]
    return rule_only, per_output

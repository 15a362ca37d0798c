"""Loss, analytic gradients, projected SGD and a finite-difference oracle."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import backend
from .fuzzy import LOG_MAX, LOG_MIN, lmf_log, log_gaussian, umf_log
from .network import SIGMA_MIN, ForwardTrace, NetworkParams, forward

log = logging.getLogger(__name__)

STAGE1 = "stage1-local"
STAGE2 = "stage2-global"
ANTECEDENT_FIELDS = ("m1", "m2", "sigma")
PARAM_FIELDS = ("m1", "m2", "sigma", "co_m", "co_sigma", "c", "s", "q_l", "q_r", "q_o", "l")


class TrainingDiverged(RuntimeError):
    """Raised when the training loss stops being finite."""


@dataclass
class GradientSet:
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

    @classmethod
    def zeros_like(cls, params: NetworkParams) -> "GradientSet":
        return cls(**{f: np.zeros_like(getattr(params, f)) for f in PARAM_FIELDS if f != "l"}, l=0.0)

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(getattr(self, f)), initial=0.0)) for f in PARAM_FIELDS)


@dataclass
class TrainConfig:
    eta: float = 0.03
    iterations: int = 1000
    mode: str = STAGE1
    seed: int = 0

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"learning rate must be positive, got {self.eta}")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.mode not in (STAGE1, STAGE2):
            raise ValueError(f"unknown training mode {self.mode!r}")


def is_stage2(mode) -> bool:
    if mode in (STAGE2, "stage2", True):
        return True
    if mode in (STAGE1, "stage1", False):
        return False
    raise ValueError(f"unknown training mode {mode!r}")


def loss(predictions, targets) -> float:
    e = np.asarray(predictions, dtype=float) - np.asarray(targets, dtype=float)
    return 0.5 * float(e @ e)


def mse(params: NetworkParams, X, T) -> float:
    """Mean squared error over every sample and output."""
    pred = backend.predict_batch(params, X)
    return float(np.mean((pred - np.asarray(T, dtype=float)) ** 2))


# --------------------------------------------------------------------------
# analytic gradients


def _link_adjoint(e: np.ndarray, l: float) -> np.ndarray:
    """a_k = sum_{k2 >= k} l^(k2-k) e_k2, i.e. dE/dy^k including downstream outputs."""
    a = np.empty_like(e)
    acc = 0.0
    for k in range(e.size - 1, -1, -1):
        acc = e[k] + l * acc
        a[k] = acc
    return a


def grad_l(trace: ForwardTrace, targets, params: NetworkParams) -> float:
    """dE/dl from the explicit form of the link recursion.

    With y'^0 = x_n, d y^K / dl = sum_k [(K-k) l^(K-k-1) (1-l) - l^(K-k)] y'^k
    + K l^(K-1) x_n, and the outputs are combined with dE/dy^K = y^K - y_a^K.
    """
    if not params.use_link:
        return 0.0
    e = trace.y - np.asarray(targets, dtype=float)
    yp = trace.y_defuzz
    l = params.l
    total = 0.0
    for K in range(1, yp.size + 1):
        d = K * l ** (K - 1) * trace.x[-1]
        for k in range(1, K + 1):
            p = K - k
            dpow = p * l ** (p - 1) if p > 0 else 0.0
            d += (dpow * (1 - l) - l ** p) * yp[k - 1]
        total += e[K - 1] * d
    return float(total)


def backward(trace: ForwardTrace, x, targets, params: NetworkParams, mode=STAGE2) -> GradientSet:
    """Gradient of the per-sample loss with respect to every parameter."""
    x = np.asarray(x, dtype=float)
    e = trace.y - np.asarray(targets, dtype=float)
    l = params.l
    a = _link_adjoint(e, l)
    g = (1 - l) * a  # dE/dy'^k

    if params.use_link:
        prev = np.concatenate([[x[-1]], trace.y[:-1]])
        dl = float(a @ (prev - trace.y_defuzz))
    else:
        dl = 0.0

    q_l, q_r, q_o = params.q_l, params.q_r, params.q_o
    flo, fup, w_l, w_r = trace.f_lower, trace.f_upper, trace.w_l, trace.w_r
    denom = (flo + fup).sum(axis=0)
    gl = g * q_o
    gr = g * (1 - q_o)

    d_qo = g * (trace.y_l - trace.y_r)
    d_ql = gl * ((fup - flo) * w_l).sum(axis=0) / denom
    d_qr = gr * ((fup - flo) * w_r).sum(axis=0) / denom

    d_wl = gl * ((1 - q_l) * flo + q_l * fup) / denom
    d_wr = gr * ((1 - q_r) * flo + q_r * fup) / denom
    x_ext = np.concatenate([[1.0], x])
    ax_ext = np.abs(x_ext)
    d_c = (d_wl + d_wr)[:, :, None] * x_ext
    d_s = (d_wr - d_wl)[:, :, None] * ax_ext
    if params.shared_consequent:
        d_c = d_c.sum(axis=1, keepdims=True)
        d_s = d_s.sum(axis=1, keepdims=True)

    d_fup = (gl * (q_l * w_l - trace.y_l) + gr * (q_r * w_r - trace.y_r)) / denom
    d_flo = (gl * ((1 - q_l) * w_l - trace.y_l) + gr * ((1 - q_r) * w_r - trace.y_r)) / denom
    # f = -1/S  =>  df/dS = f^2
    d_su_ik = d_fup * fup ** 2
    d_sl_ik = d_flo * flo ** 2
    d_su = d_su_ik.sum(axis=1)
    d_sl = d_sl_ik.sum(axis=1)
    d_sc = (d_su_ik + d_sl_ik).sum(axis=0)

    grads = GradientSet.zeros_like(params)
    grads.c, grads.s = d_c, d_s
    grads.q_l, grads.q_r, grads.q_o = d_ql, d_qr, d_qo
    grads.l = dl

    if params.use_co:
        raw = log_gaussian(x[None, :], params.co_m, params.co_sigma)
        live = (raw > LOG_MIN) & (raw < LOG_MAX)
        diff = x[None, :] - params.co_m
        grads.co_m = np.where(live, d_sc[:, None] * diff / params.co_sigma ** 2, 0.0)
        grads.co_sigma = np.where(live, d_sc[:, None] * diff ** 2 / params.co_sigma ** 3, 0.0)

    if is_stage2(mode):
        m1, m2, sig = params.m1, params.m2, params.sigma
        xb = x[None, :]
        d1 = xb - m1
        d2 = xb - m2
        up_raw = umf_log(xb, m1, m2, sig)
        lo_raw = lmf_log(xb, m1, m2, sig)
        up_live = (up_raw > LOG_MIN) & (up_raw < LOG_MAX)
        lo_live = (lo_raw > LOG_MIN) & (lo_raw < LOG_MAX)
        left = (xb < m1) & up_live
        right = (xb > m2) & up_live
        lo_m2 = (xb <= 0.5 * (m1 + m2)) & lo_live
        lo_m1 = (xb > 0.5 * (m1 + m2)) & lo_live
        su = d_su[:, None]
        sl = d_sl[:, None]
        grads.m1 = su * np.where(left, d1 / sig ** 2, 0.0) + sl * np.where(lo_m1, d1 / sig ** 2, 0.0)
        grads.m2 = su * np.where(right, d2 / sig ** 2, 0.0) + sl * np.where(lo_m2, d2 / sig ** 2, 0.0)
        grads.sigma = (su * (np.where(left, d1 ** 2, 0.0) + np.where(right, d2 ** 2, 0.0))
                       + sl * (np.where(lo_m1, d1 ** 2, 0.0) + np.where(lo_m2, d2 ** 2, 0.0))) / sig ** 3
    return grads


# --------------------------------------------------------------------------
# updates


def project(params: NetworkParams) -> NetworkParams:
    """Restore every constraint in place and return ``params``."""
    np.maximum(params.s, 0.0, out=params.s)
    for name in ("q_l", "q_r", "q_o"):
        np.clip(getattr(params, name), 0.0, 1.0, out=getattr(params, name))
    params.l = min(max(params.l, 0.0), 1.0) if params.use_link else 0.0
    np.maximum(params.sigma, SIGMA_MIN, out=params.sigma)
    np.maximum(params.co_sigma, SIGMA_MIN, out=params.co_sigma)
    bad = params.m1 > params.m2
    if np.any(bad):
        mid = 0.5 * (params.m1 + params.m2)
        params.m1[bad] = mid[bad]
        params.m2[bad] = mid[bad]
    return params


def sgd_step(params: NetworkParams, grads: GradientSet, eta: float) -> NetworkParams:
    """Return ``params - eta * grads`` projected back onto the feasible set."""
    new = params.copy()
    for name in PARAM_FIELDS:
        if name == "l":
            new.l = params.l - eta * grads.l
        else:
            setattr(new, name, getattr(params, name) - eta * getattr(grads, name))
    return project(new)


def train_epochs(X, T, params: NetworkParams, config: TrainConfig) -> tuple[NetworkParams, float]:
    """Per-sample SGD for ``config.iterations`` shuffled passes over (X, T).

    Returns a trained copy and its whole-set MSE.
    """
    X = np.ascontiguousarray(X, dtype=float)
    T = np.ascontiguousarray(T, dtype=float).reshape(len(X), -1)
    if len(X) == 0:
        raise ValueError("empty training set")
    params = params.copy()
    rng = np.random.default_rng(config.seed)
    stage2 = is_stage2(config.mode)
    for it in range(config.iterations):
        order = rng.permutation(len(X))
        backend.sgd_epoch(params, X, T, order, config.eta, stage2)
        if not np.isfinite(params.l) or not np.all(np.isfinite(params.c)):
            raise TrainingDiverged(f"non-finite parameters after epoch {it + 1} (eta={config.eta})")
    err = mse(params, X, T)
    if not np.isfinite(err):
        raise TrainingDiverged(f"non-finite training loss {err} after {config.iterations} epochs "
                               f"(eta={config.eta}); lower the learning rate")
    return params, err


# --------------------------------------------------------------------------
# finite-difference oracle


def active_fields(params: NetworkParams, mode=STAGE2) -> list[str]:
    out = list(PARAM_FIELDS)
    if not is_stage2(mode):
        out = [f for f in out if f not in ANTECEDENT_FIELDS]
    if not params.use_co:
        out = [f for f in out if f not in ("co_m", "co_sigma")]
    if not params.use_link:
        out.remove("l")
    return out


def flatten(obj, names) -> np.ndarray:
    return np.concatenate([np.atleast_1d(np.asarray(getattr(obj, f), dtype=float)).ravel() for f in names])


def unflatten_into(params: NetworkParams, vec, names) -> NetworkParams:
    p = params.copy()
    pos = 0
    for f in names:
        if f == "l":
            p.l = float(vec[pos])
            pos += 1
            continue
        arr = getattr(p, f)
        arr[...] = np.asarray(vec[pos:pos + arr.size]).reshape(arr.shape)
        pos += arr.size
    return p


def numerical_gradient(params: NetworkParams, x, targets, mode=STAGE2, step: float = 1e-6) -> np.ndarray:
    """Central differences of loss(forward(x)) over the active parameters."""
    names = active_fields(params, mode)
    base = flatten(params, names)
    out = np.empty_like(base)
    for idx in range(base.size):
        hi = base.copy()
        lo = base.copy()
        hi[idx] += step
        lo[idx] -= step
        e_hi = loss(forward(x, unflatten_into(params, hi, names))[0], targets)
        e_lo = loss(forward(x, unflatten_into(params, lo, names))[0], targets)
        out[idx] = (e_hi - e_lo) / (2 * step)
    return out


def compare_gradients(analytic, numeric, rtol=1e-4, atol=1e-8) -> tuple[bool, float]:
    """Elementwise check; returns (all ok, worst relative gap).

    Gaps at or below ``atol`` pass on the absolute floor and do not count
    towards the reported relative gap.
    """
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    gap = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    ok = (gap <= atol) | (gap <= rtol * scale)
    rel = np.where(gap > atol, gap / np.maximum(scale, 1e-300), 0.0)
    return bool(np.all(ok)), float(rel.max(initial=0.0))


def random_instance(rng: np.random.Generator, n_max=4, M_max=3, K_max=3, *, margin=1e-5,
                    use_co=True, use_link=True, shared_consequent=False):
    """Random well-posed (params, x, targets) away from membership branch points."""
    n = int(rng.integers(1, n_max + 1))
    M = int(rng.integers(1, M_max + 1))
    K = int(rng.integers(1, K_max + 1))
    kc = 1 if shared_consequent else K
    a = rng.uniform(0, 1, (M, n))
    b = rng.uniform(0, 1, (M, n))
    params = NetworkParams(
        m1=np.minimum(a, b), m2=np.maximum(a, b), sigma=rng.uniform(0.2, 1.0, (M, n)),
        co_m=rng.uniform(0, 1, (K, n)), co_sigma=rng.uniform(0.2, 1.0, (K, n)),
        c=rng.uniform(-1, 1, (M, kc, n + 1)), s=rng.uniform(0, 0.5, (M, kc, n + 1)),
        q_l=rng.uniform(0.05, 0.95, K), q_r=rng.uniform(0.05, 0.95, K), q_o=rng.uniform(0.05, 0.95, K),
        l=rng.uniform(0.05, 0.95) if use_link else 0.0,
        use_co=use_co, use_link=use_link, shared_consequent=shared_consequent,
    )
    mid = 0.5 * (params.m1 + params.m2)
    while True:
        x = rng.uniform(-0.2, 1.2, n)
        dist = np.min(np.abs(np.stack([x - params.m1, x - params.m2, x - mid])), axis=0)
        if np.all(dist > margin):
            break
    targets = rng.uniform(-0.5, 1.5, K)
    return params, x, targets


@dataclass
class GradCheckResult:
    trials: int
    checked: int
    failures: int
    max_rel_error: float

    @property
    def passed(self) -> bool:
        return self.failures == 0


def gradcheck(seed: int = 0, trials: int = 50, *, n_max=4, M_max=3, K_max=3, use_kernel=False,
              rtol=1e-4, atol=1e-8, step=1e-6) -> GradCheckResult:
    """Compare analytic gradients against central differences on random networks."""
    rng = np.random.default_rng(seed)
    failures = 0
    checked = 0
    worst = 0.0
    for _ in range(trials):
        params, x, t = random_instance(rng, n_max, M_max, K_max)
        names = active_fields(params, STAGE2)
        if use_kernel:
            g = backend.sample_gradient(params, x, t, True)
        else:
            _, trace = forward(x, params)
            g = backward(trace, x, t, params, STAGE2)
        ok, rel = compare_gradients(flatten(g, names), numerical_gradient(params, x, t, STAGE2, step),
                                    rtol, atol)
        checked += len(flatten(g, names))
        worst = max(worst, rel)
        failures += not ok
    return GradCheckResult(trials, checked, failures, worst)



"""Selects the compiled kernels when importable, else the pure-Python loop.

Set ``IT2FORECAST_PURE_PYTHON=1`` to force the fallback.
"""

import os

import numpy as np

from . import _fallback

_native = None
if os.environ.get("IT2FORECAST_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _native
    except ImportError:  # extension not built
        _native = None

NAME = "cython" if _native is not None else "python"


def _impl(use_native):
    if use_native is None:
        use_native = _native is not None
    if use_native and _native is None:
        raise RuntimeError("compiled kernels are not available; reinstall with a C compiler")
    return _native if use_native else _fallback


def _contiguous(p):
    for name in ("m1", "m2", "sigma", "co_m", "co_sigma", "c", "s", "q_l", "q_r", "q_o"):
        arr = getattr(p, name)
        if not (arr.flags.c_contiguous and arr.dtype == np.float64):
            setattr(p, name, np.ascontiguousarray(arr, dtype=np.float64))


def predict_batch(p, X, use_native=None):
    impl = _impl(use_native)
    if impl is _native:
        _contiguous(p)
        X = np.ascontiguousarray(X, dtype=np.float64)
    return impl.predict_batch(p, X)


def sample_gradient(p, x, t, stage2, use_native=None):
    from .gradients import GradientSet

    impl = _impl(use_native)
    if impl is _native:
        _contiguous(p)
        x = np.ascontiguousarray(x, dtype=np.float64)
        t = np.ascontiguousarray(t, dtype=np.float64)
    return GradientSet(**impl.sample_gradient(p, x, t, bool(stage2)))


def sgd_epoch(p, X, T, order, eta, stage2, use_native=None):
    impl = _impl(use_native)
    if impl is _native:
        _contiguous(p)
        X = np.ascontiguousarray(X, dtype=np.float64)
        T = np.ascontiguousarray(T, dtype=np.float64)
        order = np.ascontiguousarray(order, dtype=np.int64)
    impl.sgd_epoch(p, X, T, order, float(eta), bool(stage2))

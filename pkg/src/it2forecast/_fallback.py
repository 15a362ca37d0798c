"""Pure-Python implementation of the hot training/prediction loop.

Used when the compiled ``_kernels`` extension is unavailable, and as the
reference the extension is tested against.
"""

import numpy as np

from .network import forward


def predict_batch(p, X):
    X = np.asarray(X, dtype=float)
    out = np.empty((len(X), p.K))
    for r, row in enumerate(X):
        out[r] = forward(row, p)[0]
    return out


def sample_gradient(p, x, t, stage2):
    from .gradients import STAGE1, STAGE2, backward

    _, trace = forward(np.asarray(x, dtype=float), p)
    g = backward(trace, x, t, p, STAGE2 if stage2 else STAGE1)
    return {name: getattr(g, name) for name in ("m1", "m2", "sigma", "co_m", "co_sigma",
                                                "c", "s", "q_l", "q_r", "q_o", "l")}


def sgd_epoch(p, X, T, order, eta, stage2):
    from .gradients import STAGE1, STAGE2, backward, project

    mode = STAGE2 if stage2 else STAGE1
    for idx in order:
        _, trace = forward(X[idx], p)
        g = backward(trace, X[idx], T[idx], p, mode)
        for name in ("co_m", "co_sigma", "c", "s", "q_l", "q_r", "q_o"):
            getattr(p, name)[...] -= eta * getattr(g, name)
        if stage2:
            for name in ("m1", "m2", "sigma"):
                getattr(p, name)[...] -= eta * getattr(g, name)
        p.l -= eta * g.l
        project(p)

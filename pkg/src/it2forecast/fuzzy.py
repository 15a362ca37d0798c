"""Interval type-2 antecedent math: membership functions, rule firing and
the log-sum transformation that keeps firing strengths away from underflow.

All membership grades are handled in the log domain wherever they feed the
transformation layer, so a rule with a hundred inputs never forms its raw
product.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

#: Individual membership grades are clamped to [EPS_CLAMP, 1 - EPS_CLAMP]
#: before their logarithms enter a firing-strength sum.
EPS_CLAMP = 1e-12
LOG_MIN = math.log(EPS_CLAMP)
LOG_MAX = math.log1p(-EPS_CLAMP)


@dataclass(frozen=True)
class It2Mf:
    """Gaussian interval type-2 set with uncertain mean in [m1, m2]."""

    m1: float
    m2: float
    sigma: float

    def __post_init__(self):
        if not self.m1 <= self.m2:
            raise ValueError(f"It2Mf requires m1 <= m2, got m1={self.m1}, m2={self.m2}")
        if not self.sigma > 0:
            raise ValueError(f"It2Mf requires sigma > 0, got {self.sigma}")


@dataclass(frozen=True)
class CoMf:
    """Type-1 Gaussian used by the per-output co-antecedent layer."""

    m: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"CoMf requires sigma > 0, got {self.sigma}")


@dataclass(frozen=True)
class FiringInterval:
    lower: float
    upper: float


def gaussian(x, m, sigma):
    return np.exp(-0.5 * ((np.asarray(x, dtype=float) - m) / sigma) ** 2)


def log_gaussian(x, m, sigma):
    return -0.5 * ((np.asarray(x, dtype=float) - m) / sigma) ** 2


def umf_log(x, m1, m2, sigma):
    """Log of the upper membership function, elementwise over arrays."""
    x = np.asarray(x, dtype=float)
    left = log_gaussian(x, m1, sigma)
    right = log_gaussian(x, m2, sigma)
    return np.where(x < m1, left, np.where(x > m2, right, 0.0))


def lmf_log(x, m1, m2, sigma):
    """Log of the lower membership function; the midpoint goes to the m2 branch."""
    x = np.asarray(x, dtype=float)
    mid = 0.5 * (np.asarray(m1) + np.asarray(m2))
    return np.where(x <= mid, log_gaussian(x, m2, sigma), log_gaussian(x, m1, sigma))


def eval_umf(x: float, mf: It2Mf) -> float:
    return float(np.exp(umf_log(x, mf.m1, mf.m2, mf.sigma)))


def eval_lmf(x: float, mf: It2Mf) -> float:
    return float(np.exp(lmf_log(x, mf.m1, mf.m2, mf.sigma)))


def fire_rule(memberships_lower, memberships_upper) -> tuple[float, float]:
    """Algebraic-product meet of the lower and upper grades of one rule.

    The raw products can underflow for wide inputs; they are reported for
    inspection only and never feed the transformation layer.
    """
    lo = np.asarray(memberships_lower, dtype=float)
    up = np.asarray(memberships_upper, dtype=float)
    if lo.shape != up.shape or lo.ndim != 1 or lo.size == 0:
        raise ValueError("lower and upper membership vectors must be 1-D, non-empty and equal length")
    return float(np.prod(lo)), float(np.prod(up))


def eval_co_antecedent(x, mfs) -> float:
    x = np.asarray(x, dtype=float)
    if len(mfs) != x.size:
        raise ValueError(f"expected {x.size} co-antecedent sets, got {len(mfs)}")
    m = np.array([mf.m for mf in mfs])
    s = np.array([mf.sigma for mf in mfs])
    return float(np.prod(gaussian(x, m, s)))


def clamp_log(log_grade):
    return np.clip(log_grade, LOG_MIN, LOG_MAX)


def clamped_log_sum(grades) -> float:
    """Sum of natural logs of individual grades after the symmetric clamp."""
    g = np.clip(np.atleast_1d(np.asarray(grades, dtype=float)), EPS_CLAMP, 1.0 - EPS_CLAMP)
    return float(np.sum(np.log(g)))


def transform_from_log_sums(log_lower: float, log_upper: float, log_co: float = 0.0) -> FiringInterval:
    return FiringInterval(-1.0 / (log_lower + log_co), -1.0 / (log_upper + log_co))


def transform_firing(rule_lower, rule_upper, co=()) -> FiringInterval:
    """Aggregated firing interval ``-1 / sum(log grades)``.

    Each argument is either one membership grade or a sequence of the
    individual grades whose product it stands for; logs are taken grade by
    grade.  ``co`` may be empty for a rule-only firing strength.
    """
    log_co = clamped_log_sum(co) if np.size(co) else 0.0
    return transform_from_log_sums(clamped_log_sum(rule_lower), clamped_log_sum(rule_upper), log_co)

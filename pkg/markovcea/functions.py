"""
Numeric helper functions exposed to model expressions.

All functions work element-wise on float64 arrays (scalars broadcast).
"""

import numpy as np

from .errors import EvaluationError

_PROB_TOLERANCE = 1e-12


def _as_array(value) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


def _check_probability(name: str, value: np.ndarray) -> np.ndarray:
    if np.any(value < -_PROB_TOLERANCE) or np.any(value > 1 + _PROB_TOLERANCE):
        raise EvaluationError(f"{name}: probabilities must lie in [0, 1], got {value.min():.6g}..{value.max():.6g}")
    return np.clip(value, 0.0, 1.0)


def _check_positive(name: str, value: np.ndarray) -> np.ndarray:
    if np.any(value <= 0):
        raise EvaluationError(f"{name}: values must be positive")
    return value


def combine_probs(*probs) -> np.ndarray:
    """Probability of at least one of several independent events: 1 - prod(1 - p)"""
    if not probs:
        raise EvaluationError("combine_probs: at least one probability is required")
    arrays = [_check_probability("combine_probs", _as_array(p)) for p in probs]
    survival = np.ones(np.broadcast(*arrays).shape)
    for p in arrays:
        survival = survival * (1.0 - p)
    return 1.0 - survival


def discount(x, r, first_cycle_undiscounted: bool = True) -> np.ndarray:
    """
    Discount a per-cycle value sequence

    Cycle t (1-based) is divided by (1 + r)^(t - 1), or by (1 + r)^t when the first
    cycle is discounted too.
    """
    x = _as_array(x)
    r = _as_array(r)
    if np.any(r < 0):
        raise EvaluationError("discount: rate must be >= 0")
    t = np.arange(1, x.shape[-1] + 1, dtype=np.float64) if x.ndim else np.array(1.0)
    exponent = t - 1.0 if first_cycle_undiscounted else t
    return x / np.power(1.0 + r, exponent)


def rate_to_prob(r, per=1.0) -> np.ndarray:
    """Event probability over `per` time units for a constant rate"""
    r = _as_array(r)
    per = _check_positive("rate_to_prob", _as_array(per))
    if np.any(r < 0):
        raise EvaluationError("rate_to_prob: rate must be >= 0")
    return -np.expm1(-r * per)


def or_to_prob(odds_ratio, p0) -> np.ndarray:
    """Apply an odds ratio to a baseline probability"""
    odds_ratio = _check_positive("or_to_prob", _as_array(odds_ratio))
    p0 = _check_probability("or_to_prob", _as_array(p0))
    if np.any(p0 >= 1):
        raise EvaluationError("or_to_prob: baseline probability must be < 1")
    odds = odds_ratio * p0 / (1.0 - p0)
    return odds / (1.0 + odds)


def rr_to_prob(relative_risk, p0) -> np.ndarray:
    """Apply a relative risk to a baseline probability"""
    relative_risk = _check_positive("rr_to_prob", _as_array(relative_risk))
    p0 = _check_probability("rr_to_prob", _as_array(p0))
    result = relative_risk * p0
    if np.any(result > 1):
        raise EvaluationError("rr_to_prob: resulting probability exceeds 1")
    return result


def rescale_prob(p, from_=1.0, to=1.0) -> np.ndarray:
    """Convert a probability defined over `from_` time units to `to` time units"""
    p = _check_probability("rescale_prob", _as_array(p))
    from_ = _check_positive("rescale_prob", _as_array(from_))
    to = _check_positive("rescale_prob", _as_array(to))
    return -np.expm1(np.log1p(-p) * (to / from_)) if np.all(p < 1) else 1.0 - np.power(1.0 - p, to / from_)


def rescale_discount_rate(r, from_=1.0, to=1.0) -> np.ndarray:
    """Convert a discount rate defined over `from_` time units to `to` time units"""
    r = _as_array(r)
    if np.any(r < 0):
        raise EvaluationError("rescale_discount_rate: rate must be >= 0")
    from_ = _check_positive("rescale_discount_rate", _as_array(from_))
    to = _check_positive("rescale_discount_rate", _as_array(to))
    return np.power(1.0 + r, to / from_) - 1.0

"""
Survival distributions as an algebraic tree, and per-cycle probabilities derived from them.

Leaves are parametric families or Kaplan-Meier estimates; inner nodes apply treatment
effects (hazard ratio, odds ratio, acceleration factor) or combine curves (join, pool,
independent competing hazards). Every node exposes ``survival(t)`` with S(0) = 1.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, FrozenSet, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from lifelines import ExponentialFitter, KaplanMeierFitter, LogNormalFitter, WeibullFitter
from scipy import stats

from .errors import SurvivalError
from .expr import Call, Expr, Name, Number, free_names

logger = logging.getLogger(__name__)

WEIGHT_TOLERANCE = 1e-12
_TIME_TOLERANCE = 1e-12


def _times(t) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0) or np.any(np.isnan(t)):
        raise SurvivalError("survival times must be >= 0")
    return t


class SurvivalDistribution:
    """Base class of survival tree nodes"""

    def survival(self, t) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, t) -> np.ndarray:
        return self.survival(t)


@dataclass(frozen=True, eq=False)
class KaplanMeier(SurvivalDistribution):
    """Right-continuous step function of a product-limit estimate"""

    times: np.ndarray
    values: np.ndarray
    max_time: float

    def survival(self, t) -> np.ndarray:
        t = _times(t)
        if np.any(t > self.max_time + _TIME_TOLERANCE):
            raise SurvivalError(
                f"Kaplan-Meier estimate evaluated at t={t.max():g}, beyond the last observed time "
                f"{self.max_time:g}; join a parametric tail"
            )
        index = np.searchsorted(self.times, t, side="right") - 1
        return self.values[index]


def _gompertz_sf(t: np.ndarray, shape: float, rate: float) -> np.ndarray:
    if shape == 0:
        return np.exp(-rate * t)
    return np.exp(-(rate / shape) * np.expm1(shape * t))


FAMILY_PARAMETERS: Dict[str, Tuple[str, ...]] = {
    "exponential": ("rate",),
    "weibull": ("shape", "scale"),
    "lognormal": ("meanlog", "sdlog"),
    "gamma": ("shape", "rate"),
    "gompertz": ("shape", "rate"),
}

# parameters allowed to be zero or negative
_UNSIGNED = {("lognormal", "meanlog"), ("gompertz", "shape")}


@dataclass(frozen=True, eq=False)
class Parametric(SurvivalDistribution):
    """
    Parametric family with fixed parameters

    Conventions: exponential(rate); weibull(shape, scale) with S(t) = exp(-(t/scale)^shape);
    lognormal(meanlog, sdlog) on the log scale; gamma(shape, rate); gompertz(shape, rate)
    with S(t) = exp(-(rate/shape) (exp(shape t) - 1)).

    `km` optionally carries the Kaplan-Meier estimate of the data the parameters were
    fitted on, used by ``compute_surv(..., km_limit=...)``.
    """

    family: str
    parameters: Tuple[Tuple[str, float], ...]
    km: Optional[KaplanMeier] = None

    def __post_init__(self):
        if self.family not in FAMILY_PARAMETERS:
            raise SurvivalError(f"unknown distribution family '{self.family}'")
        given = dict(self.parameters)
        expected = FAMILY_PARAMETERS[self.family]
        if set(given) != set(expected):
            raise SurvivalError(f"{self.family} requires parameters {', '.join(expected)}; got {', '.join(given)}")
        for name, value in given.items():
            if not math.isfinite(value):
                raise SurvivalError(f"{self.family}: parameter '{name}' must be finite")
            if (self.family, name) not in _UNSIGNED and value <= 0:
                raise SurvivalError(f"{self.family}: parameter '{name}' must be positive, got {value:g}")

    def parameter(self, name: str) -> float:
        return dict(self.parameters)[name]

    def survival(self, t) -> np.ndarray:
        t = _times(t)
        p = dict(self.parameters)
        if self.family == "exponential":
            return stats.expon.sf(t, scale=1.0 / p["rate"])
        if self.family == "weibull":
            return stats.weibull_min.sf(t, p["shape"], scale=p["scale"])
        if self.family == "lognormal":
            return stats.lognorm.sf(t, p["sdlog"], scale=math.exp(p["meanlog"]))
        if self.family == "gamma":
            return stats.gamma.sf(t, p["shape"], scale=1.0 / p["rate"])
        return _gompertz_sf(t, p["shape"], p["rate"])


@dataclass(frozen=True, eq=False)
class HazardRatio(SurvivalDistribution):
    child: SurvivalDistribution
    hr: float

    def survival(self, t) -> np.ndarray:
        return np.power(self.child.survival(t), self.hr)


@dataclass(frozen=True, eq=False)
class OddsRatio(SurvivalDistribution):
    child: SurvivalDistribution
    odds_ratio: float

    def survival(self, t) -> np.ndarray:
        s = self.child.survival(t)
        return s / (s + self.odds_ratio * (1.0 - s))


@dataclass(frozen=True, eq=False)
class AccelerationFactor(SurvivalDistribution):
    child: SurvivalDistribution
    af: float

    def survival(self, t) -> np.ndarray:
        return self.child.survival(_times(t) / self.af)


@dataclass(frozen=True, eq=False)
class Joined(SurvivalDistribution):
    """
    Piecewise curve: child i applies after cut i-1, renormalized so the curve is
    continuous at each cut.
    """

    children: Tuple[SurvivalDistribution, ...]
    cuts: Tuple[float, ...]

    def survival(self, t) -> np.ndarray:
        t = _times(t)
        out = np.empty_like(t)
        bounds = (0.0,) + tuple(self.cuts) + (math.inf,)
        prefix = 1.0
        for i, child in enumerate(self.children):
            lo, hi = bounds[i], bounds[i + 1]
            if i == 0:
                factor = 1.0
                mask = t <= hi
            else:
                anchor = float(child.survival(lo))
                if anchor <= 0:
                    raise SurvivalError(f"cannot join at t={lo:g}: joined curve has zero survival there")
                factor = prefix / anchor
                mask = (t > lo) & (t <= hi)
            if np.any(mask):
                out[mask] = factor * child.survival(t[mask])
            if i < len(self.cuts):
                prefix = factor * float(child.survival(hi))
        return out


@dataclass(frozen=True, eq=False)
class Pooled(SurvivalDistribution):
    """Mixture of survival curves: sum of w_i S_i(t)"""

    children: Tuple[SurvivalDistribution, ...]
    weights: Tuple[float, ...]

    def survival(self, t) -> np.ndarray:
        total = np.zeros(np.shape(t))
        for weight, child in zip(self.weights, self.children):
            total = total + weight * child.survival(t)
        return total


@dataclass(frozen=True, eq=False)
class CombinedHazards(SurvivalDistribution):
    """Independent competing risks: product of S_i(t)"""

    children: Tuple[SurvivalDistribution, ...]

    def survival(self, t) -> np.ndarray:
        total = np.ones(np.shape(t))
        for child in self.children:
            total = total * child.survival(t)
        return total


def parametric(family: str, km: Optional[KaplanMeier] = None, **parameters: float) -> Parametric:
    """Define a parametric survival distribution"""
    return Parametric(family, tuple((name, float(value)) for name, value in parameters.items()), km)


def km_estimate(times: Sequence[float], status: Sequence[int]) -> KaplanMeier:
    """
    Product-limit estimate from right-censored data

    Args:
        times: Positive follow-up durations
        status: 1 for an observed event, 0 for censoring

    Returns:
        KaplanMeier node covering [0, max(times)]
    """
    try:
        durations = np.asarray(times, dtype=np.float64)
    except (TypeError, ValueError):
        raise SurvivalError("survival times must be numbers") from None
    events = np.asarray(status)
    if durations.size == 0:
        raise SurvivalError("Kaplan-Meier estimation needs at least one observation")
    if durations.shape != events.shape:
        raise SurvivalError("times and status must have the same length")
    if np.any(durations <= 0) or np.any(np.isnan(durations)):
        raise SurvivalError("survival times must be positive")
    if not np.all(np.isin(events, (0, 1))):
        raise SurvivalError("status must be 0 (censored) or 1 (event)")

    kmf = KaplanMeierFitter()
    kmf.fit(durations, event_observed=events.astype(int))
    curve = kmf.survival_function_
    grid = curve.index.to_numpy(dtype=np.float64)
    values = curve.iloc[:, 0].to_numpy(dtype=np.float64)
    if grid[0] > 0:
        grid = np.concatenate(([0.0], grid))
        values = np.concatenate(([1.0], values))
    return KaplanMeier(grid, values, float(durations.max()))


def read_survival_data(path: Union[str, Path]) -> Tuple[np.ndarray, np.ndarray]:
    """(time, status) columns of a survival data CSV"""
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise SurvivalError(f"cannot read survival data '{path}': {exc}") from exc
    if not {"time", "status"} <= set(frame.columns):
        raise SurvivalError(f"survival data '{path}' needs 'time' and 'status' columns")
    columns = []
    for column in ("time", "status"):
        values = pd.to_numeric(frame[column], errors="coerce")
        if values.isna().any():
            row = int(values.isna().to_numpy().argmax()) + 1
            raise SurvivalError(f"survival data '{path}': column '{column}' is not numeric at row {row}")
        columns.append(values.to_numpy(dtype=np.float64))
    return columns[0], columns[1]


def km_from_csv(path: Union[str, Path]) -> KaplanMeier:
    """Kaplan-Meier estimate from a two-column (time, status) CSV"""
    return km_estimate(*read_survival_data(path))


FITTERS = {
    "exponential": ExponentialFitter,
    "weibull": WeibullFitter,
    "lognormal": LogNormalFitter,
}


def fit_parametric(family: str, times: Sequence[float], status: Sequence[int]) -> Parametric:
    """
    Maximum-likelihood fit of a parametric family to right-censored data

    Args:
        family: exponential, weibull or lognormal
        times: Positive follow-up durations
        status: 1 for an observed event, 0 for censoring

    Returns:
        Parametric distribution carrying the Kaplan-Meier estimate of the same data
    """
    if family not in FITTERS:
        raise SurvivalError(f"cannot fit '{family}'; fitting supports {', '.join(FITTERS)}")
    km = km_estimate(times, status)
    fitter = FITTERS[family]()
    try:
        fitter.fit(np.asarray(times, dtype=np.float64), event_observed=np.asarray(status).astype(int))
    except Exception as exc:  # lifelines raises its own convergence errors
        raise SurvivalError(f"{family} fit did not converge: {exc}") from None
    if family == "exponential":
        fitted = {"rate": 1.0 / fitter.lambda_}
    elif family == "weibull":
        fitted = {"shape": fitter.rho_, "scale": fitter.lambda_}
    else:
        fitted = {"meanlog": fitter.mu_, "sdlog": fitter.sigma_}
    logger.debug("Fitted %s: %s", family, fitted)
    return parametric(family, km=km, **fitted)


def _positive(name: str, value: float) -> float:
    value = float(value)
    if not value > 0 or not math.isfinite(value):
        raise SurvivalError(f"{name} must be positive and finite, got {value:g}")
    return value


def apply_hr(dist: SurvivalDistribution, hr: float) -> HazardRatio:
    """Multiply the hazard by `hr`"""
    return HazardRatio(dist, _positive("hr", hr))


def apply_or(dist: SurvivalDistribution, odds_ratio: float) -> OddsRatio:
    """Multiply the odds of the event by `odds_ratio`"""
    return OddsRatio(dist, _positive("or", odds_ratio))


def apply_af(dist: SurvivalDistribution, af: float) -> AccelerationFactor:
    """Stretch the time axis by `af`"""
    return AccelerationFactor(dist, _positive("af", af))


def join(*dists: SurvivalDistribution, at: Union[float, Sequence[float]]) -> Joined:
    """Use each distribution in turn, switching at the given cut times"""
    cuts = (float(at),) if np.isscalar(at) else tuple(float(value) for value in at)
    if len(dists) < 2 or len(cuts) != len(dists) - 1:
        raise SurvivalError("join needs n >= 2 distributions and n - 1 cut times")
    if cuts[0] <= 0 or any(b <= a for a, b in zip(cuts, cuts[1:])):
        raise SurvivalError("join cut times must be positive and strictly increasing")
    return Joined(tuple(dists), cuts)


def pool(*dists: SurvivalDistribution, weights: Sequence[float]) -> Pooled:
    """Weighted mixture of survival curves"""
    weights = tuple(float(w) for w in weights)
    if len(dists) < 1 or len(weights) != len(dists):
        raise SurvivalError("pool needs one weight per distribution")
    if any(w <= 0 for w in weights):
        raise SurvivalError("pool weights must be positive")
    if abs(sum(weights) - 1.0) > WEIGHT_TOLERANCE:
        raise SurvivalError(f"pool weights must sum to 1, got {sum(weights):.15g}")
    return Pooled(tuple(dists), weights)


def add_hazards(*dists: SurvivalDistribution) -> CombinedHazards:
    """Combine distributions as independent competing risks"""
    if not dists:
        raise SurvivalError("add_hazards needs at least one distribution")
    return CombinedHazards(tuple(dists))


def survival_at(dist: SurvivalDistribution, t) -> np.ndarray:
    """S(t) for scalar or array `t`"""
    return dist.survival(t)


def compute_surv(
    dist: SurvivalDistribution,
    time,
    cycle_length: float = 1.0,
    km_limit: float = 0.0,
) -> np.ndarray:
    """
    Conditional per-cycle event probabilities

    p_k = 1 - S(k * cycle_length) / S((k - 1) * cycle_length) for each cycle index k.
    With `km_limit` > 0, a parametric distribution that carries its raw-data
    Kaplan-Meier estimate is first replaced by the estimate joined to the
    parametric tail at `km_limit`.
    """
    time = np.asarray(time, dtype=np.float64)
    if np.any(time < 1):
        raise SurvivalError("compute_surv time values must be >= 1")
    cycle_length = _positive("cycle_length", cycle_length)
    if km_limit > 0:
        if isinstance(dist, Parametric) and dist.km is not None:
            dist = join(dist.km, dist, at=km_limit)
        else:
            logger.warning("km_limit=%g ignored: distribution carries no survival data", km_limit)
    upper = dist.survival(time * cycle_length)
    lower = dist.survival((time - 1.0) * cycle_length)
    if np.any(lower <= 0):
        raise SurvivalError("conditional probability undefined: survival is zero at the start of a cycle")
    return np.clip(1.0 - upper / lower, 0.0, 1.0)


DISTRIBUTION_OPERATORS = ("apply_hr", "apply_or", "apply_af", "join", "pool", "add_hazards")


class SurvivalDeclaration:
    """
    Named survival distribution of a model document

    Numeric arguments are expressions over model parameters, resolved to scalars when
    a parameter extracts probabilities from the distribution. Either `family` (with
    `parameters`, optionally `km`), `km` alone, or `expression` (survival algebra over
    earlier declarations) is set.
    """

    def __init__(
        self,
        name: str,
        family: Optional[str] = None,
        parameters: Sequence[Tuple[str, Expr]] = (),
        km: Optional[KaplanMeier] = None,
        expression: Optional[Expr] = None,
    ):
        self.name = name
        self.family = family
        self.parameters: Tuple[Tuple[str, Expr], ...] = tuple(parameters)
        self.km = km
        self.expression = expression
        if self.expression is None and self.family is None and self.km is None:
            raise SurvivalError(f"survival '{self.name}': declare a distribution, data or an expression")
        if self.family is not None and self.family not in FAMILY_PARAMETERS:
            raise SurvivalError(f"survival '{self.name}': unknown distribution family '{self.family}'")
        refs, deps = set(), set()
        if self.expression is not None:
            _scan_expression(self.expression, refs, deps)
        for _, value in self.parameters:
            deps |= free_names(value)
        self._references = frozenset(refs)
        self._dependencies = frozenset(deps)

    @property
    def references(self) -> FrozenSet[str]:
        """Other declarations this one is built from"""
        return self._references

    @property
    def dependencies(self) -> FrozenSet[str]:
        """Parameter names its numeric arguments read"""
        return self._dependencies

    def build(
        self,
        registry: Mapping[str, "SurvivalDeclaration"],
        scalar: Callable[[Expr], float],
    ) -> SurvivalDistribution:
        """Resolve numeric arguments with `scalar` and return the concrete tree"""
        if self.expression is not None:
            return _build_expression(self.expression, registry, scalar, (self.name,))
        if self.family is None:
            return self.km
        values = {name: scalar(value) for name, value in self.parameters}
        return parametric(self.family, km=self.km, **values)


def _scan_expression(expr: Expr, refs: set, deps: set) -> None:
    if isinstance(expr, Name):
        refs.add(expr.name)
    elif isinstance(expr, Call) and (expr.func in DISTRIBUTION_OPERATORS or expr.func in FAMILY_PARAMETERS):
        distribution_args = expr.args if expr.func in DISTRIBUTION_OPERATORS else ()
        numeric_args = ()
        if expr.func in ("apply_hr", "apply_or", "apply_af"):
            distribution_args, numeric_args = expr.args[:1], expr.args[1:]
        for arg in distribution_args:
            _scan_expression(arg, refs, deps)
        for arg in numeric_args:
            deps |= free_names(arg)
        for _, value in expr.kwargs:
            deps |= free_names(value)
    else:
        raise SurvivalError("survival expressions may only combine declared distributions")


def _vector(value: Expr, scalar: Callable[[Expr], float]) -> Tuple[float, ...]:
    if isinstance(value, Call) and value.func == "c":
        if value.kwargs:
            raise SurvivalError("c() takes positional values only")
        return tuple(scalar(item) for item in value.args)
    return (scalar(value),)


def _effect_argument(call: Call, key: str, scalar: Callable[[Expr], float]) -> float:
    value = call.keyword(key)
    if value is None and len(call.args) > 1:
        value = call.args[1]
    if value is None:
        raise SurvivalError(f"{call.func} needs the '{key}' argument")
    return scalar(value)


def _build_expression(
    expr: Expr,
    registry: Mapping[str, SurvivalDeclaration],
    scalar: Callable[[Expr], float],
    trail: Tuple[str, ...],
) -> SurvivalDistribution:
    if isinstance(expr, Name):
        if expr.name in trail:
            raise SurvivalError(f"circular survival declaration: {' -> '.join(trail + (expr.name,))}")
        if expr.name not in registry:
            raise SurvivalError(f"unknown survival distribution '{expr.name}'")
        declaration = registry[expr.name]
        if declaration.expression is not None:
            return _build_expression(declaration.expression, registry, scalar, trail + (expr.name,))
        return declaration.build(registry, scalar)
    if not isinstance(expr, Call):
        raise SurvivalError("survival expressions may only combine declared distributions")

    def child(node: Expr) -> SurvivalDistribution:
        return _build_expression(node, registry, scalar, trail)

    if expr.func in FAMILY_PARAMETERS:
        if expr.args:
            raise SurvivalError(f"{expr.func}() takes named parameters only")
        return parametric(expr.func, **{key: scalar(value) for key, value in expr.kwargs})
    if not expr.args:
        raise SurvivalError(f"{expr.func}() needs at least one distribution")
    if expr.func == "apply_hr":
        return apply_hr(child(expr.args[0]), _effect_argument(expr, "hr", scalar))
    if expr.func == "apply_or":
        return apply_or(child(expr.args[0]), _effect_argument(expr, "or", scalar))
    if expr.func == "apply_af":
        return apply_af(child(expr.args[0]), _effect_argument(expr, "af", scalar))
    children = [child(arg) for arg in expr.args]
    if expr.func == "join":
        at = expr.keyword("at")
        if at is None:
            raise SurvivalError("join() needs the 'at' argument")
        return join(*children, at=_vector(at, scalar))
    if expr.func == "pool":
        weights = expr.keyword("weights")
        if weights is None:
            raise SurvivalError("pool() needs the 'weights' argument")
        return pool(*children, weights=_vector(weights, scalar))
    if expr.func == "add_hazards":
        return add_hazards(*children)
    raise SurvivalError(f"unknown survival operation '{expr.func}'")


def constant(value: float) -> Expr:
    """Numeric literal usable as a declaration parameter"""
    return Number(float(value))

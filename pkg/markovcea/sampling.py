"""
Probabilistic sensitivity analysis sampling: marginal distributions tied together
by a Gaussian copula.
"""

import logging
import math
from dataclasses import dataclass
from numbers import Real
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from .errors import MarkovCeaError, SamplingError
from .expr import Call, Expr, Number, UnaryOp, parse_expression

logger = logging.getLogger(__name__)

# keeps quantile functions away from their infinite endpoints
_U_EPSILON = 1e-15


class Marginal:
    """Distribution of one PSA parameter, sampled by quantile inversion"""

    family = ""

    def ppf(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @property
    def mean(self) -> float:
        raise NotImplementedError

    @property
    def sd(self) -> float:
        raise NotImplementedError


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise SamplingError(message)


@dataclass(frozen=True)
class Normal(Marginal):
    mu: float
    sigma: float
    family = "normal"

    def __post_init__(self):
        _require(self.sigma > 0, "normal: sd must be positive")

    def ppf(self, u):
        return stats.norm.ppf(u, loc=self.mu, scale=self.sigma)

    @property
    def mean(self) -> float:
        return self.mu

    @property
    def sd(self) -> float:
        return self.sigma


@dataclass(frozen=True)
class LogNormal(Marginal):
    """Mean and sd given on the natural scale, matched to the log-scale parameters"""

    mu: float
    sigma: float
    family = "lognormal"

    def __post_init__(self):
        _require(self.mu > 0, "lognormal: mean must be positive")
        _require(self.sigma > 0, "lognormal: sd must be positive")

    @property
    def log_sd(self) -> float:
        return math.sqrt(math.log1p((self.sigma / self.mu) ** 2))

    @property
    def log_mean(self) -> float:
        return math.log(self.mu) - self.log_sd**2 / 2.0

    def ppf(self, u):
        return stats.lognorm.ppf(u, self.log_sd, scale=math.exp(self.log_mean))

    @property
    def mean(self) -> float:
        return self.mu

    @property
    def sd(self) -> float:
        return self.sigma


@dataclass(frozen=True)
class Gamma(Marginal):
    """Moment-matched gamma: shape = mean^2 / sd^2, rate = mean / sd^2"""

    mu: float
    sigma: float
    family = "gamma"

    def __post_init__(self):
        _require(self.mu > 0, "gamma: mean must be positive")
        _require(self.sigma > 0, "gamma: sd must be positive")

    def ppf(self, u):
        shape = self.mu**2 / self.sigma**2
        rate = self.mu / self.sigma**2
        return stats.gamma.ppf(u, shape, scale=1.0 / rate)

    @property
    def mean(self) -> float:
        return self.mu

    @property
    def sd(self) -> float:
        return self.sigma


@dataclass(frozen=True)
class Binomial(Marginal):
    """Estimated proportion: Binomial(size, prob) quantile divided by size"""

    prob: float
    size: int
    family = "binomial"

    def __post_init__(self):
        _require(0 <= self.prob <= 1, "binomial: prob must lie in [0, 1]")
        _require(self.size >= 1 and float(self.size).is_integer(), "binomial: size must be an integer >= 1")

    def ppf(self, u):
        return stats.binom.ppf(u, int(self.size), self.prob) / self.size

    @property
    def mean(self) -> float:
        return self.prob

    @property
    def sd(self) -> float:
        return math.sqrt(self.prob * (1 - self.prob) / self.size)


@dataclass(frozen=True)
class Poisson(Marginal):
    mu: float
    family = "poisson"

    def __post_init__(self):
        _require(self.mu > 0, "poisson: mean must be positive")

    def ppf(self, u):
        return stats.poisson.ppf(u, self.mu)

    @property
    def mean(self) -> float:
        return self.mu

    @property
    def sd(self) -> float:
        return math.sqrt(self.mu)


# family -> (class, argument names)
MARGINALS: Dict[str, Tuple[type, Tuple[str, ...]]] = {
    "normal": (Normal, ("mean", "sd")),
    "lognormal": (LogNormal, ("mean", "sd")),
    "gamma": (Gamma, ("mean", "sd")),
    "binomial": (Binomial, ("prob", "size")),
    "poisson": (Poisson, ("mean",)),
}


def _literal(expr: Expr) -> float:
    if isinstance(expr, Number):
        return expr.value
    if isinstance(expr, UnaryOp) and expr.op == "-" and isinstance(expr.operand, Number):
        return -expr.operand.value
    raise SamplingError("distribution arguments must be numbers")


def parse_marginal(text: str) -> Marginal:
    """
    Parse a distribution such as ``"normal(20, 5)"`` or ``"binomial(prob = 0.25, size = 500)"``

    Raises:
        SamplingError: unknown family, wrong arguments or invalid values
    """
    try:
        expr = parse_expression(text)
    except MarkovCeaError as exc:
        raise SamplingError(f"cannot parse distribution '{text}': {exc}") from exc
    if not isinstance(expr, Call) or expr.func not in MARGINALS:
        raise SamplingError(f"unknown distribution '{text}'; expected one of: {', '.join(MARGINALS)}")
    cls, names = MARGINALS[expr.func]
    if len(expr.args) > len(names):
        raise SamplingError(f"{expr.func}() takes {len(names)} arguments")
    values = dict(zip(names, (_literal(arg) for arg in expr.args)))
    for key, value in expr.kwargs:
        if key not in names or key in values:
            raise SamplingError(f"{expr.func}(): unexpected or repeated argument '{key}'")
        values[key] = _literal(value)
    missing = [name for name in names if name not in values]
    if missing:
        raise SamplingError(f"{expr.func}() is missing: {', '.join(missing)}")
    return cls(*(values[name] for name in names))


@dataclass(frozen=True)
class PsaSpec:
    """
    Marginals per parameter plus pairwise correlations of the Gaussian copula

    Parameters keep their declaration order; unspecified pairs are uncorrelated.
    """

    marginals: Dict[str, Marginal]
    correlations: Tuple[Tuple[str, str, float], ...] = ()

    def __post_init__(self):
        if not self.marginals:
            raise SamplingError("a PSA needs at least one parameter distribution")
        seen = set()
        for a, b, rho in self.correlations:
            for name in (a, b):
                if name not in self.marginals:
                    raise SamplingError(f"correlation names '{name}', which has no PSA distribution")
            if a == b:
                raise SamplingError(f"correlation of '{a}' with itself")
            if not -1 <= rho <= 1:
                raise SamplingError(f"correlation of '{a}' and '{b}' must lie in [-1, 1]")
            pair = frozenset((a, b))
            if pair in seen:
                raise SamplingError(f"correlation of '{a}' and '{b}' given twice")
            seen.add(pair)
        self.cholesky()

    @property
    def names(self) -> List[str]:
        return list(self.marginals)

    def correlation_matrix(self) -> np.ndarray:
        index = {name: i for i, name in enumerate(self.marginals)}
        matrix = np.eye(len(index))
        for a, b, rho in self.correlations:
            matrix[index[a], index[b]] = matrix[index[b], index[a]] = rho
        return matrix

    def cholesky(self) -> np.ndarray:
        try:
            return np.linalg.cholesky(self.correlation_matrix())
        except np.linalg.LinAlgError:
            raise SamplingError("correlation matrix is not positive definite") from None


def define_psa(distributions: Dict[str, str], correlations: Iterable[Sequence] = ()) -> PsaSpec:
    """Build a PsaSpec from distribution texts and (a, b, rho) triples"""
    marginals = {name: parse_marginal(text) for name, text in distributions.items()}
    triples = []
    for item in correlations:
        if len(item) != 3:
            raise SamplingError("correlations are (parameter, parameter, coefficient) triples")
        rho = item[2]
        if isinstance(rho, bool) or not isinstance(rho, Real):
            raise SamplingError(f"correlation of '{item[0]}' and '{item[1]}' must be a number, got {rho!r}")
        triples.append((str(item[0]), str(item[1]), float(rho)))
    return PsaSpec(marginals, tuple(triples))


def sample_psa(psa: PsaSpec, draws: int, seed: int) -> pd.DataFrame:
    """
    Draw correlated parameter values

    Draw i uses its own generator seeded with (seed, i), so any subset of draws can
    be reproduced independently. Standard normals are correlated with the Cholesky
    factor, mapped to uniforms by the normal CDF and inverted through each marginal.

    Args:
        psa: Marginals and correlations
        draws: Number of draws N >= 1
        seed: Non-negative integer seed

    Returns:
        DataFrame indexed by draw 1..N with one column per PSA parameter
    """
    if draws < 1:
        raise SamplingError("number of draws must be >= 1")
    if seed < 0:
        raise SamplingError("seed must be a non-negative integer")
    factor = psa.cholesky()
    k = len(psa.marginals)
    normals = np.empty((draws, k))
    for i in range(draws):
        normals[i] = np.random.default_rng([seed, i]).standard_normal(k)
    correlated = normals @ factor.T
    uniforms = np.clip(stats.norm.cdf(correlated), _U_EPSILON, 1.0 - _U_EPSILON)
    columns = {name: marginal.ppf(uniforms[:, j]) for j, (name, marginal) in enumerate(psa.marginals.items())}
    logger.debug("Sampled %d PSA draws for %d parameters (seed %d)", draws, k, seed)
    return pd.DataFrame(columns, index=pd.RangeIndex(1, draws + 1, name="draw"))

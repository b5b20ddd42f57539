"""
Uncertainty and heterogeneity analyses built on repeated model runs.

Every analysis splits into independent work units (a DSA bound, a PSA draw, a
population row) that run sequentially or in worker processes with identical results.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, TypeVar, Union

import numpy as np
import pandas as pd

from .analysis import efficiency_frontier
from .engine import ModelSpec, run_model
from .errors import AnalysisError, MarkovCeaError, ModelDefinitionError, PsaDrawError
from .expr import Number, as_expr
from .models import Bound, DsaSpec, FrontierResult, StrategyTotals
from .sampling import PsaSpec, sample_psa

logger = logging.getLogger(__name__)

WEIGHTS_COLUMN = ".weights"
DEFAULT_THRESHOLDS = tuple(float(value) for value in range(0, 100001, 5000))

ItemT = TypeVar("ItemT")
ResultT = TypeVar("ResultT")


def parallel_map(func: Callable[[ItemT], ResultT], items: Sequence[ItemT], workers: int = 1) -> List[ResultT]:
    """Map in order, in worker processes when `workers` > 1"""
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    chunksize = max(1, len(items) // (workers * 4))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items, chunksize=chunksize))


def _run_totals(
    spec: ModelSpec, unit: Tuple[Dict[str, object], Optional[Tuple[str, ...]]]
) -> Union[Dict[str, StrategyTotals], str]:
    """Run with parameter overrides; failures come back as text so they cross process boundaries"""
    overrides, strategies = unit
    try:
        result = run_model(spec.with_parameters(overrides), strategies)
    except MarkovCeaError as exc:
        return str(exc)
    return {run.strategy: run.totals for run in result.runs.values()}


def _literal_overrides(values: Dict[str, object]) -> Dict[str, object]:
    overrides = {}
    for name, value in values.items():
        if isinstance(value, str):
            overrides[name] = as_expr(value)
        else:
            overrides[name] = Number(float(value))
    return overrides


# Deterministic sensitivity analysis


def run_dsa(spec: ModelSpec, dsa: DsaSpec, workers: int = 1) -> pd.DataFrame:
    """
    One-way sensitivity analysis: each parameter at its low and high bound, others at base

    Args:
        spec: Base model
        dsa: Parameter bounds
        workers: Worker processes

    Returns:
        Long DataFrame with columns parameter, bound, value, strategy, cost, effect, the
        totals of every state value, and error (empty unless that run failed)
    """
    unknown = [entry.parameter for entry in dsa.entries if entry.parameter not in spec.parameters]
    if unknown:
        raise ModelDefinitionError(f"DSA parameter(s) not defined in the model: {', '.join(unknown)}")

    for strategy in spec.strategy_names:
        logger.info("Running DSA on strategy '%s'...", strategy)
    units = []
    keys = []
    for entry in dsa.entries:
        for bound, value in ((Bound.LOW, entry.low), (Bound.HIGH, entry.high)):
            for strategy in spec.strategy_names:
                units.append(({entry.parameter: Number(float(value))}, (strategy,)))
                keys.append((entry.parameter, bound, value, strategy))
    outcomes = parallel_map(partial(_run_totals, spec), units, workers)

    rows = []
    for (parameter, bound, value, strategy), outcome in zip(keys, outcomes):
        row = {"parameter": parameter, "bound": bound.value, "value": value, "strategy": strategy}
        if isinstance(outcome, str):
            logger.warning("DSA %s=%s (%s) failed for '%s': %s", parameter, value, bound.value, strategy, outcome)
            row.update({"cost": np.nan, "effect": np.nan, "error": outcome})
        else:
            totals = outcome[strategy]
            row = {**totals.values, **row, "cost": totals.cost, "effect": totals.effect, "error": ""}
        rows.append(row)
    frame = pd.DataFrame(rows)
    leading = ["parameter", "bound", "value", "strategy", "cost", "effect"]
    values = [column for column in spec.value_names if column in frame.columns and column not in leading]
    return frame[leading + values + ["error"]].reset_index(drop=True)


# Probabilistic sensitivity analysis


@dataclass
class PsaResult:
    """Per-draw parameters and strategy totals"""

    parameters: pd.DataFrame
    cost: pd.DataFrame
    effect: pd.DataFrame
    seed: Optional[int] = None
    value_means: Optional[pd.DataFrame] = None

    @property
    def strategies(self) -> List[str]:
        return list(self.cost.columns)

    @property
    def draws(self) -> int:
        return len(self.cost)

    def nmb(self, threshold: float) -> np.ndarray:
        """Draws x strategies matrix of λ·E − C"""
        return threshold * self.effect.to_numpy() - self.cost.to_numpy()


def run_psa(spec: ModelSpec, psa: PsaSpec, draws: int, seed: int, workers: int = 1) -> PsaResult:
    """
    Run the model once per PSA draw

    Raises:
        PsaDrawError: the first draw producing an invalid model (the run is aborted)
    """
    unknown = [name for name in psa.names if name not in spec.parameters]
    if unknown:
        raise ModelDefinitionError(f"PSA parameter(s) not defined in the model: {', '.join(unknown)}")
    samples = sample_psa(psa, draws, seed)
    for strategy in spec.strategy_names:
        logger.info("Resampling strategy '%s'...", strategy)
    units = [({name: Number(float(value)) for name, value in row.items()}, None) for _, row in samples.iterrows()]
    outcomes = parallel_map(partial(_run_totals, spec), units, workers)

    cost: Dict[str, List[float]] = {name: [] for name in spec.strategy_names}
    effect: Dict[str, List[float]] = {name: [] for name in spec.strategy_names}
    values: Dict[str, Dict[str, List[float]]] = {name: {} for name in spec.strategy_names}
    for draw, outcome in zip(samples.index, outcomes):
        if isinstance(outcome, str):
            raise PsaDrawError(int(draw), outcome)
        for name, totals in outcome.items():
            cost[name].append(totals.cost)
            effect[name].append(totals.effect)
            for value_name, total in totals.values.items():
                values[name].setdefault(value_name, []).append(total)
    means = pd.DataFrame(
        {
            name: {value_name: float(np.mean(series)) for value_name, series in per.items()}
            for name, per in values.items()
        }
    ).T
    means.index.name = "strategy"
    return PsaResult(
        parameters=samples,
        cost=pd.DataFrame(cost, index=samples.index),
        effect=pd.DataFrame(effect, index=samples.index),
        seed=seed,
        value_means=means,
    )


@dataclass
class PsaSummary:
    totals: List[StrategyTotals]
    frontier: FrontierResult


def psa_summary(result: PsaResult) -> PsaSummary:
    """Mean cost and effect per strategy, and the frontier of those means"""
    totals = []
    for name in result.strategies:
        values = {}
        if result.value_means is not None and name in result.value_means.index:
            values = {key: float(value) for key, value in result.value_means.loc[name].items()}
        totals.append(
            StrategyTotals(
                strategy=name,
                cost=float(result.cost[name].mean()),
                effect=float(result.effect[name].mean()),
                values=values,
            )
        )
    return PsaSummary(totals=totals, frontier=efficiency_frontier(totals))


def ceac(result: PsaResult, thresholds: Iterable[float] = DEFAULT_THRESHOLDS) -> pd.DataFrame:
    """
    Cost-effectiveness acceptability curve

    Returns:
        Long DataFrame (lambda, strategy, probability); per-draw ties go to the
        strategy declared first
    """
    rows = []
    strategies = result.strategies
    for value in thresholds:
        best = np.argmax(result.nmb(float(value)), axis=1)
        counts = np.bincount(best, minlength=len(strategies))
        for name, count in zip(strategies, counts):
            rows.append({"lambda": float(value), "strategy": name, "probability": count / result.draws})
    return pd.DataFrame(rows, columns=["lambda", "strategy", "probability"])


def evpi(result: PsaResult, thresholds: Iterable[float] = DEFAULT_THRESHOLDS) -> pd.DataFrame:
    """Expected value of perfect information: E[max NMB] − max E[NMB] per threshold"""
    rows = []
    for value in thresholds:
        benefit = result.nmb(float(value))
        gap = benefit.max(axis=1).mean() - benefit.mean(axis=0).max()
        rows.append({"lambda": float(value), "evpi": max(float(gap), 0.0)})
    return pd.DataFrame(rows, columns=["lambda", "evpi"])


def psa_plane(result: PsaResult) -> pd.DataFrame:
    """Cost and effect differences of each strategy versus the first one, per draw"""
    reference = result.strategies[0]
    frames = []
    for name in result.strategies:
        frames.append(
            pd.DataFrame(
                {
                    "draw": result.cost.index,
                    "strategy": name,
                    "cost_diff": (result.cost[name] - result.cost[reference]).to_numpy(),
                    "effect_diff": (result.effect[name] - result.effect[reference]).to_numpy(),
                }
            )
        )
    return pd.concat(frames, ignore_index=True)


def export_psa(result: PsaResult, path: Optional[Union[str, Path]] = None) -> pd.DataFrame:
    """
    Flat PSA table: parameters, then cost_<strategy> and effect_<strategy> columns

    Writes a CSV when `path` is given; returns the table either way.
    """
    table = result.parameters.copy()
    for name in result.strategies:
        table[f"cost_{name}"] = result.cost[name].to_numpy()
    for name in result.strategies:
        table[f"effect_{name}"] = result.effect[name].to_numpy()
    if path is not None:
        table.to_csv(path, index=False, float_format="%.17g")
    return table


def read_psa_export(path: Union[str, Path]) -> PsaResult:
    """Re-read an `export_psa` CSV"""
    table = pd.read_csv(path, float_precision="round_trip")
    table.index = pd.RangeIndex(1, len(table) + 1, name="draw")
    strategies = [column[len("effect_") :] for column in table.columns if column.startswith("effect_")]
    if not strategies:
        raise AnalysisError(f"'{path}' has no effect_<strategy> columns")
    cost_columns = [f"cost_{name}" for name in strategies]
    effect_columns = [f"effect_{name}" for name in strategies]
    missing = [column for column in cost_columns if column not in table.columns]
    if missing:
        raise AnalysisError(f"'{path}' is missing columns: {', '.join(missing)}")
    parameters = table.drop(columns=cost_columns + effect_columns)
    cost = table[cost_columns].set_axis(strategies, axis=1)
    effect = table[effect_columns].set_axis(strategies, axis=1)
    return PsaResult(parameters=parameters, cost=cost, effect=effect)


# Heterogeneity analysis


@dataclass
class HeterogeneityResult:
    """Per-row totals and their weighted averages"""

    rows: pd.DataFrame
    totals: List[StrategyTotals]
    frontier: FrontierResult
    spread: pd.DataFrame = field(default_factory=pd.DataFrame)


def update_heterogeneity(spec: ModelSpec, population: pd.DataFrame, workers: int = 1) -> HeterogeneityResult:
    """
    Run the model once per population row and average the results

    Args:
        spec: Base model
        population: One row per stratum; columns override parameters, the optional
            `.weights` column gives relative weights (default 1)
        workers: Worker processes

    Returns:
        HeterogeneityResult with rows (row, weight, strategy, cost, effect), weighted
        mean totals, their frontier and min/mean/max spread per strategy
    """
    if population.empty:
        raise ModelDefinitionError("population table has no rows")
    columns = [column for column in population.columns if column != WEIGHTS_COLUMN]
    unknown = [column for column in columns if column not in spec.parameters]
    if unknown:
        raise ModelDefinitionError(f"population columns are not model parameters: {', '.join(unknown)}")
    if WEIGHTS_COLUMN in population.columns:
        weights = population[WEIGHTS_COLUMN].to_numpy(dtype=np.float64)
        if np.any(~np.isfinite(weights)) or np.any(weights <= 0):
            raise ModelDefinitionError("population weights must be positive")
    else:
        weights = np.ones(len(population))

    for strategy in spec.strategy_names:
        logger.info("Updating strategy '%s'...", strategy)
    units = [(_literal_overrides(record), None) for record in population[columns].to_dict(orient="records")]
    outcomes = parallel_map(partial(_run_totals, spec), units, workers)

    rows = []
    for index, (weight, outcome) in enumerate(zip(weights, outcomes), start=1):
        if isinstance(outcome, str):
            raise ModelDefinitionError(f"population row {index}: {outcome}")
        for name in spec.strategy_names:
            totals = outcome[name]
            rows.append(
                {"row": index, "weight": weight, "strategy": name, "cost": totals.cost, "effect": totals.effect}
            )
    frame = pd.DataFrame(rows, columns=["row", "weight", "strategy", "cost", "effect"])

    normalized = weights / weights.sum()
    averaged = []
    for name in spec.strategy_names:
        per_row = [outcome[name] for outcome in outcomes]
        values = {
            key: float(np.dot(normalized, [totals.values[key] for totals in per_row])) for key in per_row[0].values
        }
        averaged.append(
            StrategyTotals(
                strategy=name,
                cost=float(np.dot(normalized, [totals.cost for totals in per_row])),
                effect=float(np.dot(normalized, [totals.effect for totals in per_row])),
                values=values,
            )
        )
    spread = frame.groupby("strategy", sort=False)[["cost", "effect"]].agg(["min", "mean", "max"])
    return HeterogeneityResult(rows=frame, totals=averaged, frontier=efficiency_frontier(averaged), spread=spread)

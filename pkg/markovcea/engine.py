"""
Cohort simulation: model definition, the Markov recursion with inflow, counting
correction and state valuation.
"""

import logging
from collections import ChainMap
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .analysis import efficiency_frontier, nmb
from .errors import MarkovCeaError, ModelDefinitionError
from .evaluator import KNOWN_FUNCTIONS, EvalContext, eval_expression
from .expr import RESERVED_NAMES, STATE_TIME, Call, Expr, ExprLike, as_expr, free_names, survival_references
from .lifetable import LifeTable
from .models import CountingMethod, FrontierResult, StrategyTotals, unwrap_validation_error
from .params import ParameterSet, ParameterTable, evaluate_parameters, names_read
from .survival import SurvivalDeclaration
from .transitions import (
    Complement,
    StateSpec,
    StrategySpec,
    detect_state_time,
    eval_transition,
    expand_tunnels,
    tunnel_name,
)

logger = logging.getLogger(__name__)

DEFAULT_COHORT = 1000.0


def _annotate(exc: MarkovCeaError, prefix: str) -> MarkovCeaError:
    exc.args = (f"{prefix}: {exc.args[0] if exc.args else exc}",) + tuple(exc.args[1:])
    return exc


def _expressions(strategy: StrategySpec) -> Iterable[Expr]:
    for row in strategy.transition.entries:
        for entry in row:
            if not isinstance(entry, Complement):
                yield entry
    for state in strategy.states.values():
        yield from state.values.values()


class ModelSpec(BaseModel):
    """
    Complete cohort model: parameters, survival declarations, strategies and run settings

    Use `define_model` to build one with domain errors instead of pydantic's.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    parameters: ParameterSet = Field(default_factory=ParameterSet)
    survival: Dict[str, SurvivalDeclaration] = Field(default_factory=dict)
    strategies: Dict[str, StrategySpec]
    cycles: int = Field(ge=1, description="Number of cycles T")
    cost: str = Field(description="State value holding costs")
    effect: str = Field(description="State value holding effects")
    method: CountingMethod = CountingMethod.LIFE_TABLE
    init: Optional[Tuple[float, ...]] = Field(default=None, description="Initial counts per state")
    inflow: Optional[Tuple[Expr, ...]] = Field(default=None, description="New entrants per state and cycle")
    state_cycle_limit: Union[None, int, Dict[str, int]] = None
    first_cycle_undiscounted: bool = True
    lifetable: Optional[LifeTable] = None

    @model_validator(mode="after")
    def _consistent(self) -> "ModelSpec":
        if not self.strategies:
            raise ModelDefinitionError("at least one strategy is required")
        for key, strategy in self.strategies.items():
            if key != strategy.name:
                raise ModelDefinitionError(f"strategy registered as '{key}' is named '{strategy.name}'")
        states = self.state_names
        for strategy in self.strategies.values():
            if strategy.state_names != states:
                raise ModelDefinitionError(
                    f"strategy '{strategy.name}' has states {list(strategy.state_names)}; expected {list(states)}"
                )
            for name in (self.cost, self.effect):
                if name not in strategy.value_names:
                    raise ModelDefinitionError(f"strategy '{strategy.name}': no state value named '{name}'")
        self._check_survival()
        self._check_population(states)
        self._check_names()
        if isinstance(self.state_cycle_limit, dict):
            unknown = set(self.state_cycle_limit) - set(states)
            if unknown:
                raise ModelDefinitionError(f"state_cycle_limit names unknown states: {', '.join(sorted(unknown))}")
            if any(cap < 1 for cap in self.state_cycle_limit.values()):
                raise ModelDefinitionError("state_cycle_limit values must be >= 1")
        elif self.state_cycle_limit is not None and self.state_cycle_limit < 1:
            raise ModelDefinitionError("state_cycle_limit must be >= 1")
        return self

    def _check_population(self, states: Tuple[str, ...]) -> None:
        if self.init is not None:
            if len(self.init) != len(states):
                raise ModelDefinitionError(f"init needs {len(states)} counts, got {len(self.init)}")
            if any(count < 0 for count in self.init):
                raise ModelDefinitionError("init counts must be >= 0")
        if self.inflow is not None:
            if len(self.inflow) != len(states):
                raise ModelDefinitionError(f"inflow needs {len(states)} expressions, got {len(self.inflow)}")
            dependent = self.state_time_parameters() | {STATE_TIME}
            reads = self.survival_reads()
            for expr in self.inflow:
                if names_read(expr, reads) & dependent:
                    raise ModelDefinitionError("inflow expressions cannot depend on state_time")

    def _check_survival(self) -> None:
        for name, declaration in self.survival.items():
            missing = declaration.references - set(self.survival)
            if missing:
                raise ModelDefinitionError(f"survival '{name}' uses undeclared distribution(s): {sorted(missing)}")
        earlier: set = set()
        for name, expr in self.parameters:
            for ref in survival_references(expr):
                if ref not in self.survival:
                    raise ModelDefinitionError(f"parameter '{name}' uses undeclared survival distribution '{ref}'")
                late = self._survival_dependencies(ref) - earlier - RESERVED_NAMES
                if late:
                    raise ModelDefinitionError(
                        f"parameter '{name}': survival '{ref}' reads {sorted(late)}, which must be declared earlier"
                    )
            earlier.add(name)

    def survival_reads(self) -> Dict[str, FrozenSet[str]]:
        """Parameters read by each survival declaration, including through the declarations it builds on"""
        return {name: frozenset(self._survival_dependencies(name)) for name in self.survival}

    def state_time_parameters(self) -> FrozenSet[str]:
        """Parameters reading `state_time`, directly or through other parameters and survival declarations"""
        return self.parameters.state_time_dependent(self.survival_reads())

    def _survival_dependencies(self, name: str, trail: Tuple[str, ...] = ()) -> set:
        if name in trail:
            raise ModelDefinitionError(f"circular survival declaration: {' -> '.join(trail + (name,))}")
        declaration = self.survival[name]
        names = set(declaration.dependencies)
        for ref in declaration.references:
            names |= self._survival_dependencies(ref, trail + (name,))
        return names

    def _check_names(self) -> None:
        parameters = set(self.parameters.names)
        for strategy in self.strategies.values():
            for expr in _expressions(strategy):
                for node in expr.walk():
                    if isinstance(node, Call) and node.func not in KNOWN_FUNCTIONS:
                        raise ModelDefinitionError(f"strategy '{strategy.name}': unknown function '{node.func}'")
            for row_state, row in zip(strategy.state_names, strategy.transition.entries):
                for entry in row:
                    if isinstance(entry, Complement):
                        continue
                    unknown = free_names(entry) - parameters - RESERVED_NAMES
                    if unknown:
                        raise ModelDefinitionError(
                            f"strategy '{strategy.name}', transition from '{row_state}': "
                            f"unknown name(s) {sorted(unknown)}"
                        )
            for state_name, state in strategy.states.items():
                visible = set(parameters)
                for value_name, expr in state.values.items():
                    if value_name in parameters:
                        raise ModelDefinitionError(
                            f"strategy '{strategy.name}', state '{state_name}': "
                            f"value '{value_name}' shadows a parameter"
                        )
                    unknown = free_names(expr) - visible - RESERVED_NAMES
                    if unknown:
                        raise ModelDefinitionError(
                            f"strategy '{strategy.name}', state '{state_name}', value '{value_name}': "
                            f"unknown name(s) {sorted(unknown)}"
                        )
                    visible.add(value_name)

    @property
    def state_names(self) -> Tuple[str, ...]:
        return next(iter(self.strategies.values())).state_names

    @property
    def strategy_names(self) -> Tuple[str, ...]:
        return tuple(self.strategies)

    @property
    def value_names(self) -> Tuple[str, ...]:
        return next(iter(self.strategies.values())).value_names

    def initial_counts(self) -> np.ndarray:
        if self.init is not None:
            return np.asarray(self.init, dtype=np.float64)
        counts = np.zeros(len(self.state_names))
        counts[0] = DEFAULT_COHORT
        return counts

    def with_parameters(self, overrides: Mapping[str, ExprLike]) -> "ModelSpec":
        """Copy with some parameter definitions replaced (dependent parameters follow)"""
        unknown = [name for name in overrides if name not in self.parameters]
        if unknown:
            raise ModelDefinitionError(f"unknown parameter(s): {', '.join(unknown)}")
        return self.model_copy(update={"parameters": self.parameters.modify(dict(overrides))})

    def with_settings(self, **changes) -> "ModelSpec":
        """Copy with run settings changed, re-validated"""
        fields = {name: getattr(self, name) for name in type(self).model_fields}
        fields.update({key: value for key, value in changes.items() if value is not None})
        return define_model(**fields)


def define_model(
    parameters: Union[ParameterSet, None] = None,
    strategies: Union[Mapping[str, StrategySpec], Sequence[StrategySpec]] = (),
    inflow: Optional[Sequence[ExprLike]] = None,
    **settings,
) -> ModelSpec:
    """
    Build and validate a ModelSpec

    Args:
        parameters: Parameter definitions
        strategies: Strategies in model order
        inflow: New entrants per state; expressions may read model_time
        **settings: Remaining ModelSpec fields (cycles, cost, effect, method, ...)

    Raises:
        ModelDefinitionError (or the domain error of the failing check)
    """
    if not isinstance(strategies, Mapping):
        strategies = {strategy.name: strategy for strategy in strategies}
    try:
        return ModelSpec(
            parameters=parameters if parameters is not None else ParameterSet(),
            strategies=dict(strategies),
            inflow=tuple(as_expr(value) for value in inflow) if inflow is not None else None,
            **settings,
        )
    except ValidationError as exc:
        raise unwrap_validation_error(exc) from None


def run_cohort(init, inflow, transitions) -> np.ndarray:
    """
    Markov recursion a_k = a_(k-1) U_k + Z_k

    Args:
        init: Initial counts a_0, shape (n,)
        inflow: New entrants Z, shape (T, n), or None
        transitions: Matrices U, shape (T, n, n)

    Returns:
        Counts of shape (T + 1, n); row 0 is `init`
    """
    transitions = np.asarray(transitions, dtype=np.float64)
    if transitions.ndim != 3 or transitions.shape[1] != transitions.shape[2]:
        raise ModelDefinitionError("transition array must have shape (T, n, n)")
    cycles, n, _ = transitions.shape
    init = np.asarray(init, dtype=np.float64)
    if init.shape != (n,):
        raise ModelDefinitionError(f"init must have {n} entries, got shape {init.shape}")
    if np.any(init < 0):
        raise ModelDefinitionError("init counts must be >= 0")
    if inflow is not None:
        inflow = np.asarray(inflow, dtype=np.float64)
        if inflow.shape != (cycles, n):
            raise ModelDefinitionError(f"inflow must have shape ({cycles}, {n}), got {inflow.shape}")
        if np.any(inflow < 0):
            raise ModelDefinitionError("inflow counts must be >= 0")
    counts = np.empty((cycles + 1, n))
    counts[0] = init
    for k in range(cycles):
        counts[k + 1] = counts[k] @ transitions[k]
        if inflow is not None:
            counts[k + 1] += inflow[k]
    return counts


def correct_counts(counts: np.ndarray, method: Union[CountingMethod, str]) -> np.ndarray:
    """
    Within-cycle membership used for valuing states

    Row k of the result (cycle k + 1) is a_k for "start", a_(k+1) for "end" and their
    mean for "life-table".
    """
    try:
        method = CountingMethod(method)
    except ValueError:
        raise ModelDefinitionError(f"unknown counting method '{method}'") from None
    counts = np.asarray(counts, dtype=np.float64)
    if method is CountingMethod.START:
        return counts[:-1].copy()
    if method is CountingMethod.END:
        return counts[1:].copy()
    return (counts[:-1] + counts[1:]) / 2.0


def compute_state_values(
    corrected: np.ndarray,
    states: Sequence[str],
    values: Mapping[str, Mapping[str, np.ndarray]],
    value_names: Sequence[str],
) -> pd.DataFrame:
    """
    Count-weighted value totals per cycle

    Args:
        corrected: Corrected counts, shape (T, n)
        states: Column order of `corrected`
        values: State -> value name -> per-cycle value
        value_names: Value columns to produce

    Returns:
        DataFrame indexed by cycle 1..T with one column per value name
    """
    corrected = np.asarray(corrected, dtype=np.float64)
    cycles = corrected.shape[0]
    columns = {}
    for value_name in value_names:
        total = np.zeros(cycles)
        for i, state in enumerate(states):
            if state not in values:
                raise ModelDefinitionError(f"no value table for state '{state}'")
            total += corrected[:, i] * values[state][value_name]
        columns[value_name] = total
    return pd.DataFrame(columns, index=pd.RangeIndex(1, cycles + 1, name="cycle"))


def evaluate_state(state: StateSpec, ctx: EvalContext) -> Dict[str, np.ndarray]:
    """Evaluate the values of one state in order; each may read the ones before it"""
    values: Dict[str, np.ndarray] = {}
    scope = ctx.with_bindings(ChainMap(values, dict(ctx.bindings)))
    for name, expr in state.values.items():
        try:
            values[name] = eval_expression(expr, scope)
        except MarkovCeaError as exc:
            raise _annotate(exc, f"state value '{name}'")
    return values


@dataclass
class StrategyRun:
    """Per-cycle results of one strategy, aggregated to the declared states"""

    strategy: str
    counts: pd.DataFrame
    corrected: pd.DataFrame
    values: pd.DataFrame
    totals: StrategyTotals
    expanded: Tuple[str, ...] = ()
    expanded_counts: Optional[pd.DataFrame] = None


@dataclass
class RunResult:
    """Results of every strategy of a model run"""

    runs: Dict[str, StrategyRun]
    cost: str
    effect: str
    cycles: int
    method: CountingMethod
    cohort_size: float
    value_names: Tuple[str, ...] = field(default_factory=tuple)

    @property
    def strategies(self) -> Tuple[str, ...]:
        return tuple(self.runs)

    def totals(self) -> List[StrategyTotals]:
        return [run.totals for run in self.runs.values()]

    def totals_frame(self) -> pd.DataFrame:
        """Strategies as rows, every value total as a column"""
        rows = {run.strategy: run.totals.values for run in self.runs.values()}
        frame = pd.DataFrame.from_dict(rows, orient="index")
        frame.index.name = "strategy"
        return frame

    def frontier(self) -> FrontierResult:
        return efficiency_frontier(self.totals())

    def nmb(self, thresholds: Sequence[float]) -> pd.DataFrame:
        return nmb(self.totals(), thresholds)


def _evaluation_contexts(
    spec: ModelSpec,
    strategy: StrategySpec,
    base_ctx: EvalContext,
    base: ParameterTable,
    reads: Mapping[str, FrozenSet[str]],
) -> Dict[str, EvalContext]:
    tables: Dict[Optional[int], ParameterTable] = {None: base}
    contexts = {}
    for state in strategy.state_names:
        dwell = strategy.dwell(state)
        if dwell not in tables:
            tables[dwell] = evaluate_parameters(spec.parameters, base_ctx.at_state_time(dwell), base=base, reads=reads)
        ctx = base_ctx.with_bindings(tables[dwell].columns)
        contexts[state] = ctx.at_state_time(dwell) if dwell is not None else ctx
    return contexts


def _entry_index(strategy: StrategySpec) -> List[int]:
    """Column of the expanded strategy receiving arrivals into each declared state"""
    names = strategy.state_names
    index = []
    for state in strategy.original_states():
        index.append(names.index(state) if state in names else names.index(tunnel_name(state, 1)))
    return index


def run_strategy(spec: ModelSpec, strategy: StrategySpec) -> StrategyRun:
    """Evaluate and simulate one strategy of `spec`"""
    cycles = spec.cycles
    base_ctx = EvalContext(
        cycles=cycles,
        strategy=strategy.name,
        survival=spec.survival,
        lifetable=spec.lifetable,
        first_cycle_undiscounted=spec.first_cycle_undiscounted,
    )
    reads = spec.survival_reads()
    dependent = spec.parameters.state_time_dependent(reads)
    base = evaluate_parameters(spec.parameters.subset(set(spec.parameters.names) - dependent), base_ctx)

    flagged = detect_state_time(strategy, spec.parameters, reads)
    if flagged:
        ordered = [state for state in strategy.state_names if state in flagged]
        logger.info("%s: detected use of 'state_time', expanding states: %s.", strategy.name, ", ".join(ordered))
    expanded = expand_tunnels(strategy, flagged, cycles, spec.state_cycle_limit)
    for state in flagged:
        if state in expanded.state_names and any(
            names_read(expr, reads) & (dependent | {STATE_TIME}) for expr in expanded.states[state].values.values()
        ):
            raise ModelDefinitionError(f"state '{state}' reads state_time but is absorbing and cannot be expanded")

    contexts = _evaluation_contexts(spec, expanded, base_ctx, base, reads)
    matrices = eval_transition(expanded.transition, contexts)

    entry = _entry_index(expanded)
    n = len(expanded.state_names)
    init = np.zeros(n)
    init[entry] = spec.initial_counts()
    inflow = None
    if spec.inflow is not None:
        population_ctx = base_ctx.with_bindings(base.columns)
        inflow = np.zeros((cycles, n))
        for column, expr in zip(entry, spec.inflow):
            inflow[:, column] = eval_expression(expr, population_ctx)

    counts = run_cohort(init, inflow, matrices)
    corrected = correct_counts(counts, spec.method)

    cache: Dict[Tuple[str, Optional[int]], Dict[str, np.ndarray]] = {}
    values = {}
    for state in expanded.state_names:
        key = (expanded.parent(state), expanded.dwell(state))
        if key not in cache:
            cache[key] = evaluate_state(expanded.states[state], contexts[state])
        values[state] = cache[key]
    value_frame = compute_state_values(corrected, expanded.state_names, values, expanded.value_names)

    parents = [expanded.parent(state) for state in expanded.state_names]
    expanded_counts = pd.DataFrame(
        counts, columns=list(expanded.state_names), index=pd.RangeIndex(0, cycles + 1, name="cycle")
    )
    original = list(strategy.state_names)
    count_frame = expanded_counts.T.groupby(parents, sort=False).sum().T[original]
    corrected_frame = pd.DataFrame(
        corrected, columns=list(expanded.state_names), index=pd.RangeIndex(1, cycles + 1, name="cycle")
    )
    corrected_frame = corrected_frame.T.groupby(parents, sort=False).sum().T[original]

    sums = {name: float(value_frame[name].sum()) for name in value_frame.columns}
    totals = StrategyTotals(strategy=strategy.name, cost=sums[spec.cost], effect=sums[spec.effect], values=sums)
    return StrategyRun(
        strategy=strategy.name,
        counts=count_frame,
        corrected=corrected_frame,
        values=value_frame,
        totals=totals,
        expanded=tuple(state for state in strategy.state_names if tunnel_name(state, 1) in expanded.tunnels),
        expanded_counts=expanded_counts,
    )


def run_model(spec: ModelSpec, strategies: Optional[Iterable[str]] = None) -> RunResult:
    """
    Run every strategy (or the named subset) of a model

    Returns:
        RunResult with counts, values and totals per strategy

    Raises:
        MarkovCeaError: the first failure, prefixed with the strategy name
    """
    names = list(strategies) if strategies is not None else list(spec.strategies)
    runs = {}
    for name in names:
        if name not in spec.strategies:
            raise ModelDefinitionError(f"unknown strategy '{name}'")
        try:
            runs[name] = run_strategy(spec, spec.strategies[name])
        except MarkovCeaError as exc:
            raise _annotate(exc, f"strategy '{name}'")
    return RunResult(
        runs=runs,
        cost=spec.cost,
        effect=spec.effect,
        cycles=spec.cycles,
        method=spec.method,
        cohort_size=float(spec.initial_counts().sum()),
        value_names=spec.value_names,
    )

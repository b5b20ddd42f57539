"""
States, strategies and symbolic transition matrices.

Includes the semi-Markov machinery: detection of states whose behaviour depends on
`state_time`, and their expansion into tunnel copies (one per cycle of dwell time).
"""

import logging
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ModelDefinitionError, TransitionError
from .evaluator import EvalContext, eval_expression
from .expr import STATE_TIME, Expr, ExprLike, Number, as_expr, to_text
from .models import unwrap_validation_error
from .params import ParameterSet, Reads, names_read

logger = logging.getLogger(__name__)

ROW_TOLERANCE = 1e-9
_ENTRY_TOLERANCE = 1e-12


class Complement(Expr):
    """Marker for the probability complement of a transition row"""

    def __repr__(self) -> str:
        return "C"

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Complement)

    def __hash__(self) -> int:
        return hash("C")


COMPLEMENT = Complement()
COMPLEMENT_TOKEN = "C"

EntryLike = Union[ExprLike, Complement]


def as_entry(value: EntryLike) -> Expr:
    """Parse one matrix cell; "C" marks the row complement"""
    if isinstance(value, Complement) or (isinstance(value, str) and value.strip() == COMPLEMENT_TOKEN):
        return COMPLEMENT
    return as_expr(value)


def entry_text(entry: Expr) -> str:
    return COMPLEMENT_TOKEN if isinstance(entry, Complement) else to_text(entry)


class TransitionSpec(BaseModel):
    """Square matrix of transition expressions over ordered state names"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    states: Tuple[str, ...]
    entries: Tuple[Tuple[Expr, ...], ...]

    @model_validator(mode="after")
    def _shape(self) -> "TransitionSpec":
        n = len(self.states)
        if n < 2:
            raise ModelDefinitionError("a transition matrix needs at least 2 states")
        if len(set(self.states)) != n:
            raise ModelDefinitionError("state names must be unique")
        if len(self.entries) != n or any(len(row) != n for row in self.entries):
            raise ModelDefinitionError(f"transition matrix must be {n}x{n}")
        for state, row in zip(self.states, self.entries):
            if sum(isinstance(entry, Complement) for entry in row) > 1:
                raise ModelDefinitionError(f"row '{state}': at most one complement 'C' per row")
        return self

    @classmethod
    def build(cls, states: Sequence[str], rows: Sequence[Sequence[EntryLike]]) -> "TransitionSpec":
        return cls(states=tuple(states), entries=tuple(tuple(as_entry(value) for value in row) for row in rows))

    def row(self, state: str) -> Tuple[Expr, ...]:
        return self.entries[self.states.index(state)]

    def is_absorbing(self, state: str) -> bool:
        """Identity row: the state can never be left"""
        i = self.states.index(state)
        for j, entry in enumerate(self.entries[i]):
            if j == i:
                if not (isinstance(entry, Complement) or entry == Number(1.0)):
                    return False
            elif entry != Number(0.0):
                return False
        return True


class StateSpec(BaseModel):
    """Value expressions of one state, evaluated in order (later values may read earlier ones)"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    values: Dict[str, Expr] = Field(default_factory=dict)

    @classmethod
    def build(cls, values: Mapping[str, ExprLike]) -> "StateSpec":
        return cls(values={name: as_expr(value) for name, value in values.items()})


class StrategySpec(BaseModel):
    """
    One strategy: a transition matrix and the values of its states

    `tunnels` maps tunnel copies created by `expand_tunnels` to their parent
    state and dwell time.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    name: str
    transition: TransitionSpec
    states: Dict[str, StateSpec]
    tunnels: Dict[str, Tuple[str, int]] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _consistent(self) -> "StrategySpec":
        if set(self.states) != set(self.transition.states):
            raise ModelDefinitionError(
                f"strategy '{self.name}': states {sorted(self.states)} do not match the transition matrix "
                f"states {sorted(self.transition.states)}"
            )
        value_sets = {frozenset(spec.values) for spec in self.states.values()}
        if len(value_sets) > 1:
            raise ModelDefinitionError(f"strategy '{self.name}': every state must define the same value names")
        return self

    @property
    def state_names(self) -> Tuple[str, ...]:
        return self.transition.states

    @property
    def value_names(self) -> Tuple[str, ...]:
        return tuple(self.states[self.state_names[0]].values)

    def parent(self, state: str) -> str:
        return self.tunnels[state][0] if state in self.tunnels else state

    def dwell(self, state: str) -> Optional[int]:
        return self.tunnels[state][1] if state in self.tunnels else None

    def original_states(self) -> Tuple[str, ...]:
        seen: List[str] = []
        for state in self.state_names:
            parent = self.parent(state)
            if parent not in seen:
                seen.append(parent)
        return tuple(seen)


def define_strategy(
    name: str,
    states: Mapping[str, Mapping[str, ExprLike]],
    matrix: Sequence[Sequence[EntryLike]],
    state_order: Optional[Sequence[str]] = None,
) -> StrategySpec:
    """
    Assemble a strategy from plain values

    Args:
        name: Strategy name
        states: State name -> {value name -> expression}
        matrix: Row-major transition entries ("C" for the complement)
        state_order: Matrix state order (defaults to the order of `states`)
    """
    order = tuple(state_order) if state_order is not None else tuple(states)
    try:
        return StrategySpec(
            name=name,
            transition=TransitionSpec.build(order, matrix),
            states={state: StateSpec.build(states[state]) for state in order if state in states},
        )
    except ValidationError as exc:
        raise unwrap_validation_error(exc) from None


def _row_names(strategy: StrategySpec, state: str, reads: Optional[Reads] = None) -> FrozenSet[str]:
    names = set()
    for entry in strategy.transition.row(state):
        if not isinstance(entry, Complement):
            names |= names_read(entry, reads)
    return frozenset(names)


def detect_state_time(
    strategy: StrategySpec, parameters: ParameterSet, reads: Optional[Reads] = None
) -> FrozenSet[str]:
    """
    States whose values or outgoing transitions read `state_time`

    Dependencies are followed through parameters, through the survival declarations
    named in `reads` and through earlier values of the same state.
    """
    dependent = set(parameters.state_time_dependent(reads)) | {STATE_TIME}
    flagged = set()
    for state in strategy.state_names:
        if _row_names(strategy, state, reads) & dependent:
            flagged.add(state)
            continue
        local = set(dependent)
        for value_name, expr in strategy.states[state].values.items():
            if names_read(expr, reads) & local:
                local.add(value_name)
                flagged.add(state)
    return frozenset(state for state in strategy.state_names if state in flagged)


def tunnel_name(state: str, dwell: int) -> str:
    return f"{state}_{dwell}"


def _limit_for(state: str, cycles: int, limit: Union[None, int, Mapping[str, int]]) -> int:
    cap = limit.get(state) if isinstance(limit, Mapping) else limit
    if cap is None:
        return cycles
    if cap < 1:
        raise ModelDefinitionError(f"state_cycle_limit for '{state}' must be >= 1, got {cap}")
    return min(cycles, int(cap))


def expand_tunnels(
    strategy: StrategySpec,
    flagged: Iterable[str],
    cycles: int,
    limit: Union[None, int, Mapping[str, int]] = None,
) -> StrategySpec:
    """
    Replace each flagged state A by tunnel copies A_1..A_L, L = min(cycles, limit)

    A_s moves to A_(s+1) with the original self-transition, A_L loops on itself, and
    every other destination keeps its original expression, evaluated with
    state_time = s. All entries into A (and inflow or initial counts) land in A_1.
    Absorbing states are left unexpanded.

    Returns:
        The expanded strategy, or `strategy` itself when nothing is expanded
    """
    if isinstance(limit, Mapping):
        for state, cap in limit.items():
            _limit_for(state, cycles, cap)
    elif limit is not None:
        _limit_for("*", cycles, limit)

    expand: Dict[str, int] = {}
    for state in strategy.state_names:
        if state not in flagged:
            continue
        if strategy.transition.is_absorbing(state):
            logger.warning("%s: state '%s' uses state_time but is absorbing; not expanded", strategy.name, state)
            continue
        expand[state] = _limit_for(state, cycles, limit)
    if not expand:
        return strategy

    # (parent, dwell) for every row of the new matrix
    layout: List[Tuple[str, Optional[int]]] = []
    for state in strategy.state_names:
        if state in expand:
            layout.extend((state, s) for s in range(1, expand[state] + 1))
        else:
            layout.append((state, None))
    names = [tunnel_name(state, s) if s is not None else state for state, s in layout]
    if len(set(names)) != len(names):
        raise ModelDefinitionError(f"strategy '{strategy.name}': tunnel names collide with existing states")
    index = {name: i for i, name in enumerate(names)}

    def destination(source: str, dwell: Optional[int], target: str) -> int:
        if target not in expand:
            return index[target]
        if target == source and dwell is not None:
            return index[tunnel_name(target, min(dwell + 1, expand[target]))]
        return index[tunnel_name(target, 1)]

    size = len(names)
    zero = Number(0.0)
    rows = []
    for source, dwell in layout:
        row: List[Expr] = [zero] * size
        for target, entry in zip(strategy.state_names, strategy.transition.row(source)):
            row[destination(source, dwell, target)] = entry
        rows.append(tuple(row))

    states = {name: strategy.states[source] for name, (source, _) in zip(names, layout)}
    tunnels = {name: (source, s) for name, (source, s) in zip(names, layout) if s is not None}
    return StrategySpec(
        name=strategy.name,
        transition=TransitionSpec(states=tuple(names), entries=tuple(rows)),
        states=states,
        tunnels=tunnels,
    )


def eval_transition(
    transition: TransitionSpec,
    contexts: Mapping[str, EvalContext],
) -> np.ndarray:
    """
    Evaluate the matrix for every cycle

    Args:
        transition: Symbolic matrix
        contexts: Evaluation context of each row state (parameter bindings and state_time)

    Returns:
        Array U of shape (T, n, n); U[k - 1] is the matrix of cycle k

    Raises:
        TransitionError: entries outside [0, 1], rows exceeding 1 or not summing to 1
    """
    n = len(transition.states)
    cycles = next(iter(contexts.values())).cycles
    matrix = np.zeros((cycles, n, n))
    for i, state in enumerate(transition.states):
        ctx = contexts[state]
        complement = None
        for j, entry in enumerate(transition.entries[i]):
            if isinstance(entry, Complement):
                complement = j
                continue
            if entry == Number(0.0):
                continue
            values = eval_expression(entry, ctx)
            bad = np.flatnonzero((values < -_ENTRY_TOLERANCE) | (values > 1 + _ENTRY_TOLERANCE))
            if bad.size:
                k = int(bad[0])
                raise TransitionError(
                    f"probability to '{transition.states[j]}' outside [0, 1]",
                    cycle=k + 1,
                    state=state,
                    value=float(values[k]),
                )
            matrix[:, i, j] = np.clip(values, 0.0, 1.0)
        total = matrix[:, i, :].sum(axis=1)
        if complement is not None:
            over = np.flatnonzero(total > 1 + ROW_TOLERANCE)
            if over.size:
                k = int(over[0])
                raise TransitionError("probabilities sum to more than 1", cycle=k + 1, state=state, value=total[k])
            matrix[:, i, complement] = np.clip(1.0 - total, 0.0, 1.0)
        else:
            off = np.flatnonzero(np.abs(total - 1.0) > ROW_TOLERANCE)
            if off.size:
                k = int(off[0])
                raise TransitionError("probabilities do not sum to 1", cycle=k + 1, state=state, value=total[k])
    return matrix


def to_dot(strategy: StrategySpec) -> str:
    """Graphviz description of the (unexpanded) transition diagram"""
    lines = [f'digraph "{strategy.name}" {{', "  rankdir=LR;"]
    for state in strategy.state_names:
        lines.append(f'  "{state}";')
    for i, source in enumerate(strategy.state_names):
        for j, target in enumerate(strategy.state_names):
            entry = strategy.transition.entries[i][j]
            if entry == Number(0.0):
                continue
            label = entry_text(entry).replace('"', '\\"')
            lines.append(f'  "{source}" -> "{target}" [label="{label}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"

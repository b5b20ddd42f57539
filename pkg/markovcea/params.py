"""
Ordered parameter definitions and their per-cycle evaluation
"""

import logging
from collections import ChainMap
from typing import Dict, FrozenSet, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import MarkovCeaError, ModelDefinitionError, ParameterError
from .evaluator import EvalContext, eval_expression
from .expr import RESERVED_NAMES, STATE_TIME, Expr, ExprLike, as_expr, free_names, survival_references

logger = logging.getLogger(__name__)

Definitions = Union[Mapping[str, ExprLike], Sequence[Tuple[str, ExprLike]]]
Reads = Mapping[str, Iterable[str]]


def names_read(expr: Expr, reads: Optional[Reads] = None) -> FrozenSet[str]:
    """Identifiers of `expr` plus the parameters read by the survival declarations it uses"""
    if not reads:
        return free_names(expr)
    names = set(free_names(expr))
    for ref in survival_references(expr):
        names.update(reads.get(ref, ()))
    return frozenset(names)


def _pairs(defs: Definitions) -> List[Tuple[str, Expr]]:
    items = list(defs.items()) if isinstance(defs, Mapping) else list(defs)
    seen = set()
    pairs = []
    for name, value in items:
        if name in seen:
            raise ModelDefinitionError(f"parameter '{name}' is defined twice")
        if name in RESERVED_NAMES:
            raise ModelDefinitionError(f"'{name}' is a reserved name and cannot be a parameter")
        seen.add(name)
        try:
            pairs.append((name, as_expr(value)))
        except MarkovCeaError as exc:
            raise ParameterError(name, str(exc)) from exc
    return pairs


class ParameterSet:
    """
    Named expressions evaluated in declaration order

    Each definition may read reserved time variables and parameters declared
    before it. Instances are immutable; `modify` returns a new set.
    """

    def __init__(self, definitions: Iterable[Tuple[str, Expr]] = ()):
        self._definitions: Tuple[Tuple[str, Expr], ...] = tuple(definitions)
        self._check_order()

    def _check_order(self) -> None:
        defined = set()
        for name, expr in self._definitions:
            if name in defined:
                raise ModelDefinitionError(f"parameter '{name}' is defined twice")
            unresolved = sorted(free_names(expr) - RESERVED_NAMES - defined)
            if unresolved:
                raise ModelDefinitionError(
                    f"parameter '{name}' references {', '.join(repr(n) for n in unresolved)} "
                    "before definition (parameters must be declared before use)"
                )
            defined.add(name)

    def __iter__(self) -> Iterator[Tuple[str, Expr]]:
        return iter(self._definitions)

    def __len__(self) -> int:
        return len(self._definitions)

    def __contains__(self, name: object) -> bool:
        return any(name == key for key, _ in self._definitions)

    def __getitem__(self, name: str) -> Expr:
        for key, expr in self._definitions:
            if key == name:
                return expr
        raise KeyError(name)

    def __repr__(self) -> str:
        return f"ParameterSet({', '.join(self.names)})"

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(name for name, _ in self._definitions)

    def modify(self, defs: Definitions) -> "ParameterSet":
        """Replace existing definitions in place and append new ones at the end"""
        updates = dict(_pairs(defs))
        replaced = [(name, updates.pop(name, expr)) for name, expr in self._definitions]
        return ParameterSet(replaced + list(updates.items()))

    def dependents_of(self, roots: Iterable[str], reads: Optional[Reads] = None) -> FrozenSet[str]:
        """
        Transitive closure of parameters depending on `roots` (roots included)

        `reads` maps survival declarations to the parameters their arguments read, so
        a parameter calling compute_surv also depends on those.
        """
        affected = set(roots)
        for name, expr in self._definitions:
            if names_read(expr, reads) & affected:
                affected.add(name)
        return frozenset(affected)

    def state_time_dependent(self, reads: Optional[Reads] = None) -> FrozenSet[str]:
        """Parameters reading `state_time` directly or through other parameters"""
        return self.dependents_of({STATE_TIME}, reads) - {STATE_TIME}

    def subset(self, keep: Iterable[str]) -> "ParameterSet":
        keep = set(keep)
        return ParameterSet((name, expr) for name, expr in self._definitions if name in keep)


def build_parameter_set(defs: Definitions) -> ParameterSet:
    """
    Create a parameter set from name/expression pairs

    Args:
        defs: Mapping or sequence of (name, expression text / number / tree)

    Returns:
        Validated ParameterSet

    Raises:
        ModelDefinitionError: duplicate names, reserved names or forward references
    """
    return ParameterSet(_pairs(defs))


def modify_parameter_set(parameters: ParameterSet, defs: Definitions) -> ParameterSet:
    """Functional form of `ParameterSet.modify`"""
    return parameters.modify(defs)


class ParameterTable:
    """Evaluated parameter columns, one value per cycle"""

    def __init__(self, cycles: int, columns: Mapping[str, np.ndarray]):
        self.cycles = cycles
        self._columns: Dict[str, np.ndarray] = dict(columns)
        for name, values in self._columns.items():
            if values.shape != (cycles,):
                raise ModelDefinitionError(f"column '{name}' must have length {cycles}")

    def __getitem__(self, name: str) -> np.ndarray:
        return self._columns[name]

    def __contains__(self, name: object) -> bool:
        return name in self._columns

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(self._columns)

    @property
    def columns(self) -> Mapping[str, np.ndarray]:
        return self._columns


def evaluate_parameters(
    parameters: ParameterSet,
    ctx: EvalContext,
    base: Optional[ParameterTable] = None,
    reads: Optional[Reads] = None,
) -> ParameterTable:
    """
    Evaluate every definition in declaration order

    Args:
        parameters: Definitions to evaluate
        ctx: Evaluation context; its bindings are visible to every definition
        base: Table computed without state_time; its columns are reused for every
            parameter that does not depend on state_time
        reads: Parameters read by each survival declaration, see `ParameterSet.dependents_of`

    Returns:
        ParameterTable with one column per parameter

    Raises:
        ParameterError: the first failing definition, annotated with its name
    """
    columns: Dict[str, np.ndarray] = {}
    scope = ctx.with_bindings(ChainMap(columns, dict(ctx.bindings)))
    recompute = parameters.state_time_dependent(reads) if base is not None else None
    for name, expr in parameters:
        if recompute is not None and name not in recompute and name in base:
            columns[name] = base[name]
            continue
        try:
            columns[name] = eval_expression(expr, scope)
        except ParameterError:
            raise
        except MarkovCeaError as exc:
            raise ParameterError(name, str(exc)) from exc
    return ParameterTable(ctx.cycles, columns)

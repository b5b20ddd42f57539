"""
Vectorized evaluation of expression trees over model cycles.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import functions
from .errors import EvaluationError, LifeTableError, SurvivalError
from .expr import (
    DISPATCH_FUNCTION,
    MARKOV_CYCLE,
    MODEL_TIME,
    RESERVED_NAMES,
    SEX_CONSTANTS,
    STATE_TIME,
    SURVIVAL_FUNCTION,
    BinaryOp,
    Call,
    Expr,
    Name,
    Number,
    UnaryOp,
)
from .lifetable import LifeTable
from .models import SexCode
from .survival import SurvivalDeclaration, compute_surv

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvalContext:
    """
    Everything an expression may read

    Args:
        cycles: Number of model cycles T
        strategy: Name of the running strategy (selects dispatch_strategy branches)
        bindings: Name -> array of length T
        state_time: Dwell-time vector, only inside an expanded tunnel state
        survival: Survival declarations usable through compute_surv
        lifetable: Mortality table used by mortality_prob
        first_cycle_undiscounted: Default convention of discount()
    """

    cycles: int
    strategy: str = ""
    bindings: Mapping[str, np.ndarray] = field(default_factory=dict)
    state_time: Optional[np.ndarray] = None
    survival: Mapping[str, SurvivalDeclaration] = field(default_factory=dict)
    lifetable: Optional[LifeTable] = None
    first_cycle_undiscounted: bool = True

    def __post_init__(self):
        if self.cycles < 1:
            raise EvaluationError("cycle count must be >= 1")
        for name, values in self.bindings.items():
            if name in RESERVED_NAMES:
                raise EvaluationError(f"'{name}' is reserved and cannot be bound")
            if np.shape(values) != (self.cycles,):
                raise EvaluationError(f"binding '{name}' must have length {self.cycles}")
        if self.state_time is not None and np.shape(self.state_time) != (self.cycles,):
            raise EvaluationError(f"state_time must have length {self.cycles}")

    def with_bindings(self, bindings: Mapping[str, np.ndarray]) -> "EvalContext":
        return replace(self, bindings=bindings)

    def at_state_time(self, dwell: int) -> "EvalContext":
        """Context of the tunnel copy occupied for the `dwell`-th consecutive cycle"""
        return replace(self, state_time=np.full(self.cycles, float(dwell)))

    @property
    def model_time(self) -> np.ndarray:
        return np.arange(1, self.cycles + 1, dtype=np.float64)


def _log(x):
    x = np.asarray(x, dtype=np.float64)
    if np.any(x <= 0):
        raise EvaluationError("log: argument must be positive")
    return np.log(x)


def _sqrt(x):
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0):
        raise EvaluationError("sqrt: argument must be >= 0")
    return np.sqrt(x)


def _extremum(reducer):
    def apply(*values):
        if not values:
            raise EvaluationError("min/max need at least one argument")
        return reducer.reduce(np.broadcast_arrays(*[np.asarray(v, dtype=np.float64) for v in values]))

    return apply


# name -> (callable, argument names or None for variadic, defaults)
BUILTINS: Dict[str, Tuple[Callable[..., Any], Optional[Tuple[str, ...]], Dict[str, float]]] = {
    "combine_probs": (functions.combine_probs, None, {}),
    "rate_to_prob": (functions.rate_to_prob, ("r", "per"), {"per": 1.0}),
    "or_to_prob": (functions.or_to_prob, ("or", "p0"), {}),
    "rr_to_prob": (functions.rr_to_prob, ("rr", "p0"), {}),
    "rescale_prob": (functions.rescale_prob, ("p", "from", "to"), {"from": 1.0, "to": 1.0}),
    "rescale_discount_rate": (functions.rescale_discount_rate, ("r", "from", "to"), {"from": 1.0, "to": 1.0}),
    "exp": (np.exp, ("x",), {}),
    "log": (_log, ("x",), {}),
    "sqrt": (_sqrt, ("x",), {}),
    "abs": (np.abs, ("x",), {}),
    "min": (_extremum(np.minimum), None, {}),
    "max": (_extremum(np.maximum), None, {}),
}

SPECIAL_FORMS = ("ifelse", "discount", DISPATCH_FUNCTION, SURVIVAL_FUNCTION, "mortality_prob")
KNOWN_FUNCTIONS = frozenset(BUILTINS) | frozenset(SPECIAL_FORMS)


def _bind(call: Call, names: Sequence[str], defaults: Mapping[str, Any]) -> Dict[str, Any]:
    if len(call.args) > len(names):
        raise EvaluationError(f"{call.func}() takes at most {len(names)} arguments")
    bound: Dict[str, Any] = dict(zip(names, call.args))
    for key, value in call.kwargs:
        if key not in names:
            raise EvaluationError(f"{call.func}() got an unexpected argument '{key}'")
        if key in bound:
            raise EvaluationError(f"{call.func}() got multiple values for '{key}'")
        bound[key] = value
    missing = [name for name in names if name not in bound and name not in defaults]
    if missing:
        raise EvaluationError(f"{call.func}() is missing argument(s): {', '.join(missing)}")
    return bound


class _Evaluator:
    def __init__(self, ctx: EvalContext):
        self.ctx = ctx

    def visit(self, expr: Expr) -> np.ndarray:
        if isinstance(expr, Number):
            return np.asarray(expr.value, dtype=np.float64)
        if isinstance(expr, Name):
            return self.name(expr.name)
        if isinstance(expr, UnaryOp):
            operand = self.visit(expr.operand)
            return -operand if expr.op == "-" else (operand == 0).astype(np.float64)
        if isinstance(expr, BinaryOp):
            return self.binary(expr.op, self.visit(expr.left), self.visit(expr.right))
        if isinstance(expr, Call):
            return self.call(expr)
        raise EvaluationError(f"cannot evaluate {type(expr).__name__} node")

    def scalar(self, expr: Expr) -> float:
        values = np.broadcast_to(self.visit(expr), (self.ctx.cycles,))
        if np.any(values != values[0]):
            raise EvaluationError("argument must be constant across cycles")
        return float(values[0])

    def name(self, name: str) -> np.ndarray:
        if name in (MODEL_TIME, MARKOV_CYCLE):
            return self.ctx.model_time
        if name == STATE_TIME:
            if self.ctx.state_time is None:
                raise EvaluationError("'state_time' used outside a state context")
            return np.asarray(self.ctx.state_time, dtype=np.float64)
        if name in SEX_CONSTANTS:
            return np.asarray(SEX_CONSTANTS[name])
        try:
            return np.asarray(self.ctx.bindings[name], dtype=np.float64)
        except KeyError:
            raise EvaluationError(f"unknown name '{name}'") from None

    @staticmethod
    def binary(op: str, left: np.ndarray, right: np.ndarray) -> np.ndarray:
        if op == "+":
            return left + right
        if op == "-":
            return left - right
        if op == "*":
            return left * right
        if op == "/":
            if np.any(right == 0):
                raise EvaluationError("division by zero")
            return left / right
        if op == "^":
            with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
                return np.power(left, right)
        if op == "==":
            return (left == right).astype(np.float64)
        if op == "!=":
            return (left != right).astype(np.float64)
        if op == "<":
            return (left < right).astype(np.float64)
        if op == "<=":
            return (left <= right).astype(np.float64)
        if op == ">":
            return (left > right).astype(np.float64)
        if op == ">=":
            return (left >= right).astype(np.float64)
        if op == "&&":
            return ((left != 0) & (right != 0)).astype(np.float64)
        if op == "||":
            return ((left != 0) | (right != 0)).astype(np.float64)
        raise EvaluationError(f"unknown operator '{op}'")

    def call(self, call: Call) -> np.ndarray:
        if call.func == "ifelse":
            bound = _bind(call, ("condition", "true", "false"), {})
            condition, yes, no = (self.visit(bound[key]) for key in ("condition", "true", "false"))
            return np.where(condition != 0, yes, no)
        if call.func == "discount":
            return self.discount(call)
        if call.func == DISPATCH_FUNCTION:
            return self.dispatch(call)
        if call.func == SURVIVAL_FUNCTION:
            return self.survival(call)
        if call.func == "mortality_prob":
            return self.mortality(call)
        if call.func not in BUILTINS:
            raise EvaluationError(f"unknown function '{call.func}'")
        func, names, defaults = BUILTINS[call.func]
        if names is None:
            if call.kwargs:
                raise EvaluationError(f"{call.func}() takes positional arguments only")
            return func(*[self.visit(arg) for arg in call.args])
        bound = _bind(call, names, defaults)
        values = [self.visit(bound[name]) if name in bound else defaults[name] for name in names]
        return func(*values)

    def discount(self, call: Call) -> np.ndarray:
        bound = _bind(call, ("x", "r", "first"), {"first": None})
        x = np.broadcast_to(self.visit(bound["x"]), (self.ctx.cycles,))
        rate = self.visit(bound["r"])
        if "first" in bound:
            undiscounted = bool(self.scalar(bound["first"]) == 0)
        else:
            undiscounted = self.ctx.first_cycle_undiscounted
        return functions.discount(x, rate, first_cycle_undiscounted=undiscounted)

    def dispatch(self, call: Call) -> np.ndarray:
        if call.args:
            raise EvaluationError(f"{DISPATCH_FUNCTION}() takes strategy-named arguments only")
        branch = call.keyword(self.ctx.strategy)
        if branch is None:
            raise EvaluationError(f"{DISPATCH_FUNCTION}(): no branch for strategy '{self.ctx.strategy}'")
        return self.visit(branch)

    def survival(self, call: Call) -> np.ndarray:
        if not call.args or not isinstance(call.args[0], Name):
            raise EvaluationError(f"{SURVIVAL_FUNCTION}() needs a survival distribution name first")
        name = call.args[0].name
        if name not in self.ctx.survival:
            raise EvaluationError(f"unknown survival distribution '{name}'")
        rest = Call(call.func, call.args[1:], call.kwargs)
        bound = _bind(rest, ("time", "cycle_length", "km_limit"), {"cycle_length": 1.0, "km_limit": 0.0})
        time = np.broadcast_to(self.visit(bound["time"]), (self.ctx.cycles,))
        cycle_length = self.scalar(bound["cycle_length"]) if "cycle_length" in bound else 1.0
        km_limit = self.scalar(bound["km_limit"]) if "km_limit" in bound else 0.0
        try:
            dist = self.ctx.survival[name].build(self.ctx.survival, self.scalar)
            return compute_surv(dist, time, cycle_length=cycle_length, km_limit=km_limit)
        except SurvivalError as exc:
            raise EvaluationError(f"survival '{name}': {exc}") from exc

    def mortality(self, call: Call) -> np.ndarray:
        if self.ctx.lifetable is None:
            raise EvaluationError("mortality_prob() needs a life table")
        bound = _bind(call, ("age", "sex"), {})
        age = np.broadcast_to(self.visit(bound["age"]), (self.ctx.cycles,))
        code = self.scalar(bound["sex"])
        try:
            sex = SexCode.from_numeric(code)
        except ValueError:
            raise EvaluationError("mortality_prob(): sex must be MLE, FMLE or BTSX") from None
        try:
            return self.ctx.lifetable.mortality_prob(age, sex)
        except LifeTableError as exc:
            raise EvaluationError(f"mortality_prob(): {exc}") from exc


def eval_expression(expr: Expr, ctx: EvalContext) -> np.ndarray:
    """
    Evaluate an expression for every cycle

    Args:
        expr: Parsed expression
        ctx: Bindings and settings of the evaluation

    Returns:
        float64 array of length ctx.cycles (scalars are broadcast)

    Raises:
        EvaluationError: unresolved names, misuse of state_time, division by zero,
            non-finite results and builtin domain errors
    """
    result = _Evaluator(ctx).visit(expr)
    values = np.array(np.broadcast_to(result, (ctx.cycles,)), dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise EvaluationError("expression produced a non-finite value")
    return values

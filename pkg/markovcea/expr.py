"""
Expression language of model documents: syntax tree, parser and printer.

Grammar (lowest to highest precedence)::

    logical     ||  &&
    comparison  ==  !=  <  <=  >  >=
    additive    +  -
    multiplicative  *  /
    power       ^        (right-associative)
    unary       -  !
    atom        number | name | name(args) | (expr)

Call arguments may be positional or named (``discount(x, r = dr)``).
"""

from dataclasses import dataclass
from typing import FrozenSet, Iterator, Tuple, Union

from lark import Lark, Transformer, v_args
from lark.exceptions import UnexpectedCharacters, UnexpectedEOF, UnexpectedInput, UnexpectedToken

from .errors import ExpressionSyntaxError
from .models import SexCode

MODEL_TIME = "model_time"
MARKOV_CYCLE = "markov_cycle"
STATE_TIME = "state_time"

TIME_NAMES = frozenset({MODEL_TIME, MARKOV_CYCLE, STATE_TIME})
SEX_CONSTANTS = {code.value: code.numeric for code in SexCode}
RESERVED_NAMES = TIME_NAMES | frozenset(SEX_CONSTANTS)

# survival references are not numeric identifiers
SURVIVAL_FUNCTION = "compute_surv"
DISPATCH_FUNCTION = "dispatch_strategy"


class Expr:
    """Base class of expression tree nodes"""

    def walk(self) -> Iterator["Expr"]:
        yield self


@dataclass(frozen=True)
class Number(Expr):
    value: float


@dataclass(frozen=True)
class Name(Expr):
    name: str


@dataclass(frozen=True)
class UnaryOp(Expr):
    op: str
    operand: Expr

    def walk(self) -> Iterator[Expr]:
        yield self
        yield from self.operand.walk()


@dataclass(frozen=True)
class BinaryOp(Expr):
    op: str
    left: Expr
    right: Expr

    def walk(self) -> Iterator[Expr]:
        yield self
        yield from self.left.walk()
        yield from self.right.walk()


@dataclass(frozen=True)
class Call(Expr):
    func: str
    args: Tuple[Expr, ...] = ()
    kwargs: Tuple[Tuple[str, Expr], ...] = ()

    def walk(self) -> Iterator[Expr]:
        yield self
        for arg in self.args:
            yield from arg.walk()
        for _, arg in self.kwargs:
            yield from arg.walk()

    def keyword(self, name: str) -> Union[Expr, None]:
        for key, value in self.kwargs:
            if key == name:
                return value
        return None


ExprLike = Union[Expr, str, float, int]

_GRAMMAR = r"""
?start: expr

?expr: or_expr

?or_expr: and_expr
        | or_expr "||" and_expr      -> or_op

?and_expr: cmp_expr
         | and_expr "&&" cmp_expr    -> and_op

?cmp_expr: add_expr
         | cmp_expr "==" add_expr    -> eq
         | cmp_expr "!=" add_expr    -> ne
         | cmp_expr "<=" add_expr    -> le
         | cmp_expr ">=" add_expr    -> ge
         | cmp_expr "<" add_expr     -> lt
         | cmp_expr ">" add_expr     -> gt

?add_expr: mul_expr
         | add_expr "+" mul_expr     -> add
         | add_expr "-" mul_expr     -> sub

?mul_expr: pow_expr
         | mul_expr "*" pow_expr     -> mul
         | mul_expr "/" pow_expr     -> div

?pow_expr: unary
         | unary "^" pow_expr        -> pow

?unary: atom
      | "-" unary                    -> neg
      | "!" unary                    -> not_op

?atom: NUMBER                        -> number
     | NAME                          -> name
     | NAME "(" [arguments] ")"      -> call
     | "(" expr ")"

arguments: argument ("," argument)*

?argument: expr
         | NAME "=" expr             -> keyword

NUMBER: /(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?/
NAME: /[A-Za-z_][A-Za-z0-9_.]*/

%ignore /\s+/
"""

_BINARY_RULES = {
    "or_op": "||",
    "and_op": "&&",
    "eq": "==",
    "ne": "!=",
    "le": "<=",
    "ge": ">=",
    "lt": "<",
    "gt": ">",
    "add": "+",
    "sub": "-",
    "mul": "*",
    "div": "/",
    "pow": "^",
}

# binding strength used by the printer
PRECEDENCE = {
    "||": 1,
    "&&": 2,
    "==": 3,
    "!=": 3,
    "<": 3,
    "<=": 3,
    ">": 3,
    ">=": 3,
    "+": 4,
    "-": 4,
    "*": 5,
    "/": 5,
    "^": 6,
}
UNARY_PRECEDENCE = 7
ATOM_PRECEDENCE = 8


class _Keyword:
    def __init__(self, name: str, value: Expr):
        self.name = name
        self.value = value


class _TreeBuilder(Transformer):
    """Turns lark parse trees into Expr nodes"""

    def number(self, children):
        return Number(float(children[0]))

    def name(self, children):
        return Name(str(children[0]))

    @v_args(inline=True)
    def neg(self, operand):
        return UnaryOp("-", operand)

    @v_args(inline=True)
    def not_op(self, operand):
        return UnaryOp("!", operand)

    def keyword(self, children):
        return _Keyword(str(children[0]), children[1])

    def arguments(self, children):
        return list(children)

    def call(self, children):
        func = str(children[0])
        arguments = children[1] if len(children) > 1 and children[1] is not None else []
        args = tuple(arg for arg in arguments if not isinstance(arg, _Keyword))
        kwargs = tuple((arg.name, arg.value) for arg in arguments if isinstance(arg, _Keyword))
        return Call(func, args, kwargs)


def _binary(op: str):
    def build(self, children):
        return BinaryOp(op, children[0], children[1])

    return build


for _rule, _op in _BINARY_RULES.items():
    setattr(_TreeBuilder, _rule, _binary(_op))

_PARSER = Lark(_GRAMMAR, parser="lalr", start="start", maybe_placeholders=True)


def _byte_offset(text: str, position: int) -> int:
    return len(text[:position].encode("utf-8"))


def parse_expression(text: str) -> Expr:
    """
    Parse expression text into a syntax tree

    Args:
        text: Expression source, e.g. ``"ifelse(state_time == 1, cost_surg, 0)"``

    Returns:
        Root node of the tree

    Raises:
        ExpressionSyntaxError: with the byte offset of the failure and the expected tokens
    """
    if not text or not text.strip():
        raise ExpressionSyntaxError("empty expression", text=text or "", offset=0)
    try:
        tree = _PARSER.parse(text)
    except UnexpectedToken as exc:
        if exc.token.type == "$END":
            offset = len(text.encode("utf-8"))
            message = "unexpected end of expression"
        else:
            offset = _byte_offset(text, exc.token.start_pos or 0)
            message = f"unexpected token '{exc.token}'"
        raise ExpressionSyntaxError(message, text=text, offset=offset, expected=exc.expected) from None
    except UnexpectedCharacters as exc:
        offset = _byte_offset(text, exc.pos_in_stream)
        raise ExpressionSyntaxError(
            f"unexpected character '{text[exc.pos_in_stream]}'",
            text=text,
            offset=offset,
            expected=exc.allowed or (),
        ) from None
    except UnexpectedEOF as exc:
        raise ExpressionSyntaxError(
            "unexpected end of expression", text=text, offset=len(text.encode("utf-8")), expected=exc.expected
        ) from None
    except UnexpectedInput as exc:  # pragma: no cover - lark's remaining variants
        raise ExpressionSyntaxError(str(exc), text=text, offset=0) from None
    return _TreeBuilder().transform(tree)


def as_expr(value: ExprLike) -> Expr:
    """Accept an existing tree, a number or expression text"""
    if isinstance(value, Expr):
        return value
    if isinstance(value, bool):
        return Number(float(value))
    if isinstance(value, (int, float)):
        return Number(float(value))
    return parse_expression(value)


def free_names(expr: Expr) -> FrozenSet[str]:
    """
    Identifiers an expression reads, reserved names included

    Survival references (the first argument of ``compute_surv``) and named-argument
    keys are not identifiers and are excluded.
    """
    names = set()
    _collect_names(expr, names)
    return frozenset(names)


def _collect_names(expr: Expr, names: set) -> None:
    if isinstance(expr, Name):
        names.add(expr.name)
    elif isinstance(expr, UnaryOp):
        _collect_names(expr.operand, names)
    elif isinstance(expr, BinaryOp):
        _collect_names(expr.left, names)
        _collect_names(expr.right, names)
    elif isinstance(expr, Call):
        args = expr.args
        if expr.func == SURVIVAL_FUNCTION and args and isinstance(args[0], Name):
            args = args[1:]
        for arg in args:
            _collect_names(arg, names)
        for _, arg in expr.kwargs:
            _collect_names(arg, names)


def survival_references(expr: Expr) -> FrozenSet[str]:
    """Names of survival declarations used through ``compute_surv``"""
    refs = set()
    for node in expr.walk():
        if isinstance(node, Call) and node.func == SURVIVAL_FUNCTION and node.args:
            first = node.args[0]
            if isinstance(first, Name):
                refs.add(first.name)
    return frozenset(refs)


def _format_number(value: float) -> str:
    if value.is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


def _precedence(expr: Expr) -> int:
    if isinstance(expr, BinaryOp):
        return PRECEDENCE[expr.op]
    if isinstance(expr, UnaryOp):
        return UNARY_PRECEDENCE
    return ATOM_PRECEDENCE


def to_text(expr: Expr) -> str:
    """Print a tree back to expression text with the minimal parentheses"""
    if isinstance(expr, Number):
        return _format_number(expr.value)
    if isinstance(expr, Name):
        return expr.name
    if isinstance(expr, UnaryOp):
        inner = to_text(expr.operand)
        if _precedence(expr.operand) < UNARY_PRECEDENCE:
            inner = f"({inner})"
        return f"{expr.op}{inner}"
    if isinstance(expr, BinaryOp):
        level = PRECEDENCE[expr.op]
        left, right = to_text(expr.left), to_text(expr.right)
        if expr.op == "^":
            # right-associative
            if _precedence(expr.left) <= level:
                left = f"({left})"
            if _precedence(expr.right) < level:
                right = f"({right})"
        else:
            if _precedence(expr.left) < level:
                left = f"({left})"
            if _precedence(expr.right) <= level:
                right = f"({right})"
        return f"{left} {expr.op} {right}"
    if isinstance(expr, Call):
        parts = [to_text(arg) for arg in expr.args]
        parts += [f"{key} = {to_text(value)}" for key, value in expr.kwargs]
        return f"{expr.func}({', '.join(parts)})"
    raise TypeError(f"not an expression node: {expr!r}")

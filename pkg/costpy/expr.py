"""
Cost-expression language used by textual framework configurations.

Grammar::

    expr  := term (("+" | "-") term)*
    term  := unary (("*" | "/") unary)*
    unary := ["-"] atom
    atom  := number | ident | fn "(" expr {"," expr} ")" | "(" expr ")"

Evaluation is exact (`fractions.Fraction`); rounding happens once, when a
`CostFormula` result is turned into a `CostTuple`.
"""
import inspect
import logging
import math
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional, Union

from costpy.errors import ConfigError, ExpressionSyntaxError
from costpy.params import CONV_FIELDS, SECURITY_FIELDS

logger = logging.getLogger(__name__)

IDENTIFIERS = frozenset(
    SECURITY_FIELDS + ('size', 'p', 'q', 'r', 'deg', 'knownmsb') + CONV_FIELDS
)
LIST_IDENTIFIERS = frozenset(('mod',))
FUNCTIONS = {
    'ceil': (1, 1),
    'floor': (1, 1),
    'log2': (1, 1),
    'min': (2, None),
    'max': (2, None),
    'if': (3, 3),
    'slice_sum': (2, 3),
}
COMPONENTS = ('online_bits', 'online_rounds', 'offline_bits', 'offline_rounds')

_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+)
  | (?P<number>\d+(?:\.\d+)?|\.\d+)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/(),])
""", re.VERBOSE)

Number = Union[int, Fraction, float]


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    pos: int


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if match is None:
            raise ExpressionSyntaxError(
                f"unexpected character {text[pos]!r}", text, pos
            )
        if match.lastgroup != 'ws':
            tokens.append(Token(match.lastgroup, match.group(), pos))
        pos = match.end()
    tokens.append(Token('end', "", len(text)))
    return tokens


def _as_exact(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(value)
    return Fraction(int(value))


def exact_log2(value: Number) -> Fraction:
    """log2 that stays exact on powers of two."""
    value = _as_exact(value)
    if value <= 0:
        raise ConfigError(f"log2 of non-positive value {value}")
    if value.denominator == 1:
        num = value.numerator
        if num & (num - 1) == 0:
            return Fraction(num.bit_length() - 1)
    return Fraction(math.log2(value))


class Node:
    """Base class of expression tree nodes."""

    def evaluate(self, env: dict) -> Fraction:
        raise NotImplementedError

    def names(self) -> set[str]:
        return set()


@dataclass(frozen=True)
class Const(Node):
    value: Fraction

    def evaluate(self, env):
        return self.value


@dataclass(frozen=True)
class Name(Node):
    name: str

    def evaluate(self, env):
        try:
            value = env[self.name]
        except KeyError:
            raise ConfigError(
                f"missing value for parameter '{self.name}'"
            ) from None
        return _as_exact(value)

    def names(self):
        return {self.name}


@dataclass(frozen=True)
class Neg(Node):
    operand: Node

    def evaluate(self, env):
        return -self.operand.evaluate(env)

    def names(self):
        return self.operand.names()


@dataclass(frozen=True)
class BinOp(Node):
    op: str
    left: Node
    right: Node

    def evaluate(self, env):
        lhs = self.left.evaluate(env)
        rhs = self.right.evaluate(env)
        if self.op == '+':
            return lhs + rhs
        if self.op == '-':
            return lhs - rhs
        if self.op == '*':
            return lhs * rhs
        if rhs == 0:
            raise ConfigError("division by zero in cost expression")
        return lhs / rhs

    def names(self):
        return self.left.names() | self.right.names()


@dataclass(frozen=True)
class SliceSum(Node):
    """Sum of a slice of a list parameter, with Python slice semantics."""
    name: str
    start: Node
    end: Optional[Node]

    def evaluate(self, env):
        try:
            values = env[self.name]
        except KeyError:
            raise ConfigError(
                f"missing value for parameter '{self.name}'"
            ) from None
        if not values:
            raise ConfigError(f"'{self.name}' must not be empty")
        start = int(self.start.evaluate(env))
        end = None if self.end is None else int(self.end.evaluate(env))
        return Fraction(sum(values[start:end]))

    def names(self):
        names = {self.name} | self.start.names()
        if self.end is not None:
            names |= self.end.names()
        return names


@dataclass(frozen=True)
class Call(Node):
    fn: str
    args: tuple[Node, ...]

    def evaluate(self, env):
        if self.fn == 'if':
            cond, then, other = self.args
            if cond.evaluate(env) != 0:
                return then.evaluate(env)
            return other.evaluate(env)
        values = [arg.evaluate(env) for arg in self.args]
        if self.fn == 'ceil':
            return Fraction(math.ceil(values[0]))
        if self.fn == 'floor':
            return Fraction(math.floor(values[0]))
        if self.fn == 'log2':
            return exact_log2(values[0])
        if self.fn == 'min':
            return min(values)
        return max(values)

    def names(self):
        names = set()
        for arg in self.args:
            names |= arg.names()
        return names


class _Parser:
    """Recursive-descent parser over the token list."""

    def __init__(self, text: str):
        self.text = text
        self.tokens = tokenize(text)
        self.index = 0

    @property
    def current(self) -> Token:
        return self.tokens[self.index]

    def error(self, message: str, token: Token = None):
        token = token or self.current
        return ExpressionSyntaxError(message, self.text, token.pos)

    def advance(self) -> Token:
        token = self.current
        self.index += 1
        return token

    def expect(self, text: str) -> Token:
        if self.current.text != text:
            found = self.current.text or "end of input"
            raise self.error(f"expected '{text}', found '{found}'")
        return self.advance()

    def parse(self) -> Node:
        node = self.expr()
        if self.current.kind != 'end':
            raise self.error(f"unexpected '{self.current.text}'")
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.current.text in ('+', '-'):
            op = self.advance().text
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.current.text in ('*', '/'):
            op = self.advance().text
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.current.text == '-':
            self.advance()
            return Neg(self.atom())
        return self.atom()

    def atom(self) -> Node:
        token = self.current
        if token.kind == 'number':
            self.advance()
            return Const(Fraction(token.text))
        if token.text == '(':
            self.advance()
            node = self.expr()
            self.expect(')')
            return node
        if token.kind == 'ident':
            self.advance()
            if self.current.text == '(':
                return self.call(token)
            if token.text in LIST_IDENTIFIERS:
                raise self.error(
                    f"'{token.text}' is only allowed inside slice_sum", token
                )
            if token.text not in IDENTIFIERS:
                raise self.error(f"unknown identifier '{token.text}'", token)
            return Name(token.text)
        found = token.text or "end of input"
        raise self.error(f"unexpected '{found}'")

    def call(self, token: Token) -> Node:
        if token.text not in FUNCTIONS:
            raise self.error(f"unknown function '{token.text}'", token)
        self.expect('(')
        if token.text == 'slice_sum':
            target = self.current
            if target.text not in LIST_IDENTIFIERS:
                raise self.error("slice_sum expects a list parameter", target)
            self.advance()
            args = [Name(target.text)]
        else:
            args = [self.expr()]
        while self.current.text == ',':
            self.advance()
            args.append(self.expr())
        self.expect(')')
        low, high = FUNCTIONS[token.text]
        if len(args) < low or (high is not None and len(args) > high):
            raise self.error(
                f"wrong number of arguments for '{token.text}'", token
            )
        if token.text == 'slice_sum':
            end = args[2] if len(args) == 3 else None
            return SliceSum(args[0].name, args[1], end)
        return Call(token.text, tuple(args))


def parse_expression(text: str) -> Node:
    """Parse one arithmetic expression of the cost language."""
    return _Parser(str(text)).parse()


class CostFormula:
    """Maps parameters to the four components of a cost tuple.

    A formula is either four parsed expressions or a callable (the built-in
    configurations and the packing-algorithm procedures).
    """

    def __init__(
        self,
        parameters: frozenset,
        func: Callable[[dict], tuple],
        source: Optional[tuple[str, ...]] = None,
        procedure: Optional[str] = None
    ):
        self.parameters = frozenset(parameters)
        self._func = func
        self.source = source
        self.procedure = procedure

    def __repr__(self):
        if self.source is not None:
            return f"CostFormula({', '.join(self.source)})"
        if self.procedure is not None:
            return f"CostFormula(procedure={self.procedure})"
        return f"CostFormula({sorted(self.parameters)})"

    def evaluate(self, env: dict) -> tuple:
        """Raw (unrounded) components for the given parameter values."""
        return tuple(_as_exact(value) for value in self._func(env))

    @classmethod
    def from_expressions(cls, texts) -> "CostFormula":
        texts = tuple(str(text) for text in texts)
        if len(texts) != len(COMPONENTS):
            raise ConfigError(
                f"a cost formula needs {len(COMPONENTS)} expressions, "
                f"got {len(texts)}"
            )
        nodes = tuple(parse_expression(text) for text in texts)
        parameters = set()
        for node in nodes:
            parameters |= node.names()

        def func(env):
            return tuple(node.evaluate(env) for node in nodes)

        return cls(frozenset(parameters), func, source=texts)

    @classmethod
    def from_callable(cls, func: Callable) -> "CostFormula":
        """Wrap a `lambda k, kappa_s, ..., size: (...)` style function."""
        parameters = frozenset(inspect.signature(func).parameters)

        def call(env):
            try:
                kwargs = {name: env[name] for name in parameters}
            except KeyError as e:
                raise ConfigError(
                    f"missing value for parameter '{e.args[0]}'"
                ) from None
            return func(**kwargs)

        return cls(parameters, call)

    @classmethod
    def from_procedure(
        cls,
        name: str,
        parameters,
        func: Callable[[dict], tuple]
    ) -> "CostFormula":
        return cls(frozenset(parameters), func, procedure=name)


def parse_cost_formula(text) -> CostFormula:
    """Parse a textual formula.

    `text` is either the four component expressions (a sequence) or a single
    string holding them separated by `;`.
    """
    if isinstance(text, str):
        parts = [part.strip() for part in text.split(';')]
    else:
        parts = list(text)
    formula = CostFormula.from_expressions(parts)
    logger.debug(f"Parsed {formula!r}")
    return formula

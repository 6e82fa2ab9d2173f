"""
Labeled instruction blocks and the block tree they are compiled into.

Programs are traced inside a `CompileContext`. Emitted instructions wait in a
pending list and become a `Block` whenever the label changes, so every block
carries the label path ("initial-test-mul") active when it was emitted.
Statically bounded loops are compiled once into a child `ReqNode` held by a
`ReqChild` that scales its cost by the iteration count.
"""
import functools
import hashlib
import logging
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Optional

from costpy.errors import CompileError, ConfigError
from costpy.params import ZERO_COST, CostTuple, OpExtras, SecurityParams

logger = logging.getLogger(__name__)

ROOT_LABEL = "initial"
SEPARATOR = "-"


@dataclass(frozen=True)
class Instruction:
    op: str
    extras: OpExtras = OpExtras()
    requires_communication: bool = True


@dataclass(frozen=True)
class Block:
    label: str
    instructions: tuple[Instruction, ...]


@dataclass
class ReqNode:
    blocks: list = field(default_factory=list)
    children: list = field(default_factory=list)

    def aggregate(self, d: dict, cost_of: Callable[[Instruction], CostTuple]):
        for block in self.blocks:
            for instruction in block.instructions:
                if not instruction.requires_communication:
                    continue
                cost = cost_of(instruction)
                d[block.label] = d.get(block.label, ZERO_COST) + cost
        for child in self.children:
            child.aggregate(d, cost_of)

    def signature(self) -> tuple:
        """Structure of the subtree, used to compare compilations."""
        return (
            tuple((b.label, b.instructions) for b in self.blocks),
            tuple(child.signature() for child in self.children),
        )

    def is_empty(self) -> bool:
        return not self.blocks and all(c.is_empty() for c in self.children)


@dataclass
class ReqChild:
    """Control-flow node repeating its children `factor` times."""
    factor: int
    children: list = field(default_factory=list)

    def __post_init__(self):
        if self.factor < 0:
            raise ConfigError(f"loop bound must be non-negative: {self.factor}")

    def aggregator(self, cost: CostTuple) -> CostTuple:
        return cost * self.factor

    def aggregate(self, d: dict, cost_of: Callable[[Instruction], CostTuple]):
        tmp = {}
        for child in self.children:
            child.aggregate(tmp, cost_of)
        for label, cost in tmp.items():
            d[label] = d.get(label, ZERO_COST) + self.aggregator(cost)

    def signature(self) -> tuple:
        return ('x', self.factor, tuple(c.signature() for c in self.children))

    def is_empty(self) -> bool:
        return all(c.is_empty() for c in self.children)


def check_segment(segment: str):
    if not isinstance(segment, str) or not segment:
        raise ConfigError(f"label must be a non-empty string: {segment!r}")
    if SEPARATOR in segment:
        raise ConfigError(
            f"label '{segment}' must not contain '{SEPARATOR}'"
        )


class LabelStack:
    """Prefix label as a stack of segments rooted at "initial"."""

    def __init__(self, segments=(ROOT_LABEL,)):
        self.segments = list(segments)

    @property
    def label(self) -> str:
        return SEPARATOR.join(self.segments)

    def push(self, *segments: str):
        for segment in segments:
            check_segment(segment)
        self.segments.extend(segments)

    def pop(self, *segments: str):
        n = len(segments)
        if n >= len(self.segments) or tuple(self.segments[-n:]) != segments:
            raise CompileError(
                f"unbalanced label pop {segments} from '{self.label}'"
            )
        del self.segments[-n:]

    def copy(self) -> "LabelStack":
        return LabelStack(self.segments)


_local = threading.local()


def _context_stack() -> list:
    if not hasattr(_local, 'stack'):
        _local.stack = []
    return _local.stack


class CompileContext:
    """Per-thread state of one compilation.

    Parameters
    ----------
    recipes : costpy.secure.Recipes, optional
      Knobs of the operator recipes expanded while tracing (e.g. GELU).
    lowering : costpy.secure.LoweringOptions, optional
      Emission-time lowering switches.
    labels : LabelStack, optional
      Starting label stack (a copy is used).

    """

    def __init__(self, recipes=None, lowering=None, labels=None):
        # Deferred to keep this module free of lowering details.
        from costpy.secure import LoweringOptions, Recipes
        self.recipes = recipes or Recipes()
        self.lowering = lowering or LoweringOptions()
        self.labels = labels.copy() if labels is not None else LabelStack()
        self.root = ReqNode()
        self.pending = []
        self.tape = None
        self._nodes = [self.root]
        self._base = list(self.labels.segments)

    def __enter__(self):
        _context_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _context_stack()
        if stack and stack[-1] is self:
            stack.pop()
        if exc_type is None:
            self.flush()
            if len(self._nodes) != 1 or self.labels.segments != self._base:
                raise CompileError(
                    f"compilation ended inside label '{self.labels.label}'"
                )
        return False

    @property
    def node(self) -> ReqNode:
        return self._nodes[-1]

    def emit(self, instruction: Instruction):
        self.pending.append(instruction)

    def flush(self):
        if not self.pending:
            return
        block = Block(self.labels.label, tuple(self.pending))
        self.node.blocks.append(block)
        self.pending = []
        logger.debug(
            f"Flushed {len(block.instructions)} instruction(s) "
            f"under '{block.label}'"
        )

    @contextmanager
    def label_scope(self, *segments: str):
        for segment in segments:
            check_segment(segment)
        self.flush()
        self.labels.push(*segments)
        try:
            yield
            self.flush()
        finally:
            self.labels.pop(*segments)

    def loop(self, n: int, body: Callable[[int], None]):
        if n < 0:
            raise ConfigError(f"loop bound must be non-negative: {n}")
        self.flush()
        child = ReqNode()
        self._nodes.append(child)
        try:
            body(0)
            self.flush()
        finally:
            self._nodes.pop()
        if n > 1:
            self._probe(n, body, child)
        self.node.children.append(ReqChild(n, [child]))
        logger.debug(f"Compiled loop x{n} under '{self.labels.label}'")

    def _probe(self, n: int, body: Callable[[int], None], child: ReqNode):
        probe = CompileContext(self.recipes, self.lowering, self.labels)
        with probe:
            body(n - 1)
        if probe.root.signature() != child.signature():
            raise CompileError(
                f"loop body under '{self.labels.label}' depends on the loop "
                f"index; only input-independent bodies can be profiled"
            )


def current_context() -> CompileContext:
    stack = _context_stack()
    if not stack:
        raise CompileError("no active compilation context")
    return stack[-1]


def emit(instruction: Instruction):
    current_context().emit(instruction)


def emit_op(op: str, requires_communication: bool = True, **extras):
    emit(Instruction(op, OpExtras(**extras), requires_communication))


def with_label(label: str, body: Optional[Callable] = None):
    """Run `body` (or the `with` block) under one more label segment."""
    check_segment(label)
    if body is None:
        return current_context().label_scope(label)
    with current_context().label_scope(label):
        return body()


def label_scope(*segments: str):
    return current_context().label_scope(*segments)


def buildingblock(label: str):
    """Decorator labeling every call of the function.

    A compound label such as "exp-forward" is pushed as its segments.
    """
    segments = tuple(label.split(SEPARATOR))
    for segment in segments:
        check_segment(segment)

    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            with current_context().label_scope(*segments):
                return func(*args, **kwargs)
        return wrapper
    return decorator


def for_range(n: int, body: Optional[Callable[[int], None]] = None):
    """Statically bounded loop; usable as `@for_range(n)` on the body."""
    if body is None:
        def decorator(func):
            current_context().loop(n, func)
            return func
        return decorator
    current_context().loop(n, body)


def compile_program(
    program: Callable,
    *args,
    recipes=None,
    lowering=None,
    **kwargs
) -> ReqNode:
    """Trace `program(*args, **kwargs)` and return the finalized tree."""
    with CompileContext(recipes, lowering) as ctx:
        program(*args, **kwargs)
    return ctx.root


def tree_fingerprint(root: ReqNode) -> str:
    return hashlib.sha256(repr(root.signature()).encode()).hexdigest()


@dataclass
class ProfileReport:
    """Cost per block label, in first-seen label order."""
    entries: dict
    framework: str
    params: SecurityParams
    model: Optional[str] = None
    fingerprint: Optional[str] = None

    def total(self) -> CostTuple:
        return query_prefix(self, ROOT_LABEL)

    def query_prefix(self, prefix: str) -> CostTuple:
        return query_prefix(self, prefix)

    def query_contains(self, *segments: str) -> CostTuple:
        """Sum of the entries whose label contains the consecutive segments."""
        needle = SEPARATOR + SEPARATOR.join(segments) + SEPARATOR
        total = ZERO_COST
        for label, cost in self.entries.items():
            if needle in SEPARATOR + label + SEPARATOR:
                total = total + cost
        return total


def label_has_prefix(label: str, prefix: str) -> bool:
    return label == prefix or label.startswith(prefix + SEPARATOR)


def query_prefix(report: ProfileReport, prefix: str) -> CostTuple:
    """Sum of the entries whose label starts with the segments of `prefix`."""
    total = ZERO_COST
    for label, cost in report.entries.items():
        if label_has_prefix(label, prefix):
            total = total + cost
    return total


def aggregate(
    root: ReqNode,
    framework,
    params: SecurityParams,
    recipes=None,
    registry=None,
    model: Optional[str] = None
) -> ProfileReport:
    """Evaluate the block tree under one framework."""
    from costpy.secure import InstructionCoster
    coster = InstructionCoster(framework, params, recipes, registry)
    entries = {}
    root.aggregate(entries, coster)
    report = ProfileReport(
        entries, coster.config.name, params,
        model=model, fingerprint=tree_fingerprint(root)
    )
    logger.info(
        f"Aggregated {len(entries)} label(s) under {coster.config.name}: "
        f"total {tuple(report.total())}"
    )
    return report

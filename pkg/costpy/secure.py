"""
Fixed-point secure operations and their lowering to framework instructions.

Tensor-level operations emit basic instructions (`muls`, `TruncPr`, ...)
or framework-neutral complicated instructions (`exp`, `reciprocal`, ...).
The latter are resolved per framework when the tree is aggregated: the
framework's own operation when it declares one, a default recipe otherwise.
"""
import logging
from dataclasses import dataclass, replace
from typing import Optional

from costpy.blocktree import Instruction, emit
from costpy.errors import CompileError, ConfigError
from costpy.frameworks import get_framework
from costpy.params import ZERO_COST, ConvExtras, CostTuple, OpExtras

logger = logging.getLogger(__name__)

# Complicated op -> name of the framework operation implementing it directly.
COMPLICATED_OPS = {
    'exp': 'exp_fx',
    'reciprocal': 'Reciprocal',
    'inv_sqrt': 'InvSqrt',
    'div': 'FPDiv',
    'pow2': 'Pow2',
    'conv2d': 'conv2d',
}


@dataclass(frozen=True)
class Recipes:
    """Iteration counts of the default compositions.

    Parameters
    ----------
    exp_iters : int
      Squarings of the limit approximation (1 + x/2^n)^(2^n).
    reciprocal_iters : int
      Newton-Raphson iterations, two multiplications each, after one
      comparison-based normalization.
    inv_sqrt_iters : int
      Newton iterations of the inverse square root, three multiplications
      each.
    gelu_muls, gelu_post_muls, gelu_backward_muls : int
      Multiplications around the sigmoid approximation of GELU.

    """
    exp_iters: int = 8
    reciprocal_iters: int = 10
    inv_sqrt_iters: int = 3
    gelu_muls: int = 2
    gelu_post_muls: int = 1
    gelu_backward_muls: int = 3

    def __post_init__(self):
        for name, value in vars(self).items():
            if not isinstance(value, int) or value < 0:
                raise ConfigError(f"recipe knob {name}={value!r} is invalid")


@dataclass(frozen=True)
class LoweringOptions:
    """Switches applied while tracing.

    `sequential_groups` emits one convolution per group instead of one
    vectorized instruction; `strawman_broadcast` computes broadcast backward
    passes by materializing the broadcast product.
    """
    sequential_groups: bool = False
    strawman_broadcast: bool = False


@dataclass(frozen=True)
class PlanStep:
    op: str
    extras: OpExtras
    repeat: int = 1


@dataclass(frozen=True)
class LoweringPlan:
    op: str
    path: str
    steps: tuple

    @property
    def is_direct(self) -> bool:
        return self.path == 'direct'


def _composite_steps(op: str, extras: OpExtras, recipes: Recipes) -> tuple:
    n = OpExtras(size=extras.size)
    if op == 'exp':
        return (
            PlanStep('muls', n, recipes.exp_iters),
            PlanStep('TruncPr', n, recipes.exp_iters),
        )
    if op == 'reciprocal':
        return (
            PlanStep('LTZ', n),
            PlanStep('muls', n, 2 * recipes.reciprocal_iters),
            PlanStep('TruncPr', n, 2 * recipes.reciprocal_iters),
        )
    if op == 'inv_sqrt':
        return (
            PlanStep('muls', n, 3 * recipes.inv_sqrt_iters),
            PlanStep('TruncPr', n, 3 * recipes.inv_sqrt_iters),
        )
    if op == 'div':
        return (
            PlanStep('reciprocal', n),
            PlanStep('muls', n),
            PlanStep('TruncPr', n),
        )
    if op == 'pow2':
        return (PlanStep('exp', n),)
    if op == 'conv2d':
        conv = extras.conv
        if conv is None:
            raise ConfigError("conv2d instruction without geometry")
        matmul = OpExtras(
            size=extras.size * conv.groups,
            p=conv.batch * conv.outh * conv.outw,
            q=conv.in_channel // conv.groups * conv.kh * conv.kw,
            r=conv.out_channel // conv.groups,
        )
        return (PlanStep('matmuls', matmul),)
    raise CompileError(f"no default composition for '{op}'")


def resolve_complicated(
    op: str,
    framework,
    recipes: Optional[Recipes] = None,
    extras: Optional[OpExtras] = None,
    registry=None
) -> LoweringPlan:
    """Choose between the framework's own operation and the default recipe."""
    if op not in COMPLICATED_OPS:
        raise CompileError(f"'{op}' is not a complicated operation")
    config = get_framework(framework, registry)
    extras = extras or OpExtras()
    direct = COMPLICATED_OPS[op]
    if direct in config.declared_ops:
        plan = LoweringPlan(op, 'direct', (PlanStep(direct, extras),))
    else:
        steps = _composite_steps(op, extras, recipes or Recipes())
        plan = LoweringPlan(op, 'composite', steps)
    logger.debug(f"{config.name}: {op} lowered as {plan.path}")
    return plan


class InstructionCoster:
    """Cost of single instructions under one framework and parameter set."""

    def __init__(
        self,
        framework,
        params,
        recipes: Optional[Recipes] = None,
        registry=None
    ):
        self.config = get_framework(framework, registry)
        self.params = params
        self.recipes = recipes or Recipes()
        self._cache = {}
        self.config.check_params(params)
        self.config.check_slack_bits(params)

    def __call__(self, instruction: Instruction) -> CostTuple:
        key = (instruction.op, instruction.extras)
        if key not in self._cache:
            self._cache[key] = self.cost(instruction.op, instruction.extras)
        return self._cache[key]

    def cost(self, op: str, extras: OpExtras, _stack=()) -> CostTuple:
        if op in self.config.declared_ops:
            return self.config.evaluate(op, self.params, extras)
        if op not in COMPLICATED_OPS:
            raise CompileError(
                f"operation '{op}' is neither declared by "
                f"{self.config.name} nor composable from its operations"
            )
        if op in _stack:
            raise CompileError(
                f"recipe cycle {' -> '.join(_stack + (op,))} "
                f"under {self.config.name}"
            )
        plan = resolve_complicated(op, self.config, self.recipes, extras)
        total = ZERO_COST
        for step in plan.steps:
            cost = self.cost(step.op, step.extras, _stack + (op,))
            total = total + cost * step.repeat
        return total


def _emit(op: str, **extras):
    emit(Instruction(op, OpExtras(**extras)))


def share(n: int):
    if n:
        _emit('share', size=n)


def reveal(n: int):
    if n:
        _emit('reveal', size=n)


def fp_mul(n: int, knownmsb: bool = False):
    """Secret times secret fixed-point product of `n` element pairs."""
    if n:
        _emit('muls', size=n)
        _emit('TruncPr', size=n, knownmsb=int(knownmsb))


def bit_mul(n: int):
    """Product with a secret bit; no rescaling needed."""
    if n:
        _emit('muls', size=n)


def truncate(n: int, knownmsb: bool = False):
    if n:
        _emit('TruncPr', size=n, knownmsb=int(knownmsb))


def fp_public_scale(n: int, knownmsb: bool = False):
    """Product with a public fixed-point constant: only the rescaling."""
    truncate(n, knownmsb)


def fp_matmul(p: int, q: int, r: int, batch: int = 1):
    """`batch` independent `p x q` by `q x r` fixed-point products."""
    if p and q and r and batch:
        _emit('matmuls', p=p, q=q, r=r, size=batch)
        _emit('TruncPr', size=p * r * batch)


def dot_products(count: int, length: int):
    """`count` independent dot products of `length` terms, fused."""
    fp_matmul(count, length, 1)


def fp_ltz(n: int):
    if n:
        _emit('LTZ', size=n)


def fp_max(n: int, width: int):
    """Maximum over `n` groups of `width` values by a tournament tree.

    Each stage compares the surviving pairs of every group at once and
    selects with a bit product.
    """
    if not n or width <= 1:
        return
    alive = width
    while alive > 1:
        pairs = alive // 2
        fp_ltz(n * pairs)
        bit_mul(n * pairs)
        alive -= pairs


def emit_complicated(op: str, n: int = 1, conv: Optional[ConvExtras] = None):
    if op not in COMPLICATED_OPS:
        raise CompileError(f"'{op}' is not a complicated operation")
    if n and (conv is None or conv.batch):
        _emit(op, size=n, conv=conv)


def fp_exp(n: int):
    emit_complicated('exp', n)


def fp_reciprocal(n: int):
    emit_complicated('reciprocal', n)


def fp_inv_sqrt(n: int):
    emit_complicated('inv_sqrt', n)


def fp_div(n: int):
    emit_complicated('div', n)


def fp_pow2(n: int):
    emit_complicated('pow2', n)


def conv2d(conv: ConvExtras, sequential_groups: bool = False):
    """Linear part of a convolution (no rescaling)."""
    if not sequential_groups or conv.groups == 1:
        emit_complicated('conv2d', 1, conv)
        return
    per_group = replace(
        conv,
        in_channel=conv.in_channel // conv.groups,
        out_channel=conv.out_channel // conv.groups,
        groups=1
    )
    for _ in range(conv.groups):
        emit_complicated('conv2d', 1, per_group)

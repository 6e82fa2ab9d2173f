"""
Shape-only tensors and reverse-mode tracing.

A `TraceTensor` never holds values. Every operation applied to it emits the
instructions its secure evaluation needs under "<op>-forward" and, when a
gradient is required, records a `TapeNode` whose backward emitter runs under
"<op>-backward" at the call site of `backward()`.
"""
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from costpy import secure
from costpy.blocktree import current_context
from costpy.errors import CompileError, ShapeError

logger = logging.getLogger(__name__)

SECRET = "secret"
PUBLIC = "public"

_node_ids = itertools.count()


def numel(shape) -> int:
    return math.prod(shape)


def _as_shape(shape) -> tuple:
    if isinstance(shape, int):
        shape = (shape,)
    shape = tuple(int(dim) for dim in shape) or (1,)
    if any(dim < 1 for dim in shape):
        raise ShapeError(f"dimensions must be positive: {shape}")
    return shape


class TraceTensor:
    """Shape-carrying symbolic tensor.

    Parameters
    ----------
    shape : sequence of int
      Dimensions, all at least 1 (scalars have shape (1,)).
    requires_grad : bool
      Whether `backward()` produces a gradient for this tensor.
    kind : {"secret", "public"}
      Secret tensors are secret shared; public ones are known to all parties
      and make arithmetic with them local.
    producer : TapeNode, optional
      Node that created the tensor, None for leaves.
    nonnegative : bool
      Whether values are known to be non-negative (e.g. ReLU outputs).

    """

    def __init__(
        self,
        shape,
        requires_grad: bool = False,
        kind: str = SECRET,
        producer: Optional["TapeNode"] = None,
        nonnegative: bool = False,
        name: Optional[str] = None
    ):
        if kind not in (SECRET, PUBLIC):
            raise ValueError(f"unknown tensor kind {kind!r}")
        self.shape = _as_shape(shape)
        self.requires_grad = requires_grad
        self.kind = kind
        self.producer = producer
        self.nonnegative = nonnegative
        self.name = name
        self.grad: Optional[TraceTensor] = None

    def __repr__(self):
        grad = ", requires_grad" if self.requires_grad else ""
        return f"TraceTensor({list(self.shape)}, {self.kind}{grad})"

    @property
    def numel(self) -> int:
        return numel(self.shape)

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def is_secret(self) -> bool:
        return self.kind == SECRET

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)

    def permute(self, *dims):
        return permute(self, dims[0] if len(dims) == 1 else dims)

    def transpose(self, dim0: int = -2, dim1: int = -1):
        return transpose(self, dim0, dim1)

    def sum(self, axis=None, keepdim: bool = False):
        return tensor_sum(self, axis, keepdim)

    def mean(self, axis=None, keepdim: bool = False):
        return mean(self, axis, keepdim)

    def exp(self):
        return exp(self)

    def relu(self):
        return relu(self)

    def backward(self, grad=None):
        backward(self, grad)


def secret(shape, requires_grad: bool = False, name: str = None):
    return TraceTensor(shape, requires_grad, SECRET, name=name)


def public(shape, name: str = None):
    return TraceTensor(shape, False, PUBLIC, name=name)


def parameter(shape, name: str = None):
    """Secret model parameter (a leaf requiring a gradient)."""
    return TraceTensor(shape, True, SECRET, name=name)


def _lift(value, like: TraceTensor) -> TraceTensor:
    if isinstance(value, TraceTensor):
        return value
    if isinstance(value, (int, float)):
        return public((1,))
    raise TypeError(f"unsupported operand {value!r}")


def grad_like(x: TraceTensor, is_secret: bool = True) -> TraceTensor:
    return TraceTensor(x.shape, False, SECRET if is_secret else PUBLIC)


@dataclass(eq=False)
class TapeNode:
    """One traced operation with its labeled backward emitter."""
    op: str
    inputs: tuple
    output: Optional[TraceTensor] = None
    saved: dict = field(default_factory=dict)
    backward_fn: Optional[Callable] = None
    id: int = field(default_factory=lambda: next(_node_ids))


class Tape:
    """Append-only record of the operations of one compilation."""

    def __init__(self):
        self.nodes: list[TapeNode] = []

    def __len__(self):
        return len(self.nodes)

    def record(self, node: TapeNode):
        self.nodes.append(node)


def current_tape() -> Tape:
    ctx = current_context()
    if ctx.tape is None:
        ctx.tape = Tape()
    return ctx.tape


def apply(
    op: str,
    inputs: Sequence[TraceTensor],
    out_shape,
    forward: Optional[Callable[[], None]] = None,
    backward_fn: Optional[Callable] = None,
    nonnegative: bool = False,
    kind: Optional[str] = None,
    saved: Optional[dict] = None
) -> TraceTensor:
    """Trace one operation.

    `forward()` emits the forward instructions. `backward_fn(grad, needs)`
    emits the backward instructions and returns one gradient (or None) per
    input; `needs[i]` tells whether input `i` wants one.
    """
    inputs = tuple(inputs)
    if kind is None:
        kind = SECRET if any(x.is_secret for x in inputs) else PUBLIC
    ctx = current_context()
    if forward is not None and kind == SECRET:
        with ctx.label_scope(op, "forward"):
            forward()
    requires_grad = any(x.requires_grad for x in inputs)
    out = TraceTensor(out_shape, requires_grad, kind, nonnegative=nonnegative)
    if requires_grad:
        node = TapeNode(op, inputs, out, saved or {}, backward_fn)
        out.producer = node
        current_tape().record(node)
    return out


def _accumulate(grads: dict, tensor: TraceTensor, grad: TraceTensor):
    if grad.shape != tensor.shape:
        raise CompileError(
            f"gradient shape {grad.shape} does not match tensor shape "
            f"{tensor.shape}"
        )
    prev = grads.get(id(tensor))
    if prev is not None:
        # Summing gradients is local.
        grad = grad_like(tensor, prev.is_secret or grad.is_secret)
    grads[id(tensor)] = grad


def backward(loss: TraceTensor, grad: Optional[TraceTensor] = None):
    """Emit the backward pass of everything `loss` depends on.

    The seed gradient defaults to a public one; pass a secret `grad` to
    differentiate a secret-weighted objective.
    """
    if loss.numel != 1:
        raise CompileError(f"backward() needs a scalar loss, got {loss.shape}")
    if getattr(loss, '_backward_done', False):
        raise CompileError("backward() was already called on this loss")
    ctx = current_context()
    if grad is None:
        grad = grad_like(loss, is_secret=False)
    elif grad.shape != loss.shape:
        raise ShapeError(
            f"seed gradient {grad.shape} does not match {loss.shape}"
        )
    loss._backward_done = True
    grads = {id(loss): grad}
    tensors = {id(loss): loss}
    # Reachable nodes, replayed newest first.
    nodes, seen, todo = [], set(), [loss.producer]
    while todo:
        node = todo.pop()
        if node is None or node.id in seen:
            continue
        seen.add(node.id)
        nodes.append(node)
        todo.extend(x.producer for x in node.inputs)
    nodes.sort(key=lambda node: node.id, reverse=True)
    for node in nodes:
        grad = grads.get(id(node.output))
        if grad is None or node.backward_fn is None:
            continue
        needs = tuple(x.requires_grad for x in node.inputs)
        with ctx.label_scope(node.op, "backward"):
            input_grads = node.backward_fn(grad, needs)
        for x, g in zip(node.inputs, input_grads):
            if g is not None and x.requires_grad:
                _accumulate(grads, x, g)
                tensors[id(x)] = x
    for key, tensor in tensors.items():
        if tensor is not loss and tensor.requires_grad:
            tensor.grad = grads[key]
    logger.debug(f"Backward pass over {len(nodes)} node(s)")


def broadcast_shapes(sa: tuple, sb: tuple) -> tuple:
    try:
        return tuple(np.broadcast_shapes(tuple(sa), tuple(sb)))
    except ValueError as e:
        raise ShapeError(
            f"shapes {tuple(sa)} and {tuple(sb)} do not broadcast"
        ) from e


def normalize_broadcast(sa, sb) -> tuple:
    """2-D views of a one-sided broadcast, the broadcast operand last.

    [5, 3, 2] x [3, 2] -> ((5, 6), (1, 6)).
    """
    sa, sb = _as_shape(sa), _as_shape(sb)
    out = broadcast_shapes(sa, sb)
    size = numel(out)
    if numel(sa) == size:
        cols = numel(sb)
    elif numel(sb) == size:
        cols = numel(sa)
    else:
        raise ShapeError(
            f"shapes {sa} and {sb} broadcast on both sides"
        )
    return (size // cols, cols), (1, cols)


def _reduce_grad(grad: TraceTensor, x: TraceTensor) -> TraceTensor:
    # Summing over broadcast axes is local.
    return TraceTensor(x.shape, False, grad.kind)


def add(a, b) -> TraceTensor:
    a, b = _lift(a, b), _lift(b, a)
    out_shape = broadcast_shapes(a.shape, b.shape)

    def backward_fn(grad, needs):
        return tuple(
            _reduce_grad(grad, x) if need else None
            for x, need in zip((a, b), needs)
        )

    return apply('add', (a, b), out_shape, None, backward_fn)


def sub(a, b) -> TraceTensor:
    a, b = _lift(a, b), _lift(b, a)
    out_shape = broadcast_shapes(a.shape, b.shape)

    def backward_fn(grad, needs):
        return tuple(
            _reduce_grad(grad, x) if need else None
            for x, need in zip((a, b), needs)
        )

    return apply('sub', (a, b), out_shape, None, backward_fn)


def neg(a: TraceTensor) -> TraceTensor:
    return apply(
        'neg', (a,), a.shape, None,
        lambda grad, needs: (_reduce_grad(grad, a),)
    )


def mul_cost(n: int, x_secret: bool, y_secret: bool, knownmsb=False):
    """Elementwise product cost of `n` pairs by operand kinds."""
    if x_secret and y_secret:
        secure.fp_mul(n, knownmsb)
    elif x_secret or y_secret:
        secure.fp_public_scale(n, knownmsb)


def matmul_cost(m, k, n, count, x_secret: bool, y_secret: bool):
    """Cost of `count` products of `m x k` by `k x n` matrices."""
    if x_secret and y_secret:
        secure.fp_matmul(m, k, n, count)
    elif x_secret or y_secret:
        secure.fp_public_scale(m * n * count)


def dot_cost(count, length, x_secret: bool, y_secret: bool):
    matmul_cost(count, length, 1, 1, x_secret, y_secret)


def broadcast_mul_backward(
    grad: TraceTensor,
    a: TraceTensor,
    b: TraceTensor,
    needs=(True, True),
    strawman: Optional[bool] = None
) -> tuple:
    """Gradients of `a * b` given the output gradient.

    An operand smaller than the output receives reductions of the broadcast
    product; they are computed as fused dot products of length
    |output| / |operand| instead of materializing the product.
    """
    if strawman is None:
        strawman = current_context().lowering.strawman_broadcast
    size = numel(broadcast_shapes(a.shape, b.shape))
    result = []
    for x, other, need in ((a, b, needs[0]), (b, a, needs[1])):
        if not need:
            result.append(None)
            continue
        both = grad.is_secret and other.is_secret
        reduced = x.numel < size
        if reduced and not strawman:
            if both:
                secure.dot_products(x.numel, size // x.numel)
            elif grad.is_secret or other.is_secret:
                secure.fp_public_scale(x.numel)
        else:
            mul_cost(size, grad.is_secret, other.is_secret)
        result.append(grad_like(x, grad.is_secret or other.is_secret))
    return tuple(result)


def mul(a, b) -> TraceTensor:
    """Elementwise product with broadcasting."""
    a, b = _lift(a, b), _lift(b, a)
    out_shape = broadcast_shapes(a.shape, b.shape)
    n = numel(out_shape)
    knownmsb = a.nonnegative and b.nonnegative

    def forward():
        mul_cost(n, a.is_secret, b.is_secret, knownmsb)

    def backward_fn(grad, needs):
        return broadcast_mul_backward(grad, a, b, needs)

    return apply(
        'mul', (a, b), out_shape, forward, backward_fn, nonnegative=knownmsb
    )


def matmul(a: TraceTensor, b: TraceTensor) -> TraceTensor:
    """Matrix product; leading dimensions of `a` are batch dimensions.

    `b` is either 2-D (shared by every batch) or has the same leading
    dimensions as `a` (batched product).
    """
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs 2-D operands: {a.shape} @ {b.shape}")
    p, q = a.shape[-2:]
    q2, r = b.shape[-2:]
    if q != q2:
        raise ShapeError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    lead = a.shape[:-2]
    if b.ndim == 2:
        batched = False
    elif b.shape[:-2] == lead:
        batched = True
    else:
        raise ShapeError(f"batch dimensions differ: {a.shape} @ {b.shape}")
    batch = numel(lead) if lead else 1
    out_shape = lead + (p, r)
    op = 'bmm' if batched else 'matmul'

    def forward():
        if batched:
            matmul_cost(p, q, r, batch, a.is_secret, b.is_secret)
        else:
            matmul_cost(batch * p, q, r, 1, a.is_secret, b.is_secret)

    def backward_fn(grad, needs):
        da = db = None
        if needs[0]:
            # dA = dC . B^T
            if batched:
                matmul_cost(p, r, q, batch, grad.is_secret, b.is_secret)
            else:
                matmul_cost(batch * p, r, q, 1, grad.is_secret, b.is_secret)
            da = grad_like(a, grad.is_secret or b.is_secret)
        if needs[1]:
            # dB = A^T . dC
            if batched:
                matmul_cost(q, p, r, batch, a.is_secret, grad.is_secret)
            else:
                matmul_cost(q, batch * p, r, 1, a.is_secret, grad.is_secret)
            db = grad_like(b, grad.is_secret or a.is_secret)
        return da, db

    return apply(op, (a, b), out_shape, forward, backward_fn)


def bmm(a: TraceTensor, b: TraceTensor) -> TraceTensor:
    if a.ndim != b.ndim:
        raise ShapeError(f"bmm needs equal ranks: {a.shape} @ {b.shape}")
    return matmul(a, b)


def exp(x: TraceTensor) -> TraceTensor:
    def backward_fn(grad, needs):
        # d exp(x) = exp(x) * grad
        mul_cost(x.numel, grad.is_secret, True)
        return (grad_like(x),)

    return apply(
        'exp', (x,), x.shape, lambda: secure.fp_exp(x.numel), backward_fn,
        nonnegative=True
    )


def reciprocal(x: TraceTensor) -> TraceTensor:
    def backward_fn(grad, needs):
        # -grad / x^2: square the output, then scale the gradient.
        secure.fp_mul(x.numel)
        mul_cost(x.numel, grad.is_secret, True)
        return (grad_like(x),)

    return apply(
        'reciprocal', (x,), x.shape,
        lambda: secure.fp_reciprocal(x.numel), backward_fn
    )


def inv_sqrt(x: TraceTensor) -> TraceTensor:
    def backward_fn(grad, needs):
        # -grad * out^3 / 2
        secure.fp_mul(x.numel)
        secure.fp_mul(x.numel)
        mul_cost(x.numel, grad.is_secret, True)
        return (grad_like(x),)

    return apply(
        'invsqrt', (x,), x.shape,
        lambda: secure.fp_inv_sqrt(x.numel), backward_fn
    )


def relu(x: TraceTensor) -> TraceTensor:
    n = x.numel

    def forward():
        secure.fp_ltz(n)
        secure.bit_mul(n)

    def backward_fn(grad, needs):
        # Reuses the comparison bits of the forward pass.
        if grad.is_secret:
            secure.bit_mul(n)
        return (grad_like(x, grad.is_secret),)

    return apply('relu', (x,), x.shape, forward, backward_fn, nonnegative=True)


def _normalize_axes(axis, ndim: int) -> tuple:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    result = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for {ndim} dimensions")
        result.append(ax % ndim)
    if len(set(result)) != len(result):
        raise ShapeError(f"repeated axis in {axis}")
    return tuple(sorted(result))


def _reduced_shape(shape, axes, keepdim) -> tuple:
    if keepdim:
        return tuple(1 if i in axes else d for i, d in enumerate(shape))
    return tuple(d for i, d in enumerate(shape) if i not in axes) or (1,)


def tensor_sum(x: TraceTensor, axis=None, keepdim: bool = False):
    axes = _normalize_axes(axis, x.ndim)
    out_shape = _reduced_shape(x.shape, axes, keepdim)
    return apply(
        'sum', (x,), out_shape, None,
        lambda grad, needs: (_reduce_grad(grad, x),),
        nonnegative=x.nonnegative
    )


def mean(x: TraceTensor, axis=None, keepdim: bool = False):
    """Sum (local) followed by a public division of every output."""
    axes = _normalize_axes(axis, x.ndim)
    out_shape = _reduced_shape(x.shape, axes, keepdim)
    n_out = numel(out_shape)

    def backward_fn(grad, needs):
        if grad.is_secret:
            secure.fp_public_scale(n_out)
        return (_reduce_grad(grad, x),)

    return apply(
        'mean', (x,), out_shape,
        lambda: secure.fp_public_scale(n_out, x.nonnegative), backward_fn,
        nonnegative=x.nonnegative
    )


def _free(op: str, x: TraceTensor, out_shape) -> TraceTensor:
    return apply(
        op, (x,), out_shape, None,
        lambda grad, needs: (_reduce_grad(grad, x),),
        nonnegative=x.nonnegative
    )


def reshape(x: TraceTensor, shape) -> TraceTensor:
    shape = (shape,) if isinstance(shape, int) else tuple(shape)
    if -1 in shape:
        known = numel(d for d in shape if d != -1)
        shape = tuple(x.numel // known if d == -1 else d for d in shape)
    shape = _as_shape(shape)
    if numel(shape) != x.numel:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}")
    return _free('reshape', x, shape)


def flatten(x: TraceTensor, start_dim: int = 1) -> TraceTensor:
    return reshape(x, x.shape[:start_dim] + (numel(x.shape[start_dim:]),))


def permute(x: TraceTensor, dims) -> TraceTensor:
    dims = tuple(d % x.ndim for d in dims)
    if sorted(dims) != list(range(x.ndim)):
        raise ShapeError(f"invalid permutation {dims} for {x.shape}")
    return _free('permute', x, tuple(x.shape[d] for d in dims))


def transpose(x: TraceTensor, dim0: int = -2, dim1: int = -1):
    dims = list(range(x.ndim))
    dims[dim0], dims[dim1] = dims[dim1], dims[dim0]
    return permute(x, dims)


def narrow(x: TraceTensor, axis: int, start: int, length: int):
    """Slice `length` entries of `axis` starting at `start`."""
    axis = _normalize_axes(axis, x.ndim)[0]
    if start < 0 or length < 1 or start + length > x.shape[axis]:
        raise ShapeError(
            f"slice [{start}:{start + length}] out of range for {x.shape}"
        )
    shape = x.shape[:axis] + (length,) + x.shape[axis + 1:]
    return _free('slice', x, shape)


def concat(tensors: Sequence[TraceTensor], axis: int = 0) -> TraceTensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    first = tensors[0]
    axis = _normalize_axes(axis, first.ndim)[0]
    for t in tensors[1:]:
        if t.ndim != first.ndim or any(
                t.shape[i] != first.shape[i]
                for i in range(first.ndim) if i != axis):
            raise ShapeError(f"cannot concatenate {first.shape} and {t.shape}")
    length = sum(t.shape[axis] for t in tensors)
    shape = first.shape[:axis] + (length,) + first.shape[axis + 1:]

    def backward_fn(grad, needs):
        return tuple(_reduce_grad(grad, t) for t in tensors)

    return apply(
        'concat', tensors, shape, None, backward_fn,
        nonnegative=all(t.nonnegative for t in tensors)
    )

"""
Layers and containers traced into labeled secure operations.

Every layer is one traced operation named after its label segment
("conv2d", "batchnorm", ...): forward instructions land under
"<op>-forward" and backward instructions under "<op>-backward".
"""
import logging
from typing import Optional

from costpy import autograd, secure
from costpy.autograd import (
    TraceTensor, apply, dot_cost, grad_like, matmul_cost, mul_cost, parameter
)
from costpy.blocktree import check_segment, current_context
from costpy.errors import ConfigError, ShapeError, UnknownEntityError
from costpy.params import ConvExtras

logger = logging.getLogger(__name__)


def _out_size(size: int, kernel: int, stride: int, padding: int) -> int:
    out = (size + 2 * padding - kernel) // stride + 1
    if out < 1:
        raise ShapeError(
            f"kernel {kernel} (stride {stride}, padding {padding}) does not "
            f"fit an input of size {size}"
        )
    return out


def _check_image(x: TraceTensor, channels: Optional[int] = None):
    if x.ndim != 4:
        raise ShapeError(f"expected a [batch, channels, h, w] input: {x.shape}")
    if channels is not None and x.shape[1] != channels:
        raise ShapeError(
            f"expected {channels} input channels, got {x.shape[1]}"
        )


class Module:
    """Base class of layers and containers."""
    op: str = None

    def __init__(self):
        self.training = True

    def __call__(self, *inputs) -> TraceTensor:
        return self.forward(*inputs)

    def forward(self, *inputs) -> TraceTensor:
        raise NotImplementedError

    def children(self) -> tuple:
        return ()

    def own_parameters(self) -> tuple:
        return ()

    def parameters(self):
        yield from self.own_parameters()
        for child in self.children():
            yield from child.parameters()

    def parameter_count(self) -> int:
        return sum(p.numel for p in self.parameters())

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for child in self.children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)


class Linear(Module):
    op = 'linear'

    def __init__(self, in_features: int, out_features: int, bias: bool = True):
        super().__init__()
        if in_features < 1 or out_features < 1:
            raise ConfigError(
                f"invalid Linear({in_features}, {out_features})"
            )
        self.in_features = in_features
        self.out_features = out_features
        self.weight = parameter((in_features, out_features))
        self.bias = parameter((out_features,)) if bias else None

    def own_parameters(self):
        return tuple(p for p in (self.weight, self.bias) if p is not None)

    def forward(self, x: TraceTensor) -> TraceTensor:
        if x.shape[-1] != self.in_features:
            raise ShapeError(
                f"expected {self.in_features} input features: {x.shape}"
            )
        rows = x.numel // self.in_features
        fin, fout = self.in_features, self.out_features
        inputs = (x,) + self.own_parameters()

        def forward():
            matmul_cost(rows, fin, fout, 1, x.is_secret, True)

        def backward_fn(grad, needs):
            grads = [None] * len(inputs)
            if needs[0]:
                matmul_cost(rows, fout, fin, 1, grad.is_secret, True)
                grads[0] = grad_like(x)
            if needs[1]:
                matmul_cost(fin, rows, fout, 1, x.is_secret, grad.is_secret)
                grads[1] = grad_like(self.weight, x.is_secret or grad.is_secret)
            if len(inputs) == 3 and needs[2]:
                # Bias gradient is a column sum.
                grads[2] = grad_like(self.bias, grad.is_secret)
            return grads

        return apply(
            self.op, inputs, x.shape[:-1] + (fout,), forward, backward_fn
        )


class Conv2d(Module):
    """2-D convolution; the input is [batch, channels, height, width]."""
    op = 'conv2d'

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        stride: int = 1,
        padding: int = 0,
        groups: int = 1,
        bias: bool = True
    ):
        super().__init__()
        if groups < 1 or in_channels % groups or out_channels % groups:
            raise ConfigError(
                f"channels {in_channels}->{out_channels} are not divisible "
                f"by {groups} groups"
            )
        if kernel_size < 1 or stride < 1 or padding < 0:
            raise ConfigError(
                f"invalid kernel {kernel_size}, stride {stride}, "
                f"padding {padding}"
            )
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        self.groups = groups
        self.weight = parameter(
            (out_channels, in_channels // groups, kernel_size, kernel_size)
        )
        self.bias = parameter((out_channels,)) if bias else None

    def own_parameters(self):
        return tuple(p for p in (self.weight, self.bias) if p is not None)

    def geometry(self, x: TraceTensor) -> ConvExtras:
        _check_image(x, self.in_channels)
        batch, channels, h, w = x.shape
        k = self.kernel_size
        return ConvExtras(
            batch=batch,
            in_channel=channels,
            out_channel=self.out_channels,
            inw=w,
            inh=h,
            outw=_out_size(w, k, self.stride, self.padding),
            outh=_out_size(h, k, self.stride, self.padding),
            kw=k,
            kh=k,
            groups=self.groups
        )

    def forward(self, x: TraceTensor) -> TraceTensor:
        conv = self.geometry(x)
        sequential = current_context().lowering.sequential_groups
        g = conv.groups
        p = conv.batch * conv.outh * conv.outw
        q = conv.in_channel // g * conv.kh * conv.kw
        r = conv.out_channel // g
        outputs = conv.batch * conv.out_channel * conv.outh * conv.outw
        inputs = (x,) + self.own_parameters()

        def grouped(m, k, n, a_secret, b_secret):
            if sequential:
                for _ in range(g):
                    matmul_cost(m, k, n, 1, a_secret, b_secret)
            else:
                matmul_cost(m, k, n, g, a_secret, b_secret)

        def forward():
            if x.is_secret and self.weight.is_secret:
                secure.conv2d(conv, sequential)
                secure.truncate(outputs)
            elif x.is_secret or self.weight.is_secret:
                secure.fp_public_scale(outputs)

        def backward_fn(grad, needs):
            grads = [None] * len(inputs)
            if needs[0]:
                # dX = dY . W^T per group, folded back by col2im.
                grouped(p, r, q, grad.is_secret, True)
                grads[0] = grad_like(x)
            if needs[1]:
                # dW = im2col(X)^T . dY per group.
                grouped(q, p, r, x.is_secret, grad.is_secret)
                grads[1] = grad_like(self.weight)
            if len(inputs) == 3 and needs[2]:
                grads[2] = grad_like(self.bias, grad.is_secret)
            return grads

        shape = (conv.batch, conv.out_channel, conv.outh, conv.outw)
        return apply(self.op, inputs, shape, forward, backward_fn)


def _normalization(
    op: str,
    x: TraceTensor,
    gamma: TraceTensor,
    beta: TraceTensor,
    stats: int,
    features: int,
    with_stats: bool
) -> TraceTensor:
    """Normalize `x` by `stats` statistics and an affine map of `features`.

    Computing the statistics costs a mean, a variance and an inverse square
    root per statistic; otherwise the layer is a secret scale and shift.
    """
    n = x.numel

    def forward():
        if with_stats:
            secure.truncate(stats)
            secure.fp_mul(n)
            secure.truncate(stats)
            secure.fp_inv_sqrt(stats)
            secure.fp_mul(n)
        secure.fp_mul(n)

    def backward_fn(grad, needs):
        dx = dgamma = dbeta = None
        if needs[1]:
            dot_cost(features, n // features, grad.is_secret, True)
            dgamma = grad_like(gamma)
        if needs[2]:
            dbeta = grad_like(beta, grad.is_secret)
        if needs[0]:
            mul_cost(n, grad.is_secret, True)
            if with_stats:
                secure.dot_products(stats, n // stats)
                secure.fp_mul(n)
                secure.fp_mul(n)
                secure.truncate(n)
            dx = grad_like(x)
        return dx, dgamma, dbeta

    return apply(op, (x, gamma, beta), x.shape, forward, backward_fn)


class BatchNorm2d(Module):
    op = 'batchnorm'

    def __init__(self, num_features: int):
        super().__init__()
        self.num_features = num_features
        self.weight = parameter((num_features,))
        self.bias = parameter((num_features,))

    def own_parameters(self):
        return self.weight, self.bias

    def forward(self, x: TraceTensor) -> TraceTensor:
        _check_image(x, self.num_features)
        c = self.num_features
        return _normalization(
            self.op, x, self.weight, self.bias, c, c, self.training
        )


class LayerNorm(Module):
    """Normalization over the last axis (statistics always computed)."""
    op = 'layernorm'

    def __init__(self, features: int):
        super().__init__()
        self.features = features
        self.weight = parameter((features,))
        self.bias = parameter((features,))

    def own_parameters(self):
        return self.weight, self.bias

    def forward(self, x: TraceTensor) -> TraceTensor:
        if x.shape[-1] != self.features:
            raise ShapeError(f"expected {self.features} features: {x.shape}")
        rows = x.numel // self.features
        return _normalization(
            self.op, x, self.weight, self.bias, rows, self.features, True
        )


class ReLU(Module):
    op = 'relu'

    def forward(self, x: TraceTensor) -> TraceTensor:
        return autograd.relu(x)


def sigmoid(x: TraceTensor) -> TraceTensor:
    n = x.numel

    def forward():
        secure.fp_exp(n)
        secure.fp_reciprocal(n)

    def backward_fn(grad, needs):
        # y * (1 - y) * grad
        secure.fp_mul(n)
        mul_cost(n, grad.is_secret, True)
        return (grad_like(x),)

    return apply(
        'sigmoid', (x,), x.shape, forward, backward_fn, nonnegative=True
    )


class Sigmoid(Module):
    op = 'sigmoid'

    def forward(self, x: TraceTensor) -> TraceTensor:
        return sigmoid(x)


def gelu(x: TraceTensor) -> TraceTensor:
    """GELU through its sigmoid approximation x * sigmoid(1.702 x)."""
    n = x.numel
    recipes = current_context().recipes

    def forward():
        for _ in range(recipes.gelu_muls):
            secure.fp_mul(n)
        secure.fp_exp(n)
        secure.fp_reciprocal(n)
        for _ in range(recipes.gelu_post_muls):
            secure.fp_mul(n)

    def backward_fn(grad, needs):
        for _ in range(recipes.gelu_backward_muls):
            secure.fp_mul(n)
        return (grad_like(x),)

    return apply('gelu', (x,), x.shape, forward, backward_fn)


class GELU(Module):
    op = 'gelu'

    def forward(self, x: TraceTensor) -> TraceTensor:
        return gelu(x)


class _Pool2d(Module):

    def __init__(self, kernel_size: int, stride: Optional[int] = None):
        super().__init__()
        if kernel_size < 1 or (stride is not None and stride < 1):
            raise ConfigError(f"invalid pooling window {kernel_size}/{stride}")
        self.kernel_size = kernel_size
        self.stride = stride or kernel_size

    def out_shape(self, x: TraceTensor) -> tuple:
        _check_image(x)
        batch, channels, h, w = x.shape
        k, s = self.kernel_size, self.stride
        return batch, channels, _out_size(h, k, s, 0), _out_size(w, k, s, 0)


class MaxPool2d(_Pool2d):
    op = 'maxpool2d'

    def forward(self, x: TraceTensor) -> TraceTensor:
        shape = self.out_shape(x)
        windows = autograd.numel(shape)
        width = self.kernel_size ** 2

        def backward_fn(grad, needs):
            # One-hot argmax bits kept from the forward pass.
            if width > 1 and grad.is_secret:
                secure.bit_mul(windows * width)
            return (grad_like(x, grad.is_secret),)

        return apply(
            self.op, (x,), shape, lambda: secure.fp_max(windows, width),
            backward_fn, nonnegative=x.nonnegative
        )


class AvgPool2d(_Pool2d):
    op = 'avgpool2d'

    def forward(self, x: TraceTensor) -> TraceTensor:
        shape = self.out_shape(x)
        outputs = autograd.numel(shape)

        def backward_fn(grad, needs):
            if grad.is_secret:
                secure.truncate(outputs)
            return (grad_like(x, grad.is_secret),)

        return apply(
            self.op, (x,), shape,
            lambda: secure.truncate(outputs, x.nonnegative), backward_fn,
            nonnegative=x.nonnegative
        )


def _softmax_forward(rows: int, length: int):
    secure.fp_max(rows, length)
    secure.fp_exp(rows * length)
    secure.fp_reciprocal(rows)
    secure.fp_mul(rows * length)


def softmax(x: TraceTensor, axis: int = -1) -> TraceTensor:
    length = x.shape[axis]
    rows = x.numel // length
    n = x.numel

    def backward_fn(grad, needs):
        # y * (dy - sum(dy * y))
        dot_cost(rows, length, grad.is_secret, True)
        secure.fp_mul(n)
        return (grad_like(x),)

    return apply(
        'softmax', (x,), x.shape, lambda: _softmax_forward(rows, length),
        backward_fn, nonnegative=True
    )


class Softmax(Module):
    op = 'softmax'

    def __init__(self, axis: int = -1):
        super().__init__()
        self.axis = axis

    def forward(self, x: TraceTensor) -> TraceTensor:
        return softmax(x, self.axis)


class Flatten(Module):

    def __init__(self, start_dim: int = 1):
        super().__init__()
        self.start_dim = start_dim

    def forward(self, x: TraceTensor) -> TraceTensor:
        return autograd.flatten(x, self.start_dim)


class Sequential(Module):

    def __init__(self, *layers: Module):
        super().__init__()
        if not layers:
            raise ConfigError("Sequential needs at least one layer")
        self.layers = layers

    def children(self):
        return self.layers

    def forward(self, x: TraceTensor) -> TraceTensor:
        for layer in self.layers:
            x = layer(x)
        return x


class Residual(Module):
    """`body(x) + shortcut(x)`; the addition is local."""

    def __init__(self, body: Module, shortcut: Optional[Module] = None):
        super().__init__()
        self.body = body
        self.shortcut = shortcut

    def children(self):
        return tuple(m for m in (self.body, self.shortcut) if m is not None)

    def forward(self, x: TraceTensor) -> TraceTensor:
        skip = self.shortcut(x) if self.shortcut is not None else x
        return autograd.add(self.body(x), skip)


class Labeled(Module):
    """Runs the wrapped module under one more label segment."""

    def __init__(self, label: str, module: Module):
        super().__init__()
        check_segment(label)
        self.label = label
        self.module = module

    def children(self):
        return (self.module,)

    def forward(self, *inputs) -> TraceTensor:
        with current_context().label_scope(self.label):
            return self.module(*inputs)


def sub_module_label(label: str, module: Module) -> Module:
    return Labeled(label, module)


def cross_entropy(logits: TraceTensor, labels: TraceTensor) -> TraceTensor:
    """Scalar cross-entropy loss of `[batch, classes]` logits.

    The forward pass costs a softmax (the logarithm does not change the
    gradient computation); the gradient softmax(x) - y is a local
    subtraction.
    """
    if logits.ndim != 2 or logits.shape != labels.shape:
        raise ShapeError(
            f"logits {logits.shape} and labels {labels.shape} must both be "
            f"[batch, classes]"
        )
    rows, classes = logits.shape
    if logits.is_secret:
        with current_context().label_scope('softmax', 'forward'):
            _softmax_forward(rows, classes)

    def backward_fn(grad, needs):
        return grad_like(logits), None

    return apply('crossentropy', (logits, labels), (1,), None, backward_fn)


class CrossEntropyLoss:

    def __call__(self, logits: TraceTensor, labels: TraceTensor):
        return cross_entropy(logits, labels)


def _layer_args(doc: dict, *names) -> dict:
    return {name: doc[name] for name in names if name in doc}


def build_layer(doc: dict) -> Module:
    """Module described by one layer entry of a model spec file."""
    kind = doc['kind']
    if kind == 'Linear':
        layer = Linear(**_layer_args(doc, 'in_features', 'out_features', 'bias'))
    elif kind == 'Conv2d':
        layer = Conv2d(**_layer_args(
            doc, 'in_channels', 'out_channels', 'kernel_size', 'stride',
            'padding', 'groups', 'bias'
        ))
    elif kind == 'BatchNorm2d':
        layer = BatchNorm2d(doc['num_features'])
    elif kind == 'LayerNorm':
        layer = LayerNorm(doc['features'])
    elif kind == 'ReLU':
        layer = ReLU()
    elif kind == 'Sigmoid':
        layer = Sigmoid()
    elif kind == 'GELU':
        layer = GELU()
    elif kind == 'MaxPool2d':
        layer = MaxPool2d(**_layer_args(doc, 'kernel_size', 'stride'))
    elif kind == 'AvgPool2d':
        layer = AvgPool2d(**_layer_args(doc, 'kernel_size', 'stride'))
    elif kind == 'Softmax':
        layer = Softmax(doc.get('axis', -1))
    elif kind == 'Flatten':
        layer = Flatten()
    elif kind == 'Sequential':
        layer = Sequential(*(build_layer(d) for d in doc.get('layers', ())))
    elif kind == 'Residual':
        layer = Residual(
            Sequential(*(build_layer(d) for d in doc.get('layers', ())))
        )
    else:
        raise UnknownEntityError(f"unknown layer kind '{kind}'")
    if 'label' in doc:
        layer = Labeled(doc['label'], layer)
    return layer

"""
Model zoo and model spec files.
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from jsonschema.exceptions import ValidationError

from costpy import autograd
from costpy.blocktree import buildingblock
from costpy.errors import ConfigError, UnknownEntityError
from costpy.nn import (
    GELU, AvgPool2d, BatchNorm2d, Conv2d, Flatten, LayerNorm, Linear,
    MaxPool2d, Module, ReLU, Residual, Sequential, Sigmoid, Softmax, Labeled,
    build_layer
)
from costpy.validate import validate_model_spec

logger = logging.getLogger(__name__)


@dataclass
class ModelDef:
    """A model together with the data it is profiled on.

    Parameters
    ----------
    name : str
      Zoo name or spec file stem.
    build : callable
      Returns a fresh `Module`.
    inputs : list of (shape, party)
      Per-sample shapes of the shared inputs; the model consumes the first.
    classes : int, optional
      One-hot label width when training.
    batch_size : int, optional
      Fixed batch size (spec files); the request decides otherwise.

    """
    name: str
    build: Callable[[], Module]
    inputs: list
    classes: Optional[int] = None
    loss: Optional[str] = 'cross_entropy'
    optimizer: Optional[dict] = field(
        default_factory=lambda: {'kind': "SGD", 'lr': 0.01}
    )
    batch_size: Optional[int] = None

    @property
    def trainable(self) -> bool:
        return self.loss is not None and self.classes is not None


def logistic_regression(n_inputs: int = 784, n_outputs: int = 10):
    return Sequential(Linear(n_inputs, n_outputs), Sigmoid())


def lenet(classes: int = 10):
    return Sequential(
        Conv2d(3, 6, 5), ReLU(), AvgPool2d(2),
        Conv2d(6, 16, 5), ReLU(), AvgPool2d(2),
        Flatten(),
        Linear(16 * 4 * 4, 120), ReLU(),
        Linear(120, 84), ReLU(),
        Linear(84, classes),
    )


def minionn(classes: int = 10):
    def conv(cin, cout, k=3):
        return [Conv2d(cin, cout, k, padding=k // 2), ReLU()]

    return Sequential(
        *conv(3, 64), *conv(64, 64), AvgPool2d(2),
        *conv(64, 64), *conv(64, 64), AvgPool2d(2),
        *conv(64, 64), *conv(64, 64, 1), *conv(64, 16, 1),
        Flatten(),
        Linear(16 * 8 * 8, classes),
    )


VGG16_LAYOUT = [
    64, 64, 'P', 128, 128, 'P', 256, 256, 256, 'P',
    512, 512, 512, 'P', 512, 512, 512, 'P',
]


def vgg16(classes: int = 1000, pool: str = 'max'):
    layers, channels = [], 3
    for item in VGG16_LAYOUT:
        if item == 'P':
            layers.append(MaxPool2d(2) if pool == 'max' else AvgPool2d(2))
        else:
            layers += [Conv2d(channels, item, 3, padding=1), ReLU()]
            channels = item
    return Sequential(
        *layers, Flatten(),
        Linear(512 * 7 * 7, 4096), ReLU(),
        Linear(4096, 4096), ReLU(),
        Linear(4096, classes),
    )


def _conv_bn(cin, cout, k, stride=1, relu=True):
    layers = [Conv2d(cin, cout, k, stride, k // 2, bias=False), BatchNorm2d(cout)]
    if relu:
        layers.append(ReLU())
    return layers


def _shortcut(cin, cout, stride):
    if stride == 1 and cin == cout:
        return None
    return Sequential(*_conv_bn(cin, cout, 1, stride, relu=False))


def basic_block(cin, cout, stride=1):
    body = Sequential(
        *_conv_bn(cin, cout, 3, stride), *_conv_bn(cout, cout, 3, relu=False)
    )
    return Sequential(Residual(body, _shortcut(cin, cout, stride)), ReLU())


def bottleneck_block(cin, width, stride=1):
    cout = 4 * width
    body = Sequential(
        *_conv_bn(cin, width, 1),
        *_conv_bn(width, width, 3, stride),
        *_conv_bn(width, cout, 1, relu=False),
    )
    return Sequential(Residual(body, _shortcut(cin, cout, stride)), ReLU())


def _resnet_stem():
    return [*_conv_bn(3, 64, 7, 2), MaxPool2d(3, 2)]


def resnet18(classes: int = 1000):
    layers, channels = _resnet_stem(), 64
    for i, width in enumerate((64, 128, 256, 512)):
        for j in range(2):
            stride = 2 if i > 0 and j == 0 else 1
            layers.append(basic_block(channels, width, stride))
            channels = width
    return Sequential(*layers, AvgPool2d(7), Flatten(), Linear(512, classes))


def resnet50(classes: int = 1000):
    layers, channels = _resnet_stem(), 64
    for i, (width, blocks) in enumerate(zip((64, 128, 256, 512), (3, 4, 6, 3))):
        for j in range(blocks):
            stride = 2 if i > 0 and j == 0 else 1
            layers.append(bottleneck_block(channels, width, stride))
            channels = 4 * width
    return Sequential(*layers, AvgPool2d(7), Flatten(), Linear(2048, classes))


class Bottleneck(Module):
    """Dense layer: BN-ReLU-Conv1x1-BN-ReLU-Conv3x3, concatenated to x."""

    def __init__(self, c_in: int, growth: int):
        super().__init__()
        self.layers = Sequential(
            BatchNorm2d(c_in), ReLU(), Conv2d(c_in, 4 * growth, 1, bias=False),
            BatchNorm2d(4 * growth), ReLU(),
            Conv2d(4 * growth, growth, 3, padding=1, bias=False),
        )

    def children(self):
        return (self.layers,)

    @buildingblock("bottleneck")
    def forward(self, x):
        return autograd.concat([x, self.layers(x)], axis=1)


class TransitionLayer(Module):

    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        self.layers = Sequential(
            BatchNorm2d(c_in), ReLU(), Conv2d(c_in, c_out, 1, bias=False),
            AvgPool2d(2),
        )

    def children(self):
        return (self.layers,)

    @buildingblock("transitionlayer")
    def forward(self, x):
        return self.layers(x)


def densenet121(classes: int = 1000, growth: int = 32):
    layers, channels = _resnet_stem(), 64
    for i, blocks in enumerate((6, 12, 24, 16)):
        for _ in range(blocks):
            layers.append(Bottleneck(channels, growth))
            channels += growth
        if i < 3:
            layers.append(TransitionLayer(channels, channels // 2))
            channels //= 2
    return Sequential(
        *layers, BatchNorm2d(channels), ReLU(), AvgPool2d(6), Flatten(),
        Linear(channels, classes),
    )


class SelfAttention(Module):
    """Multi-head self-attention over [batch, seq, dim] inputs."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads:
            raise ConfigError(f"dim {dim} is not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.query = Linear(dim, dim)
        self.key = Linear(dim, dim)
        self.value = Linear(dim, dim)
        self.out = Linear(dim, dim)
        self.softmax = Softmax(-1)

    def children(self):
        return self.query, self.key, self.value, self.out, self.softmax

    def split(self, x):
        batch, seq, _ = x.shape
        x = x.reshape(batch, seq, self.heads, self.dim // self.heads)
        return x.permute(0, 2, 1, 3)

    def forward(self, x):
        batch, seq, _ = x.shape
        q = self.split(self.query(x))
        k = self.split(self.key(x))
        v = self.split(self.value(x))
        scores = autograd.bmm(q, k.transpose(-2, -1))
        scores = scores * ((self.dim // self.heads) ** -0.5)
        ctx = autograd.bmm(self.softmax(scores), v)
        ctx = ctx.permute(0, 2, 1, 3).reshape(batch, seq, self.dim)
        return self.out(ctx)


class EncoderBlock(Module):

    def __init__(self, dim: int = 256, heads: int = 4, hidden: int = 1024):
        super().__init__()
        self.attention = Labeled('attention', SelfAttention(dim, heads))
        self.norm1 = LayerNorm(dim)
        self.ffn = Sequential(Linear(dim, hidden), GELU(), Linear(hidden, dim))
        self.norm2 = LayerNorm(dim)

    def children(self):
        return self.attention, self.norm1, self.ffn, self.norm2

    def forward(self, x):
        x = self.norm1(autograd.add(x, self.attention(x)))
        return self.norm2(autograd.add(x, self.ffn(x)))


class TransformerClassifier(Module):

    def __init__(self, dim=256, heads=4, hidden=1024, classes=2):
        super().__init__()
        self.block = EncoderBlock(dim, heads, hidden)
        self.head = Linear(dim, classes)

    def children(self):
        return self.block, self.head

    def forward(self, x):
        return self.head(self.block(x).mean(axis=1))


ZOO = {
    'logreg': ModelDef('logreg', logistic_regression, [((784,), 0)], 10),
    'lenet': ModelDef('lenet', lenet, [((3, 28, 28), 0)], 10),
    'minionn': ModelDef('minionn', minionn, [((3, 32, 32), 0)], 10),
    'vgg16': ModelDef('vgg16', vgg16, [((3, 224, 224), 0)], 1000),
    'resnet18': ModelDef('resnet18', resnet18, [((3, 224, 224), 0)], 1000),
    'resnet50': ModelDef('resnet50', resnet50, [((3, 224, 224), 0)], 1000),
    'densenet121': ModelDef(
        'densenet121', densenet121, [((3, 224, 224), 0)], 1000
    ),
    'transformer': ModelDef(
        'transformer', TransformerClassifier, [((128, 256), 0)], 2,
        optimizer={'kind': "Adam", 'lr': 1e-3}
    ),
}


def load_model_spec(path) -> ModelDef:
    """Read and validate a JSON model spec file."""
    path = Path(path)
    try:
        with open(path) as f:
            doc = json.load(f)
        validate_model_spec(doc)
    except ValidationError as e:
        raise ConfigError(f"{path}: {e.message}") from e
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read model spec {path}: {e}") from e
    shapes = [tuple(i['shape']) for i in doc['inputs']]
    batch = shapes[0][0]
    if any(s[0] != batch for s in shapes):
        raise ConfigError(f"{path}: inputs disagree on the batch dimension")
    inputs = [
        (shape[1:] or (1,), i.get('from_party', 0))
        for shape, i in zip(shapes, doc['inputs'])
    ]
    loss = doc.get('loss')
    classes = doc['labels'][0] if 'labels' in doc else None
    if loss is not None and classes is None:
        raise ConfigError(f"{path}: a loss needs the 'labels' shape")
    layer_docs = doc['layers']
    model = ModelDef(
        name=doc.get('name', path.stem),
        build=lambda: Sequential(*(build_layer(d) for d in layer_docs)),
        inputs=inputs,
        classes=classes,
        loss=loss,
        optimizer=doc.get('optimizer'),
        batch_size=batch
    )
    logger.info(f"Loaded model spec '{model.name}' from {path}")
    return model


def get_model(name_or_path) -> ModelDef:
    """Zoo model by name, or a model spec file by path."""
    key = str(name_or_path).lower()
    if key in ZOO:
        return ZOO[key]
    path = Path(name_or_path)
    if path.suffix == '.json' and path.exists():
        return load_model_spec(path)
    raise UnknownEntityError(
        f"unknown model '{name_or_path}' (zoo: {', '.join(ZOO)})"
    )

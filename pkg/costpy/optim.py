"""
Optimizer steps. Learning rates and moment coefficients are public, so
scaling by them costs only a truncation.
"""
import logging
from typing import Iterable

from costpy import secure
from costpy.blocktree import current_context
from costpy.errors import CompileError, ConfigError, UnknownEntityError

logger = logging.getLogger(__name__)

STEP_LABEL = ('optimizer', 'step')


class Optimizer:

    def __init__(self, params: Iterable, lr: float):
        self.params = list(params)
        if not self.params:
            raise ConfigError("optimizer got an empty parameter list")
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive: {lr}")
        self.lr = lr

    @property
    def size(self) -> int:
        return sum(p.numel for p in self.params)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        missing = [p for p in self.params if p.grad is None]
        if missing:
            raise CompileError(
                f"step() before backward(): {len(missing)} parameter(s) "
                f"without gradient"
            )
        with current_context().label_scope(*STEP_LABEL):
            self.update(self.size)

    def update(self, n: int):
        raise NotImplementedError


class SGD(Optimizer):

    def update(self, n: int):
        # w -= lr * g
        secure.fp_public_scale(n)


class Adam(Optimizer):

    def __init__(
        self,
        params: Iterable,
        lr: float = 1e-3,
        betas: tuple = (0.9, 0.999),
        eps: float = 1e-8
    ):
        super().__init__(params, lr)
        if len(betas) != 2 or not all(0 <= b < 1 for b in betas):
            raise ConfigError(f"invalid Adam betas {betas}")
        if eps <= 0:
            raise ConfigError(f"eps must be positive: {eps}")
        self.betas = tuple(betas)
        self.eps = eps

    def update(self, n: int):
        # m = b1*m + (1-b1)*g; v = b2*v + (1-b2)*g^2
        for _ in range(4):
            secure.fp_public_scale(n)
        secure.fp_mul(n)
        # w -= lr * m / sqrt(v + eps)
        secure.fp_inv_sqrt(n)
        secure.fp_div(n)
        secure.fp_public_scale(n)


OPTIMIZERS = {'SGD': SGD, 'Adam': Adam}


def build_optimizer(doc: dict, params: Iterable) -> Optimizer:
    kind = doc['kind']
    if kind not in OPTIMIZERS:
        raise UnknownEntityError(f"unknown optimizer '{kind}'")
    kwargs = {k: doc[k] for k in ('lr', 'betas', 'eps') if k in doc}
    if kind == 'SGD':
        kwargs.pop('betas', None)
        kwargs.pop('eps', None)
        kwargs.setdefault('lr', 0.01)
    optimizer = OPTIMIZERS[kind](params, **kwargs)
    logger.debug(f"{kind} over {optimizer.size} parameter element(s)")
    return optimizer

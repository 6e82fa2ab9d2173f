"""
End-to-end profiling: compile a model once, aggregate it per framework.
"""
import logging
from concurrent import futures
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from tqdm import tqdm

from costpy.blocktree import (
    ProfileReport, ReqNode, aggregate, buildingblock, compile_program, emit_op,
    for_range
)
from costpy.data import DataLoader
from costpy.errors import ConfigError
from costpy.frameworks import get_framework
from costpy.nn import CrossEntropyLoss
from costpy.optim import build_optimizer
from costpy.params import SecurityParams
from costpy.report import FORMATS, GROUPINGS, PHASES, write_report
from costpy.secure import LoweringOptions, Recipes
from costpy.zoo import ModelDef, get_model

logger = logging.getLogger(__name__)

MODES = ('inference', 'train')
EXTENSIONS = {'table': 'txt', 'csv': 'csv', 'json': 'json'}


@dataclass
class ProfileRequest:
    """What to profile and how to report it.

    Parameters
    ----------
    frameworks : list of str
      Registered framework names; the model is compiled once for all.
    model : str
      Zoo name or path of a model spec file.
    params : SecurityParams
      `m` is replaced by `parties`, or by each framework's default.
    parties : int, optional
      Party count, checked against every framework.
    mode : {"inference", "train"}
    batches : int
      Iterations of the statically bounded batch loop.
    batch_size : int
      Samples per batch (model spec files fix their own).
    optimizer : dict, optional
      Overrides the model's optimizer, e.g. {"kind": "Adam"}.
    he_defaults : dict
      Overrides of framework defaults such as Cheetah's `lp`/`bp`.

    """
    frameworks: list
    model: str
    params: SecurityParams = field(default_factory=SecurityParams)
    parties: Optional[int] = None
    mode: str = 'inference'
    batches: int = 1
    batch_size: int = 1
    phase: str = 'both'
    group: str = 'label'
    fmt: str = 'table'
    out_dir: Optional[Path] = None
    optimizer: Optional[dict] = None
    recipes: Recipes = field(default_factory=Recipes)
    lowering: LoweringOptions = field(default_factory=LoweringOptions)
    he_defaults: dict = field(default_factory=dict)
    workers: int = 1

    def __post_init__(self):
        if isinstance(self.frameworks, str):
            self.frameworks = [
                name.strip() for name in self.frameworks.split(',')
            ]
        if not self.frameworks or not all(self.frameworks):
            raise ConfigError("at least one framework is needed")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}: {self.mode!r}")
        if self.phase not in PHASES:
            raise ConfigError(f"unknown phase {self.phase!r}")
        if self.group not in GROUPINGS:
            raise ConfigError(f"unknown grouping {self.group!r}")
        if self.fmt not in FORMATS:
            raise ConfigError(f"unknown format {self.fmt!r}")
        if self.batches < 1 or self.batch_size < 1:
            raise ConfigError("batches and batch_size must be positive")
        if self.workers < 1:
            raise ConfigError(f"workers must be positive: {self.workers}")


def _train(model: ModelDef, net, loader, batches: int, optimizer_doc):
    if not model.trainable:
        raise ConfigError(f"model '{model.name}' has no loss to train with")
    optimizer_doc = optimizer_doc or model.optimizer
    if optimizer_doc is None:
        raise ConfigError(f"model '{model.name}' has no optimizer")
    optimizer = build_optimizer(optimizer_doc, net.parameters())
    criterion = CrossEntropyLoss()
    net.train()

    @for_range(batches)
    def _(i):
        x, *_, labels = loader[i]
        optimizer.zero_grad()
        loss = criterion(net(x), labels)
        loss.backward()
        optimizer.step()


def _infer(net, loader, batches: int):
    net.eval()

    @for_range(batches)
    def _(i):
        net(loader[i][0])


def model_program(
    model: ModelDef,
    mode: str = 'inference',
    batches: int = 1,
    batch_size: int = 1,
    optimizer: Optional[dict] = None
):
    """Trace one profiling run of `model` in the active context."""
    batch = model.batch_size or batch_size
    samples = batch * batches
    shapes = [(samples,) + tuple(shape) for shape, _ in model.inputs]
    if mode == 'train' and model.classes is not None:
        shapes.append((samples, model.classes))
    loader = DataLoader(shapes, batch, from_party=model.inputs[0][1])
    loader.load()
    net = model.build()
    if mode == 'train':
        _train(model, net, loader, batches, optimizer)
    else:
        _infer(net, loader, batches)


def compile_model(
    model,
    mode: str = 'inference',
    batches: int = 1,
    batch_size: int = 1,
    optimizer: Optional[dict] = None,
    recipes: Optional[Recipes] = None,
    lowering: Optional[LoweringOptions] = None
) -> ReqNode:
    if not isinstance(model, ModelDef):
        model = get_model(model)
    root = compile_program(
        model_program, model, mode, batches, batch_size, optimizer,
        recipes=recipes, lowering=lowering
    )
    logger.info(
        f"Compiled {model.name} ({mode}, {batches} batch(es) of "
        f"{model.batch_size or batch_size})"
    )
    return root


@buildingblock("mul")
def _demo_mul():
    emit_op('muls', size=1)


@buildingblock("test")
def _demo_test():
    _demo_mul()
    emit_op('reveal', size=1)


def label_demo():
    """One multiplication under "test-mul", then one opening under "test"."""
    _demo_test()


def profile_demo(
    framework='ABY3',
    params: Optional[SecurityParams] = None,
    registry=None
) -> ProfileReport:
    config = get_framework(framework, registry)
    params = (params or SecurityParams()).with_parties(config.parties.default)
    return aggregate(
        compile_program(label_demo), config, params, registry=registry,
        model='demo'
    )


def _framework_for(name: str, request: ProfileRequest, registry=None):
    config = get_framework(name, registry)
    overrides = {
        k: v for k, v in request.he_defaults.items() if k in config.defaults
    }
    if overrides:
        config = replace(config, defaults=config.defaults | overrides)
    m = request.parties or config.parties.default
    config.check_parties(m)
    return config, request.params.with_parties(m)


def run_profile(request: ProfileRequest, registry=None) -> list:
    """Profile the requested model under every requested framework.

    Returns the reports in request order and writes one artifact per
    framework when `request.out_dir` is set.
    """
    model = get_model(request.model)
    targets = [_framework_for(n, request, registry) for n in request.frameworks]
    root = compile_model(
        model, request.mode, request.batches, request.batch_size,
        request.optimizer, request.recipes, request.lowering
    )

    def run(target):
        config, params = target
        return aggregate(root, config, params, request.recipes, model=model.name)

    with futures.ThreadPoolExecutor(max_workers=request.workers) as executor:
        reports = list(tqdm(
            executor.map(run, targets),
            total=len(targets),
            desc="frameworks",
            disable=len(targets) < 2
        ))
    if request.out_dir is not None:
        out_dir = Path(request.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for report in reports:
            path = out_dir / (
                f"{model.name}_{report.framework}.{EXTENSIONS[request.fmt]}"
            )
            write_report(report, path, request.fmt, request.group, request.phase)
    return reports

"""
Cost configurations of MPC frameworks and the registry resolving them.

A framework maps each of its basic operations to a `CostFormula`. Formulas
that do not reference `size` give the cost of one element; their bit
components are multiplied by `size` before rounding up.
"""
import json
import logging
import math
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional

import yaml
from jsonschema.exceptions import ValidationError

from costpy.errors import ConfigError, UnknownEntityError
from costpy.expr import (
    IDENTIFIERS, LIST_IDENTIFIERS, CostFormula, parse_cost_formula,
    parse_expression
)
from costpy.packing import (
    DEFAULT_BP, DEFAULT_LP, cdiv, cheetah_matmul_ct_count,
    semi2k_matmul_msg_count
)
from costpy.params import ZERO_COST, CostTuple, OpExtras, SecurityParams
from costpy.validate import validate_framework_config

logger = logging.getLogger(__name__)

REQUIRED_OPS = ('share', 'reveal', 'muls')
ALLOWED_PARAMETERS = IDENTIFIERS | LIST_IDENTIFIERS | {'lp', 'bp'}
HE_MOD = (59, 55, 49, 49)


def clog2(x: int) -> int:
    """ceil(log2(x)) on integers."""
    if x < 1:
        raise ConfigError(f"log2 of non-positive value {x}")
    return (x - 1).bit_length()


def _cheetah_matmul(env):
    deg, mod = env['deg'], env['mod']
    s_ct, r_ct = cheetah_matmul_ct_count(
        env['p'], env['q'], env['r'], deg,
        env.get('lp', DEFAULT_LP), env.get('bp', DEFAULT_BP)
    )
    bits = 2 * (s_ct * deg * sum(mod[:-1]) + r_ct * deg * sum(mod[:-2]))
    return bits, 4, 0, 0


def _semi2k_matmul(env):
    count = semi2k_matmul_msg_count(env['p'], env['q'], env['r'], env['k'])
    return env['m'] * env['k'] * count, 1, 0, 0


PROCEDURES = {
    'cheetah_matmul': (
        ('p', 'q', 'r', 'deg', 'mod', 'lp', 'bp'), _cheetah_matmul
    ),
    'semi2k_matmul': (('p', 'q', 'r', 'k', 'm'), _semi2k_matmul),
}


def procedure_formula(name: str) -> CostFormula:
    try:
        parameters, func = PROCEDURES[name]
    except KeyError:
        raise ConfigError(
            f"unknown procedure '{name}' (known: {', '.join(PROCEDURES)})"
        ) from None
    return CostFormula.from_procedure(name, parameters, func)


@dataclass(frozen=True)
class PartyRange:
    default: int = 2
    min: int = 2
    max: Optional[int] = None

    def __post_init__(self):
        if self.min < 2 or self.default < self.min:
            raise ConfigError(f"invalid party range {self}")
        if self.max is not None and self.default > self.max:
            raise ConfigError(f"invalid party range {self}")

    def __contains__(self, m: int):
        return self.min <= m and (self.max is None or m <= self.max)

    @classmethod
    def fixed(cls, m: int) -> "PartyRange":
        return cls(m, m, m)


@dataclass
class FrameworkConfig:
    """Cost configuration of one framework.

    Parameters
    ----------
    name : str
      Registry name, e.g. "ABY3".
    formulas : dict
      Operation name -> `CostFormula`. Its keys are the declared operations.
    parties : PartyRange
      Supported party counts and the count used when none is requested.
    constraints : tuple of str
      Cost expressions over the security parameters that must evaluate to a
      non-negative value.
    defaults : dict
      Values of `deg`, `mod`, `lp` and `bp` used when an instruction does not
      set them.
    local_truncation : bool
      Whether `TruncPr` is the local (reserved slack bits) truncation.

    """
    name: str
    formulas: dict
    parties: PartyRange = field(default_factory=PartyRange)
    constraints: tuple = ()
    defaults: dict = field(default_factory=dict)
    local_truncation: bool = False

    def __post_init__(self):
        missing = [op for op in REQUIRED_OPS if op not in self.formulas]
        if missing:
            raise ConfigError(
                f"framework '{self.name}' is missing operation(s) "
                f"{', '.join(repr(op) for op in missing)}"
            )
        for op, formula in self.formulas.items():
            unknown = formula.parameters - ALLOWED_PARAMETERS
            if unknown:
                raise ConfigError(
                    f"framework '{self.name}' op '{op}' references unknown "
                    f"parameter(s) {', '.join(sorted(unknown))}"
                )
        self.constraints = tuple(self.constraints)
        self._constraint_nodes = [parse_expression(c) for c in self.constraints]
        if 'mod' in self.defaults:
            self.defaults = self.defaults | {'mod': tuple(self.defaults['mod'])}

    @property
    def declared_ops(self) -> frozenset:
        return frozenset(self.formulas)

    def formula(self, op: str) -> CostFormula:
        try:
            return self.formulas[op]
        except KeyError:
            raise UnknownEntityError(
                f"operation '{op}' is not declared by framework '{self.name}'"
            ) from None

    def check_params(self, params: SecurityParams):
        env = params.as_dict()
        for text, node in zip(self.constraints, self._constraint_nodes):
            if node.evaluate(env) < 0:
                raise ConfigError(
                    f"framework '{self.name}' requires {text} >= 0 "
                    f"(got {params})"
                )

    def check_parties(self, m: int):
        if m not in self.parties:
            raise ConfigError(
                f"framework '{self.name}' does not support {m} parties "
                f"(range {self.parties.min}..{self.parties.max or 'any'})"
            )

    def check_slack_bits(self, params: SecurityParams) -> bool:
        """Warn when local truncation has fewer slack bits than it needs."""
        needed = 2 * params.f + params.kappa_s
        if self.local_truncation and params.k < needed:
            logger.warning(
                f"{self.name} truncates locally but k={params.k} < "
                f"2*f+kappa_s={needed}; truncation may fail"
            )
            return False
        return True

    def evaluate(
        self,
        op: str,
        params: SecurityParams,
        extras: Optional[OpExtras] = None
    ) -> CostTuple:
        formula = self.formula(op)
        extras = (extras or OpExtras()).with_defaults(self.defaults)
        self.check_params(params)
        if _is_empty(formula, extras):
            return ZERO_COST
        env = params.as_dict() | extras.env()
        raw = list(formula.evaluate(env))
        if 'size' not in formula.parameters:
            raw[0] *= extras.size
            raw[2] *= extras.size
        if any(value < 0 for value in raw):
            raise ConfigError(
                f"framework '{self.name}' op '{op}' evaluated to a negative "
                f"cost {[float(v) for v in raw]}"
            )
        return CostTuple(*(math.ceil(value) for value in raw))

    @classmethod
    def from_dict(cls, doc: dict) -> "FrameworkConfig":
        formulas = {}
        for op, text in doc['ops'].items():
            if isinstance(text, dict):
                formulas[op] = procedure_formula(text['procedure'])
            else:
                try:
                    formulas[op] = parse_cost_formula(text)
                except ConfigError as e:
                    raise ConfigError(f"op '{op}': {e}") from e
        parties = doc.get('parties', {})
        default = parties.get('default', 2)
        return cls(
            name=doc['name'],
            formulas=formulas,
            parties=PartyRange(
                default, parties.get('min', default), parties.get('max')
            ),
            constraints=tuple(doc.get('constraints', ())),
            defaults=dict(doc.get('defaults', {})),
            local_truncation=doc.get('local_truncation', False),
        )


def _is_empty(formula: CostFormula, extras: OpExtras) -> bool:
    if extras.size == 0:
        return True
    if any(
        getattr(extras, dim) == 0
        for dim in ('p', 'q', 'r') if dim in formula.parameters
    ):
        return True
    return 'batch' in formula.parameters and (
        extras.conv is not None and extras.conv.batch == 0
    )


def _builtin(name, ops, **kwargs) -> FrameworkConfig:
    formulas = {}
    for op, func in ops.items():
        if isinstance(func, str):
            formulas[op] = procedure_formula(func)
        else:
            formulas[op] = CostFormula.from_callable(func)
    return FrameworkConfig(name, formulas, **kwargs)


CRYPTFLOW2 = {
    'share': lambda: (0, 0, 0, 0),
    'reveal': lambda k: (2 * k, 1, 0, 0),
    'muls': lambda k, kappa, size: (
        size * k * (cdiv(k + 1, 2) + kappa), 2, 0, 0
    ),
    'matmuls': lambda k, kappa, p, q, r: (
        q * r * k * (p * cdiv(k + 1, 2) + kappa),
        max(2, math.ceil(Fraction(2 * k, cdiv(2**24, p * q * r)))),
        0, 0
    ),
    'TruncPr': lambda k, kappa, f, knownmsb: (
        (kappa + 14) * f + 2 * kappa + 4 * k if knownmsb
        else kappa * (k + 2) + 19 * k + (kappa + 14) * f,
        2 if knownmsb else 2 * clog2(k) + 2,
        0, 0
    ),
    'LTZ': lambda k, kappa: ((kappa + 18) * k, clog2(k), 0, 0),
}

CRYPTEN = {
    'share': lambda: (0, 0, 0, 0),
    'reveal': lambda k: (2 * k, 1, 0, 0),
    'muls': lambda k, size: (2 * k * size, 1, k * size, 3),
    'matmuls': lambda k, p, q, r: ((p * q + q * r) * k * 2, 1, p * r * k, 3),
    'TruncPr': lambda: (0, 0, 0, 0),
    'LTZ': lambda k: (54 * k, clog2(k) + 2, 14 * k, (clog2(k) + 2) * 3),
    'exp_fx': lambda k: (16 * k, 8, 8 * k, 24),
    'EQZ': lambda k: (26 * k, clog2(k), 7 * k, 21),
    'Reciprocal': lambda k: (138 * k, 38, 44 * k, 114),
}

ABY = {
    'share': lambda: (0, 0, 0, 0),
    'reveal': lambda k: (2 * k, 1, 0, 0),
    'muls': lambda k, kappa, size: (
        4 * k * size, 1, (2 * kappa + k + 1) * k * size, 2
    ),
    'matmuls': lambda k, kappa, p, q, r: (
        p * q * r * k * 4, 1, p * q * r * (2 * kappa + k + 1) * k, 2
    ),
    'TruncPr': lambda: (0, 0, 0, 0),
    'LTZ': lambda k, kappa: (
        kappa * k * 7 + Fraction(k * k + k, 2), 4, 5 * kappa * k, 2
    ),
}


def _spdz_triple(k, kappa_s):
    return 18 * kappa_s**2 + 4 * k**2 + 17 * kappa_s * k


SPDZ2K = {
    'share': lambda k, kappa_s, m: (
        (kappa_s + k) * (m - 1), 1, kappa_s * (k + kappa_s) * m * (m - 1), 3
    ),
    'reveal': lambda k, kappa_s, m: (
        (kappa_s + k) * m * (m - 1), 1,
        kappa_s * (k + kappa_s) * m * (m - 1), 3
    ),
    'muls': lambda k, kappa_s, m: (
        (k + kappa_s) * m * (m - 1) * 2, 1,
        _spdz_triple(k, kappa_s) * m * (m - 1), 8
    ),
    'matmuls': lambda k, kappa_s, m, p, q, r: (
        (k + kappa_s) * m * (m - 1) * 2 * p * q * r, 1,
        _spdz_triple(k, kappa_s) * m * (m - 1) * p * q * r, 8
    ),
    'TruncPr': lambda k, kappa_s, m: (
        (k + kappa_s) * m * (m - 1), 1,
        k * (
            (kappa_s + k) * (3 * m + 1) * (m - 1)
            + kappa_s * (k + kappa_s) * m * (m - 1) * 2
            + _spdz_triple(k, kappa_s) * m * (m - 1)
        ),
        11
    ),
}

ABY3 = {
    'share': lambda k: (3 * k, 1, 0, 0),
    'reveal': lambda k: (3 * k, 1, 0, 0),
    'muls': lambda k, size: (3 * k * size, 1, 0, 0),
    'matmuls': lambda k, p, r: (3 * p * r * k, 1, 0, 0),
    'TruncPr': lambda k: (k, 1, 0, 0),
    'LTZ': lambda k: (9 * k, clog2(k) + 2, 0, 0),
}


def _falcon_ltz_offline(k):
    return (k + 8 + clog2(k)) * k * 3


FALCON = {
    'share': lambda k: (3 * k, 1, 0, 0),
    'reveal': lambda k: (6 * k, 1, 0, 0),
    'muls': lambda k, size: (6 * k * size, 1, 0, 0),
    'matmuls': lambda k, p, r: (6 * p * r * k, 1, 0, 0),
    'TruncPr': lambda k, f: (
        2 * k, 1,
        (6 + clog2(k)) * k + (6 + clog2(k - f)) * (k - f),
        clog2(k) + 2
    ),
    'LTZ': lambda k: (
        24 * k, clog2(k) + 5, _falcon_ltz_offline(k), 4 + 2 * clog2(k)
    ),
    'Pow2': lambda k: (
        24 * k * k, (clog2(k) + 5) * k, _falcon_ltz_offline(k) * k,
        4 + 2 * clog2(k)
    ),
    'Reciprocal': lambda k: (
        24 * k * k + 36 * k, (clog2(k) + 5) * k + 5,
        _falcon_ltz_offline(k) * k, 4 + 2 * clog2(k)
    ),
}

DELPHI = {
    'share': lambda: (0, 0, 0, 0),
    'reveal': lambda k: (2 * k, 1, 0, 0),
    'muls': lambda k, size, deg, mod: (
        k * size, 1, cdiv(size, deg) * deg * sum(mod) * 4, 2
    ),
    'matmuls': lambda k, p, q, r, deg, mod: (
        p * q * k, 1,
        (cdiv(p * r, deg) + cdiv(p * q, deg)) * deg * sum(mod) * 2, 2
    ),
    'TruncPr': lambda: (0, 0, 0, 0),
    'LTZ': lambda k: (148 * k, 1, 1470 * k, 3),
    'conv2d': lambda k, batch, in_channel, out_channel, inw, inh, outw, outh,
    kw, kh, deg, mod: (
        batch * in_channel * inw * inh * k, 1,
        batch * cdiv(in_channel * inw * inh, deg) * kw * kh * deg * sum(mod)
        + cdiv(batch * out_channel * outw * outh, deg) * deg * sum(mod),
        2
    ),
}

CHEETAH = {
    'share': lambda: (0, 0, 0, 0),
    'reveal': lambda k: (2 * k, 1, 0, 0),
    'muls': lambda size, deg, mod: (
        cdiv(size, deg) * (deg * sum(mod[:-1]) + deg * sum(mod[:-2])), 2, 0, 0
    ),
    'matmuls': 'cheetah_matmul',
    'TruncPr': lambda f: (f + 4, 2, 0, 0),
    'LTZ': lambda k: (13 * k + 1, clog2(k), 0, 0),
}

DEEP_MPC = {
    'share': lambda k: (k, 1, 0, 0),
    'reveal': lambda k: (3 * k, 1, 0, 0),
    'muls': lambda k: (3 * k, 1, 0, 0),
    'matmuls': lambda k, p, r: (3 * p * r * k, 1, 0, 0),
    'TruncPr': lambda k: (8 * k, 3, 0, 0),
    'LTZ': lambda k: (Fraction('7.425') * k, clog2(k) + 2, 3 * k, 2),
}

SEMI2K = {
    'share': lambda: (0, 0, 0, 0),
    'reveal': lambda k, m: (m * (m - 1) * k, 1, 0, 0),
    'muls': lambda k, m, size: (2 * m * (m - 1) * k * size, 1, 0, 0),
    'matmuls': 'semi2k_matmul',
    'TruncPr': lambda k, m: (m * (m - 1) * k, 1, 0, 0),
    'LTZ': lambda k, m: (
        m * (2 * k + 2 * (m - 1) * (2 * k + 32)), clog2(k) + 1, 0, 0
    ),
}


def _builtin_configs() -> dict:
    two_party = PartyRange.fixed(2)
    he_defaults = {'mod': HE_MOD}
    configs = [
        _builtin("CrypTFlow2", CRYPTFLOW2, parties=two_party),
        _builtin("CrypTen", CRYPTEN, parties=two_party),
        _builtin("ABY", ABY, parties=two_party, local_truncation=True),
        _builtin(
            "SPDZ-2k", SPDZ2K,
            parties=PartyRange(2, 2, None),
            constraints=("k - kappa_s",)
        ),
        _builtin(
            "ABY3", ABY3, parties=PartyRange.fixed(3), local_truncation=True
        ),
        _builtin("Falcon", FALCON, parties=PartyRange.fixed(3)),
        _builtin(
            "Delphi", DELPHI, parties=two_party,
            defaults=he_defaults | {'deg': 8192}
        ),
        _builtin(
            "Cheetah", CHEETAH, parties=two_party,
            defaults=he_defaults | {
                'deg': 4096, 'lp': DEFAULT_LP, 'bp': DEFAULT_BP
            }
        ),
        _builtin("Deep-MPC", DEEP_MPC, parties=PartyRange.fixed(3)),
        _builtin("SEMI2K", SEMI2K, parties=PartyRange(2, 2, None)),
    ]
    return {config.name: config for config in configs}


BUILTIN_CONFIGS = _builtin_configs()


class Registry:
    """Framework name -> configuration, looked up case-insensitively."""

    def __init__(self, configs=()):
        self._configs = {}
        self._lock = threading.Lock()
        for config in configs:
            self.register(config)

    def __contains__(self, name: str):
        return name.casefold() in self._configs

    def __iter__(self):
        return iter(self.names())

    def names(self) -> list[str]:
        return [config.name for config in self._configs.values()]

    def register(self, config: FrameworkConfig, overwrite: bool = False):
        key = config.name.casefold()
        with self._lock:
            if key in self._configs:
                if not overwrite:
                    raise ConfigError(
                        f"framework '{config.name}' is already registered"
                    )
                logger.warning(f"Overwriting framework '{config.name}'")
            self._configs[key] = config
        logger.info(
            f"Registered {config.name} ({', '.join(sorted(config.formulas))})"
        )

    def get(self, name: str) -> FrameworkConfig:
        try:
            return self._configs[name.casefold()]
        except KeyError:
            raise UnknownEntityError(
                f"unknown framework '{name}' "
                f"(registered: {', '.join(self.names())})"
            ) from None

    def copy(self) -> "Registry":
        return Registry(self._configs.values())


_default_registry = Registry(BUILTIN_CONFIGS.values())


def default_registry() -> Registry:
    return _default_registry


def register_framework(
    config: FrameworkConfig,
    overwrite: bool = False,
    registry: Optional[Registry] = None
):
    (registry or _default_registry).register(config, overwrite=overwrite)


def get_framework(name, registry: Optional[Registry] = None):
    if isinstance(name, FrameworkConfig):
        return name
    return (registry or _default_registry).get(name)


def evaluate_cost(
    framework,
    op: str,
    params: SecurityParams,
    extras: Optional[OpExtras] = None,
    registry: Optional[Registry] = None
) -> CostTuple:
    """Cost of one (possibly vectorized) basic operation."""
    config = get_framework(framework, registry)
    return config.evaluate(op, params, extras)


def load_framework_file(path) -> FrameworkConfig:
    """Read and check a JSON or YAML framework configuration file."""
    path = Path(path)
    try:
        with open(path, 'r') as handle:
            if path.suffix in ('.yml', '.yaml'):
                doc = yaml.safe_load(handle)
            else:
                doc = json.load(handle)
    except (OSError, ValueError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    try:
        validate_framework_config(doc)
    except ValidationError as e:
        raise ConfigError(f"{path}: {e.message}") from e
    config = FrameworkConfig.from_dict(doc)
    logger.info(f"Loaded framework {config.name} from {path}")
    return config

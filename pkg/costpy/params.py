"""Security parameters, per-instruction extras and the cost tuple."""
from dataclasses import asdict, dataclass, fields, replace
from typing import Optional

from costpy.errors import ConfigError

SECURITY_FIELDS = ('k', 'kappa_s', 'kappa', 'f', 'm')
CONV_FIELDS = (
    'batch', 'in_channel', 'out_channel',
    'inw', 'inh', 'outw', 'outh', 'kw', 'kh'
)


@dataclass(frozen=True)
class SecurityParams:
    """Protocol-wide parameters every cost formula may depend on.

    Parameters
    ----------
    k : int
      Ring bit length.
    kappa_s : int
      Statistical security parameter.
    kappa : int
      Computational security parameter.
    f : int
      Bit length of the fractional part of fixed-point numbers.
    m : int
      Number of parties.

    """
    k: int = 64
    kappa_s: int = 40
    kappa: int = 128
    f: int = 16
    m: int = 2

    def __post_init__(self):
        for name in SECURITY_FIELDS:
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{name} must be an integer, got {value!r}")
            if value < 0:
                raise ConfigError(f"{name} must be non-negative, got {value}")
        if self.k < self.f:
            raise ConfigError(f"k={self.k} must be at least f={self.f}")
        if self.m < 2:
            raise ConfigError(f"m={self.m} must be at least 2")
        if self.kappa < self.kappa_s:
            raise ConfigError(
                f"kappa={self.kappa} must be at least kappa_s={self.kappa_s}"
            )

    def as_dict(self) -> dict:
        return asdict(self)

    def with_parties(self, m: int) -> "SecurityParams":
        return replace(self, m=m)


@dataclass(frozen=True)
class ConvExtras:
    """Geometry of a 2-D convolution, as consumed by direct conv2d formulas."""
    batch: int
    in_channel: int
    out_channel: int
    inw: int
    inh: int
    outw: int
    outh: int
    kw: int
    kh: int
    groups: int = 1

    def __post_init__(self):
        for name in CONV_FIELDS:
            if getattr(self, name) < 0:
                raise ConfigError(f"conv {name} must be non-negative")
        if self.groups < 1:
            raise ConfigError(f"conv groups must be positive, got {self.groups}")


@dataclass(frozen=True)
class OpExtras:
    """Op-specific arguments attached to an instruction.

    `deg`, `mod`, `lp` and `bp` are usually left unset here and filled from
    the framework defaults at evaluation time.
    """
    size: int = 1
    p: int = 0
    q: int = 0
    r: int = 0
    deg: Optional[int] = None
    mod: Optional[tuple[int, ...]] = None
    knownmsb: int = 0
    conv: Optional[ConvExtras] = None
    lp: Optional[float] = None
    bp: Optional[float] = None

    def __post_init__(self):
        if self.mod is not None and not isinstance(self.mod, tuple):
            object.__setattr__(self, 'mod', tuple(self.mod))
        for name in ('size', 'p', 'q', 'r'):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.deg is not None and (
                self.deg < 1 or self.deg & (self.deg - 1)):
            raise ConfigError(f"deg={self.deg} must be a power of two")
        if self.knownmsb not in (0, 1, False, True):
            raise ConfigError("knownmsb must be 0 or 1")

    def with_defaults(self, defaults: dict) -> "OpExtras":
        """Fill the unset HE/price fields from framework defaults."""
        updates = {
            name: defaults[name]
            for name in ('deg', 'mod', 'lp', 'bp')
            if getattr(self, name) is None and name in defaults
        }
        return replace(self, **updates) if updates else self

    def env(self) -> dict:
        """Flatten into the name -> value mapping used by cost formulas."""
        values = {
            f.name: getattr(self, f.name)
            for f in fields(self) if f.name != 'conv'
        }
        values['knownmsb'] = int(self.knownmsb)
        if self.conv is not None:
            values.update(asdict(self.conv))
        return {key: val for key, val in values.items() if val is not None}


@dataclass(frozen=True)
class CostTuple:
    """Online bits, online rounds, offline bits, offline rounds."""
    online_bits: int = 0
    online_rounds: int = 0
    offline_bits: int = 0
    offline_rounds: int = 0

    def __post_init__(self):
        for value in self:
            if value < 0:
                raise ConfigError(f"negative cost component in {tuple(self)}")

    def __iter__(self):
        return iter((
            self.online_bits,
            self.online_rounds,
            self.offline_bits,
            self.offline_rounds,
        ))

    def __add__(self, other: "CostTuple") -> "CostTuple":
        return CostTuple(*(a + b for a, b in zip(self, other)))

    def __mul__(self, n: int) -> "CostTuple":
        if n < 0:
            raise ConfigError(f"cannot scale a cost by {n}")
        return CostTuple(*(a * n for a in self))

    __rmul__ = __mul__

    def __bool__(self):
        return any(self)

    def as_list(self) -> list[int]:
        return list(self)


ZERO_COST = CostTuple()


def sum_costs(costs) -> CostTuple:
    total = ZERO_COST
    for cost in costs:
        total = total + cost
    return total


EXTRA_FIELDS = tuple(
    f.name for f in fields(OpExtras) if f.name != 'conv'
) + CONV_FIELDS

import pytest

from costpy.errors import ConfigError
from costpy.params import (
    ZERO_COST, ConvExtras, CostTuple, OpExtras, SecurityParams, sum_costs
)


def test_default_security_params():
    params = SecurityParams()
    assert params.as_dict() == {
        'k': 64, 'kappa_s': 40, 'kappa': 128, 'f': 16, 'm': 2
    }
    assert params.with_parties(3).m == 3
    assert params.m == 2


@pytest.mark.parametrize('kwargs', [
    {'k': 8, 'f': 16},
    {'m': 1},
    {'kappa': 32, 'kappa_s': 40},
    {'k': -1},
    {'k': 64.0},
    {'f': True},
])
def test_invalid_security_params(kwargs):
    with pytest.raises(ConfigError):
        SecurityParams(**kwargs)


def test_cost_tuple_arithmetic():
    a = CostTuple(1, 2, 3, 4)
    assert a + a == CostTuple(2, 4, 6, 8)
    assert 3 * a == a * 3 == CostTuple(3, 6, 9, 12)
    assert a * 0 == ZERO_COST
    assert not ZERO_COST
    assert a.as_list() == [1, 2, 3, 4]
    assert sum_costs([a, a, a]) == a * 3
    assert sum_costs([]) == ZERO_COST


def test_cost_tuple_rejects_negative():
    with pytest.raises(ConfigError):
        CostTuple(-1, 0, 0, 0)
    with pytest.raises(ConfigError):
        CostTuple(1, 1, 1, 1) * -2


def test_op_extras_env_and_defaults():
    conv = ConvExtras(1, 3, 8, 32, 32, 32, 32, 3, 3)
    extras = OpExtras(size=2, conv=conv, knownmsb=True)
    env = extras.env()
    assert env['size'] == 2
    assert env['knownmsb'] == 1
    assert env['in_channel'] == 3 and env['kh'] == 3
    assert 'deg' not in env and 'conv' not in env
    filled = OpExtras(mod=[59, 55]).with_defaults({'deg': 4096, 'mod': (1,)})
    assert filled.deg == 4096
    assert filled.mod == (59, 55)


@pytest.mark.parametrize('kwargs', [
    {'size': -1},
    {'deg': 1000},
    {'knownmsb': 2},
])
def test_invalid_op_extras(kwargs):
    with pytest.raises(ConfigError):
        OpExtras(**kwargs)


def test_invalid_conv_extras():
    with pytest.raises(ConfigError):
        ConvExtras(1, 3, 8, 32, 32, 32, 32, 3, 3, groups=0)

import sys
from pathlib import Path

import pytest

from costpy.blocktree import aggregate, compile_program
from costpy.frameworks import default_registry, get_framework
from costpy.params import SecurityParams

ROOT = Path(__file__).resolve().parents[1]
SCRIPTS = ROOT / "scripts"
FRAMEWORK_FILES = ROOT / "config" / "frameworks"
MODEL_FILES = ROOT / "config" / "models"

if str(SCRIPTS) not in sys.path:
    sys.path.insert(0, str(SCRIPTS))


@pytest.fixture
def params():
    return SecurityParams()


@pytest.fixture
def registry():
    return default_registry().copy()


def profile(program, framework='ABY3', params=None, recipes=None,
            lowering=None, registry=None):
    """Compile `program` and aggregate it under `framework`."""
    config = get_framework(framework, registry)
    params = (params or SecurityParams()).with_parties(config.parties.default)
    root = compile_program(program, recipes=recipes, lowering=lowering)
    return aggregate(root, config, params, recipes, registry)


@pytest.fixture
def run():
    return profile

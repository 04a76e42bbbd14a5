import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from graspnet import sim  # noqa: E402


@pytest.fixture(scope="session")
def workspace():
    return sim.default_workspace()


@pytest.fixture(scope="session")
def demos(workspace):
    return sim.capture_all(workspace)

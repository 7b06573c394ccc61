import importlib.util
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]

# filled by tests/test_acceptance.py, printed at the end of the session
ACCEPTANCE = {}


def load_meshgen():
    """The mesh generator script under examples/, imported as a module."""
    spec = importlib.util.spec_from_file_location("build_meshes", ROOT / "examples" / "build_meshes.py")
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


@pytest.fixture(scope="session")
def meshgen():
    return load_meshgen()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])

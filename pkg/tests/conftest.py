# ABOUTME: Shared pytest fixtures for harmonic-ctl tests
# ABOUTME: Bench parameters, operating point, synthesized artifacts and a temporary cache db

import sys
import tempfile
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent.parent / "scripts"))


@pytest.fixture
def params():
    """Bench parameters."""
    from converter_model import ConverterParams

    return ConverterParams()


@pytest.fixture
def setpoint(params):
    """Operating point of the bench parameters."""
    from converter_model import compute_setpoint

    return compute_setpoint(params)


@pytest.fixture(scope="session")
def artifact():
    """Forwarding controller rejecting the 3rd harmonic, synthesized once per session."""
    from controller import synthesize
    from converter_model import ConverterParams

    return synthesize(ConverterParams(), objectives=(3,))


@pytest.fixture(scope="session")
def stabilizing_artifact():
    """Stabilizing-only controller (no integrators)."""
    from controller import synthesize
    from converter_model import ConverterParams

    return synthesize(ConverterParams(), objectives=(), integral=False)


@pytest.fixture
def temp_db():
    """Create a temporary SQLite database path for cache tests."""
    with tempfile.NamedTemporaryFile(suffix=".sqlite", delete=False) as f:
        db_path = Path(f.name)
    yield db_path
    db_path.unlink(missing_ok=True)

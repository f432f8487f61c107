import numpy as np
import pytest

from hrtfkit.pipeline import build_database
from hrtfkit.synth import SpeakerColoration, SphericalHeadModel, synth_set


@pytest.fixture(scope="session")
def model():
    return SphericalHeadModel()


@pytest.fixture(scope="session")
def raw_flat(model):
    return synth_set(model)


@pytest.fixture(scope="session")
def db(raw_flat):
    return build_database(raw_flat)


@pytest.fixture(scope="session")
def db_uncompensated(raw_flat):
    return build_database(raw_flat, compensate=False)


@pytest.fixture(scope="session")
def itd(db):
    from hrtfkit.cues import itd_map
    return itd_map(db)


@pytest.fixture(scope="session")
def db_notched():
    return build_database(synth_set(SphericalHeadModel(notch=(9000.0, 20.0))))


@pytest.fixture(scope="session")
def sealed_coloration():
    return SpeakerColoration.sealed_module()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])

import json
from pathlib import Path

import pytest

from cfwp.models.schemas import ModeConfig, SolverOptions
from cfwp.services.geometry import GeometryService
from cfwp.services.modes import ModeIndex, RadialCoeffs, SyntheticCoeffs

ROOT = Path(__file__).resolve().parent.parent
CONFIG_DIR = ROOT / "configs"


def load_config_doc(name):
    return json.loads((CONFIG_DIR / name).read_text(encoding="utf-8"))


@pytest.fixture
def config_doc():
    return load_config_doc


@pytest.fixture
def configs_dir():
    return CONFIG_DIR


@pytest.fixture(scope="session")
def euclidean():
    return GeometryService.preset("euclidean")


@pytest.fixture(scope="session")
def iwai_katayama():
    return GeometryService.preset("iwai-katayama", {"a": 1, "b": 1, "c": 1, "d": 1})


@pytest.fixture
def mode_factory():
    def make(k=0, l=0, epsilon=1, lam=0.0):
        return ModeConfig(k=k, l=l, epsilon=epsilon, lam=lam)
    return make


@pytest.fixture
def radial(euclidean):
    def make(k=0, l=0, epsilon=1, lam=0.0, geom=None):
        return RadialCoeffs(geom or euclidean, ModeIndex(k, l, epsilon, lam))
    return make


@pytest.fixture
def planted():
    return SyntheticCoeffs.planted()


@pytest.fixture
def solver_options():
    return SolverOptions()


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    for name in ("CFWP_WINDOW", "CFWP_REL_TOL", "CFWP_JOBS", "CFWP_LOG_LEVEL"):
        monkeypatch.delenv(name, raising=False)

import logging

import pytest
from pydantic import ValidationError

from cfwp.settings import Settings, configure_logging, parse_window


def test_defaults():
    settings = Settings()
    assert settings.window_bounds == (1e-8, 1e6)
    assert not settings.window_overridden()
    assert settings.rel_tol == 1e-10


def test_environment_overrides(monkeypatch):
    monkeypatch.setenv("CFWP_WINDOW", "1e-6, 1e3")
    monkeypatch.setenv("CFWP_REL_TOL", "1e-8")
    monkeypatch.setenv("CFWP_JOBS", "4")
    settings = Settings()
    assert settings.window_overridden()
    assert settings.window_bounds == (1e-6, 1e3)
    assert settings.rel_tol == 1e-8
    assert settings.jobs == 4


@pytest.mark.parametrize("text", ["1", "0,1", "2,1", "1,inf", "a,b"])
def test_parse_window_rejects(text):
    with pytest.raises(ValueError):
        parse_window(text)


def test_invalid_jobs(monkeypatch):
    monkeypatch.setenv("CFWP_JOBS", "0")
    with pytest.raises(ValidationError):
        Settings()


def test_configure_logging_installs_one_handler():
    configure_logging("DEBUG")
    configure_logging("WARNING")
    root = logging.getLogger()
    assert sum(1 for h in root.handlers if getattr(h, "_cfwp", False)) == 1
    assert root.level == logging.WARNING

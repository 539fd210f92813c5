import logging
from functools import lru_cache
from typing import Tuple

from pydantic import field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

DEFAULT_WINDOW: Tuple[float, float] = (1e-8, 1e6)
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def parse_window(text: str) -> Tuple[float, float]:
    """解析 "tmin,tmax" 形式的工作窗口"""
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 2:
        raise ValueError(f"window must be 'tmin,tmax', got {text!r}")
    lo, hi = float(parts[0]), float(parts[1])
    if not (0.0 < lo < hi) or hi == float("inf"):
        raise ValueError(f"window requires 0 < tmin < tmax < inf, got {text!r}")
    return lo, hi


class Settings(BaseSettings):
    """运行时配置，读取 CFWP_* 环境变量和 .env"""

    model_config = SettingsConfigDict(env_prefix="CFWP_", env_file=".env", extra="ignore")

    window: str = "1e-8,1e6"
    rel_tol: float = 1e-10
    jobs: int = 1
    log_level: str = "INFO"
    host: str = "0.0.0.0"
    port: int = 8000
    debug: bool = False

    @field_validator("window")
    @classmethod
    def _check_window(cls, value: str) -> str:
        parse_window(value)
        return value

    @field_validator("jobs")
    @classmethod
    def _check_jobs(cls, value: int) -> int:
        if value < 1:
            raise ValueError("jobs must be >= 1")
        return value

    @property
    def window_bounds(self) -> Tuple[float, float]:
        return parse_window(self.window)

    def window_overridden(self) -> bool:
        return "window" in self.model_fields_set


@lru_cache()
def get_settings() -> Settings:
    return Settings()


def configure_logging(level: str = "INFO") -> None:
    """安装单一 stream handler"""
    root = logging.getLogger()
    for handler in list(root.handlers):
        if getattr(handler, "_cfwp", False):
            root.removeHandler(handler)
    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    handler._cfwp = True
    root.addHandler(handler)
    root.setLevel(getattr(logging, str(level).upper(), logging.INFO))

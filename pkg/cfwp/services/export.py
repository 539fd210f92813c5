import csv
import io
import json
import logging
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, List, Sequence, Union

import numpy as np
from pydantic import BaseModel

from ..errors import FileAccessError

logger = logging.getLogger(__name__)


def format_number(value: float) -> str:
    """17 位有效数字，与 locale 无关"""
    value = float(value)
    if not math.isfinite(value):
        return "nan" if math.isnan(value) else ("inf" if value > 0 else "-inf")
    return format(value, ".17g")


def _prepare(obj: Any) -> Any:
    if isinstance(obj, BaseModel):
        return _prepare(obj.model_dump(by_alias=True))
    if isinstance(obj, dict):
        return {str(k): _prepare(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_prepare(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_prepare(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else None
    return obj


def dumps(obj: Any) -> str:
    """把报告序列化为 JSON，非有限数写为 null"""
    return "".join(ReportEncoder().iterencode(_prepare(obj))) + "\n"


class ReportEncoder(json.JSONEncoder):
    """缩进 2 的 JSON 编码器，float 一律写成 17 位有效数字"""

    def __init__(self):
        super().__init__(indent=2, ensure_ascii=False, allow_nan=False)

    def iterencode(self, o: Any, _one_shot: bool = False):
        return self._walk(o, 0)

    def _walk(self, o: Any, depth: int):
        if isinstance(o, float):
            yield format_number(o)
        elif isinstance(o, dict):
            yield from self._container("{", "}", [(self._scalar(str(k)) + self.key_separator, v)
                                                  for k, v in o.items()], depth)
        elif isinstance(o, list):
            yield from self._container("[", "]", [("", v) for v in o], depth)
        else:
            yield self._scalar(o)

    def _scalar(self, o: Any) -> str:
        return "".join(super().iterencode(o))

    def _container(self, open_, close, items, depth: int):
        if not items:
            yield open_ + close
            return
        inner = "\n" + " " * (self.indent * (depth + 1))
        yield open_
        for i, (prefix, value) in enumerate(items):
            yield ("," if i else "") + inner + prefix
            yield from self._walk(value, depth + 1)
        yield "\n" + " " * (self.indent * depth) + close


def write_text(path: Union[str, Path], text: str) -> Path:
    """原子写入：临时文件 + rename"""
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{target.name}.", dir=str(target.parent))
    except OSError as exc:
        raise FileAccessError(f"cannot write {target}: {exc.strerror or exc}", path=str(target))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(tmp, target)
    except OSError as exc:
        Path(tmp).unlink(missing_ok=True)
        raise FileAccessError(f"cannot write {target}: {exc.strerror or exc}", path=str(target))
    logger.debug("wrote %s (%d bytes)", target, len(text))
    return target


def write_json(path: Union[str, Path], obj: Any) -> Path:
    return write_text(path, dumps(obj))


def csv_text(header: Sequence[str], rows: Iterable[Sequence[str]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


def trajectory_csv(trajectory) -> str:
    return csv_text(["t", "U", "W"], trajectory.csv_rows())


def reparam_csv(s: np.ndarray, alpha: np.ndarray, beta: np.ndarray) -> str:
    rows: List[List[str]] = [[format_number(a), format_number(b), format_number(c)]
                             for a, b, c in zip(s, alpha, beta)]
    return csv_text(["s", "alpha", "beta"], rows)

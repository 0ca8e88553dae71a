"""Report documents and CSV tables written by the command-line tools.

Reports are JSON with sorted keys and every float printed at 17
significant digits, so writing and reading a report is lossless and the
same inputs always produce byte-identical files.  Non-finite numbers are
written as the tokens ``NaN``, ``Infinity`` and ``-Infinity``, which the
standard :mod:`json` reader accepts.
"""

from __future__ import annotations

import csv
import json
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike

__all__ = [
    "SCHEMA_VERSION",
    "Report",
    "dumps",
    "format_float",
    "write_report",
    "read_report",
    "write_curves",
    "write_csv",
    "TABLE1_COLUMNS",
    "table2_columns",
]

SCHEMA_VERSION = "1"

TABLE1_COLUMNS = ("n", "penalty", "covariance", "C", "I", "MRME", "RMSE")


def table2_columns(coefficients: Sequence[int] = (1, 2, 5)) -> tuple[str, ...]:
    cols = ["covariance", "n", "penalty"]
    for k in coefficients:
        cols += [f"beta{k}_SD", f"beta{k}_SD_m", f"beta{k}_SD_mad"]
    return tuple(cols)


def format_float(x: float) -> str:
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    text = format(x, ".17g")
    # Keep floats distinguishable from integers when read back.
    return text + ".0" if text.lstrip("-").isdigit() else text


def _plain(obj: object) -> object:
    """Convert numpy containers and scalars to builtin types."""
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Mapping):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, Path):
        return str(obj)
    return obj


def _encode(obj: object, indent: int, level: int, out: list[str]) -> None:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None or isinstance(obj, (bool, str)):
        out.append(json.dumps(obj))
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, float):
        out.append(format_float(obj))
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        for i, key in enumerate(sorted(obj)):
            out.append(f"{pad}{json.dumps(key)}: ")
            _encode(obj[key], indent, level + 1, out)
            out.append(",\n" if i < len(obj) - 1 else "\n")
        out.append(end + "}")
    elif isinstance(obj, list):
        if not obj:
            out.append("[]")
            return
        out.append("[\n")
        for i, item in enumerate(obj):
            out.append(pad)
            _encode(item, indent, level + 1, out)
            out.append(",\n" if i < len(obj) - 1 else "\n")
        out.append(end + "]")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj: object, indent: int = 2) -> str:
    """Deterministic JSON text for ``obj`` (sorted keys, 17-digit floats)."""
    out: list[str] = []
    _encode(_plain(obj), indent, 0, out)
    return "".join(out) + "\n"


@dataclass(frozen=True)
class Report:
    """One command's result document.

    ``results`` holds the command's estimates (coefficients, SEs, active
    flags, tuning path, curve file reference); ``diagnostics`` holds solver
    and data facts such as iteration counts and condition numbers.
    """

    command: str
    results: dict[str, object] = field(default_factory=dict)
    diagnostics: dict[str, object] = field(default_factory=dict)
    schema_version: str = SCHEMA_VERSION

    def to_dict(self) -> dict[str, object]:
        return {
            "schema_version": self.schema_version,
            "command": self.command,
            "results": _plain(self.results),
            "diagnostics": _plain(self.diagnostics),
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, object]) -> Report:
        return cls(
            command=str(doc["command"]),
            results=dict(doc.get("results", {})),  # type: ignore[arg-type]
            diagnostics=dict(doc.get("diagnostics", {})),  # type: ignore[arg-type]
            schema_version=str(doc.get("schema_version", SCHEMA_VERSION)),
        )

    def dumps(self) -> str:
        return dumps(self.to_dict())


def write_report(report: Report, path: str | Path) -> None:
    path = Path(path)
    try:
        path.write_text(report.dumps(), encoding="utf-8")
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write report {path}: {exc.strerror}") from exc


def read_report(path: str | Path) -> Report:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(exc.errno, f"cannot read report {path}: {exc.strerror}") from exc
    return Report.from_dict(json.loads(text))


def _cell(value: object) -> str:
    if isinstance(value, (float, np.floating)):
        return format_float(float(value))
    return str(value)


def write_csv(path: str | Path, columns: Sequence[str], rows: Iterable[Sequence[object]]) -> None:
    """Write a header and rows; floats use the report's 17-digit format."""
    path = Path(path)
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow([_cell(v) for v in row])
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write {path}: {exc.strerror}") from exc


def write_curves(
    path: str | Path,
    grid: ArrayLike,
    curves: ArrayLike,
    names: Sequence[str] | None = None,
) -> None:
    """Write ``z, eta_1, ..., eta_d2`` with one row per grid point."""
    grid = np.asarray(grid, dtype=np.float64)
    curves = np.asarray(curves, dtype=np.float64).reshape(grid.shape[0], -1)
    if names is None:
        names = [f"eta_{l + 1}" for l in range(curves.shape[1])]
    rows = (np.concatenate([[z], c]).tolist() for z, c in zip(grid, curves))
    write_csv(path, ["z", *names], rows)

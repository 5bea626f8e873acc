"""Long-format CSV output: one metric per row."""

from __future__ import annotations

import csv
import os
import tempfile
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import Iterable

HEADER = ("experiment", "replication", "iteration", "metric_name", "value", "baseline", "seed")


@dataclass(frozen=True)
class CsvRow:
    experiment: str
    replication: int
    iteration: int
    metric_name: str
    value: float | str
    baseline: str
    seed: int


def format_value(v) -> str:
    if isinstance(v, str):
        return v
    return "%.17g" % float(v)


def _parse_value(raw: str) -> float | str:
    try:
        return float(raw)
    except ValueError:
        return raw  # categorical metrics such as a final-policy label


def write_csv(path, rows: Iterable[CsvRow]) -> Path:
    """Write atomically: a temp file in the target directory, then ``os.replace``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(HEADER)
            for r in rows:
                rec = list(astuple(r))
                rec[4] = format_value(rec[4])
                w.writerow(rec)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def read_csv(path) -> list[CsvRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != HEADER:
            raise ValueError(f"unexpected header {header}")
        out = []
        for rec in reader:
            exp, rep, it, name, val, base, seed = rec
            out.append(CsvRow(exp, int(rep), int(it), name, _parse_value(val), base, int(seed)))
    return out


assert tuple(f.name for f in fields(CsvRow)) == HEADER

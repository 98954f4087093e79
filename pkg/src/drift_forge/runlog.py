"""Time-stamped simulation records shared by the data generator and the
closed-loop controller harness."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

RUN_COLUMNS = [
    "t", "r", "v", "beta", "s", "e", "dpsi",
    "delta", "fxf", "fxr",
    "fyf", "fyr", "fzf", "fzr", "tire_temp",
    "region", "replan", "iterations", "solve_time", "converged",
]
_FLOAT_COLUMNS = [c for c in RUN_COLUMNS if c not in
                  ("region", "replan", "iterations", "converged")]


class RunLogFormatError(ValueError):
    pass


@dataclass
class RunLog:
    """Columnar log with uniform dt and monotone t."""

    columns: dict = field(default_factory=lambda: {c: [] for c in RUN_COLUMNS})
    meta: dict = field(default_factory=dict)

    def append(self, **kwargs) -> None:
        for c in RUN_COLUMNS:
            self.columns[c].append(kwargs.get(c, 0 if c in ("replan", "iterations", "converged") else 0.0))

    def __len__(self) -> int:
        return len(self.columns["t"])

    def array(self, name: str) -> np.ndarray:
        return np.asarray(self.columns[name], dtype=float)

    def regions(self) -> list[str]:
        return list(self.columns["region"])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(RUN_COLUMNS)
            n = len(self)
            for i in range(n):
                row = []
                for c in RUN_COLUMNS:
                    val = self.columns[c][i]
                    if c == "region":
                        row.append(val)
                    elif c in ("replan", "iterations", "converged"):
                        row.append(str(int(val)))
                    else:
                        row.append(f"{float(val):.17g}")
                w.writerow(row)
        meta_path = str(path) + ".meta.json"
        with open(meta_path, "w") as fh:
            json.dump(self.meta, fh, indent=1, sort_keys=True)
            fh.write("\n")


def read_run_csv(path) -> RunLog:
    log = RunLog()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise RunLogFormatError(f"{path}: empty file") from None
        if header != RUN_COLUMNS:
            raise RunLogFormatError(f"{path}: unexpected header {header}")
        for ln, row in enumerate(reader, start=2):
            if len(row) != len(RUN_COLUMNS):
                raise RunLogFormatError(
                    f"{path}: line {ln}: expected {len(RUN_COLUMNS)} columns, got {len(row)}")
            for c, val in zip(RUN_COLUMNS, row):
                if c == "region":
                    log.columns[c].append(val)
                elif c in ("replan", "iterations", "converged"):
                    log.columns[c].append(int(val))
                else:
                    try:
                        log.columns[c].append(float(val))
                    except ValueError:
                        raise RunLogFormatError(f"{path}: line {ln}: bad float {val!r}") from None
    try:
        with open(str(path) + ".meta.json") as fh:
            log.meta = json.load(fh)
    except OSError:
        log.meta = {}
    return log

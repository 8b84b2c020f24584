"""Per-iteration run traces and their CSV serialization.

The CSV layout is part of the package contract: '#'-prefixed metadata
lines (key: value), one header row, then one row per iteration with
floats printed at 17 significant digits so that reruns are comparable
byte for byte.
"""

from __future__ import annotations

import numpy as np

COLUMNS = (
    "k", "objective", "objective_gap", "rel_error",
    "lambda_min", "lambda_max", "spread", "forward_evals", "wall_time_s",
)
_INT_COLUMNS = {"k", "forward_evals"}


def format_float(v: float) -> str:
    return "%.17g" % v


class RunTrace:
    """Append-only record of one solver run.

    Row k describes the iterate *before* update k (row 0 is the initial
    state); `final` carries the metrics of the last iterate produced by
    the run, which is not part of the per-iteration rows.
    """

    def __init__(self, header: dict):
        self.header = dict(header)
        self._rows = {name: [] for name in COLUMNS}
        self.final: dict = {}

    def append(self, **kwargs) -> None:
        for name in COLUMNS:
            self._rows[name].append(kwargs[name])

    def __len__(self) -> int:
        return len(self._rows["k"])

    def column(self, name: str) -> np.ndarray:
        if name not in self._rows:
            raise KeyError(name)
        dtype = int if name in _INT_COLUMNS else float
        return np.asarray(self._rows[name], dtype=dtype)

    def to_csv(self) -> str:
        lines = [f"# {key}: {value}" for key, value in self.header.items()]
        lines.append(",".join(COLUMNS))
        cols = [self._rows[name] for name in COLUMNS]
        for values in zip(*cols):
            parts = []
            for name, v in zip(COLUMNS, values):
                parts.append(str(int(v)) if name in _INT_COLUMNS else format_float(v))
            lines.append(",".join(parts))
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_csv())

    @classmethod
    def load(cls, path) -> "RunTrace":
        header = {}
        rows = None
        with open(path) as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                if line.startswith("#"):
                    key, _, value = line[1:].partition(":")
                    header[key.strip()] = value.strip()
                    continue
                if rows is None:
                    names = tuple(line.split(","))
                    if names != COLUMNS:
                        raise ValueError(f"unexpected trace columns: {names}")
                    rows = {name: [] for name in COLUMNS}
                    continue
                for name, field in zip(COLUMNS, line.split(",")):
                    rows[name].append(field)
        trace = cls(header)
        if rows is not None:
            n = len(rows["k"])
            for i in range(n):
                trace.append(**{
                    name: (int(rows[name][i]) if name in _INT_COLUMNS
                           else float(rows[name][i]))
                    for name in COLUMNS
                })
        return trace

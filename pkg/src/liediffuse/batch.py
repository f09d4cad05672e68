"""Sample batches in Cartesian coordinates and their CSV round trip."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SchemaError


@dataclass
class SampleBatch:
    """Matrix of states (one sample per row) plus provenance metadata."""

    x: np.ndarray
    group_id: str | None = None
    time_index: int | None = None
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]


def save_csv(batch: SampleBatch, path) -> None:
    """Write a batch with header x1..xn at full float precision."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(f"x{i + 1}" for i in range(batch.dim)) + "\n")
        for row in batch.x:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def load_csv(path) -> SampleBatch:
    """Read a batch written by save_csv; raises SchemaError with the line."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        cols = header.split(",") if header else []
        if not cols or any(c != f"x{i + 1}" for i, c in enumerate(cols)):
            raise SchemaError(f"bad header {header!r}", line=1)
        dim = len(cols)
        rows = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != dim:
                raise SchemaError(
                    f"expected {dim} columns, got {len(parts)}", line=lineno
                )
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise SchemaError(f"unparseable value: {exc}", line=lineno) from exc
    x = np.array(rows, dtype=float).reshape(len(rows), dim)
    return SampleBatch(x=x)

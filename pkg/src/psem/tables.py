"""Aggregated cell representation of a dataset.

Every estimator in this package depends on the data only through the
contingency cells (z, y_tau, marker state, y) and the per-cell sampling
weight, so datasets are collapsed to at most 32 cells up front. This keeps
replicated simulation fits cheap while leaving the estimating-function
algebra identical to a per-record formulation (cells carry frequency
counts).

Marker state codes: 0 negative, 1 positive, 2 undefined (early event),
3 missing (not measured).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .records import Marker, ObservedRecord

S_NEG, S_POS, S_UNDEF, S_MISS = 0, 1, 2, 3

_MARKER_CODE = {
    Marker.NEGATIVE: S_NEG,
    Marker.POSITIVE: S_POS,
    Marker.UNDEFINED: S_UNDEF,
    Marker.MISSING: S_MISS,
}


@dataclass
class CellTable:
    z: np.ndarray          # arm per cell
    yt: np.ndarray         # early-event indicator per cell
    s: np.ndarray          # marker state code per cell
    y: np.ndarray          # final outcome per cell
    count: np.ndarray      # frequency of the cell (float)
    pi: np.ndarray = field(default=None)   # sampling probability (NaN if n/a)
    w: np.ndarray = field(default=None)    # 1/pi where defined, else 1.0

    def __post_init__(self):
        if self.pi is None:
            self.pi = np.full(self.z.shape, np.nan)
        if self.w is None:
            self.w = np.ones_like(self.count, dtype=float)

    @property
    def n(self) -> float:
        return float(self.count.sum())

    def subset_count(self, mask) -> float:
        return float(self.count[mask].sum())


def cell_code(z, yt, s, y):
    return ((z * 2 + yt) * 4 + s) * 2 + y


def from_records(records) -> CellTable:
    counts: dict[tuple[int, int, int, int], int] = {}
    for r in records:
        if not isinstance(r, ObservedRecord):
            raise DataError(f"expected ObservedRecord, got {type(r).__name__}")
        key = (r.z, r.y_tau, _MARKER_CODE[r.marker], r.y)
        counts[key] = counts.get(key, 0) + 1
    return _from_count_map(counts)


def from_arrays(z, yt, s, y) -> CellTable:
    """Aggregate parallel integer arrays (marker state already coded)."""
    code = cell_code(np.asarray(z, dtype=np.int64), np.asarray(yt, dtype=np.int64),
                     np.asarray(s, dtype=np.int64), np.asarray(y, dtype=np.int64))
    tallies = np.bincount(code, minlength=32)
    counts = {}
    for code_val in np.nonzero(tallies)[0]:
        y_v = code_val % 2
        s_v = (code_val // 2) % 4
        yt_v = (code_val // 8) % 2
        z_v = code_val // 16
        counts[(int(z_v), int(yt_v), int(s_v), int(y_v))] = int(tallies[code_val])
    return _from_count_map(counts)


def _from_count_map(counts) -> CellTable:
    if not counts:
        raise DataError("empty dataset")
    keys = sorted(counts)
    z = np.array([k[0] for k in keys], dtype=np.int64)
    yt = np.array([k[1] for k in keys], dtype=np.int64)
    s = np.array([k[2] for k in keys], dtype=np.int64)
    y = np.array([k[3] for k in keys], dtype=np.int64)
    count = np.array([float(counts[k]) for k in keys])
    return CellTable(z=z, yt=yt, s=s, y=y, count=count)

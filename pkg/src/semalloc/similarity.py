"""Semantic similarity lookup tables and image-quality metrics.

Similarity xi(O, SNR) has no closed form; the allocator only ever reads it
from a :class:`SimilarityTable`.  Tables are either generated from a
smooth logistic surrogate or loaded from CSV (e.g. measured with a real
encoder/decoder).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

# 1 dB / 0.05 step default grids
DEFAULT_SNR_RANGE_DB = (-10.0, 40.0, 1.0)
DEFAULT_COMPRESSION_RANGE = (0.05, 1.0, 0.05)
INFINITE_PSNR = math.inf
CSV_CORNER = "snr_db\\O"

_GRID_EPS = 1e-9


class TableError(ValueError):
    pass


class BelowTableRange(TableError):
    pass


@dataclass(frozen=True)
class SurrogateParams:
    compression_power: float = 2.0
    snr_midpoint_db: float = 5.0
    snr_scale_db: float = 3.0
    floor: float = 0.05

    def __post_init__(self):
        if not self.compression_power > 0:
            raise ValueError("compression_power must be positive")
        if not self.snr_scale_db > 0:
            raise ValueError("snr_scale_db must be positive")
        if not 0 <= self.floor < 1:
            raise ValueError("floor must lie in [0, 1)")


def _logistic(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def surrogate_xi(compression, snr_db, params: SurrogateParams = SurrogateParams()):
    """Smooth stand-in for a measured similarity curve.

    ``floor + (1 - floor) * (1 - O**p) * logistic((snr_db - x0) / w)``;
    decreasing in O, increasing in SNR, equal to ``floor`` at O = 1.
    """
    o = np.asarray(compression, dtype=float)
    if np.any(o <= 0) or np.any(o > 1):
        raise ValueError("compression rate must lie in (0, 1]")
    s = _logistic((np.asarray(snr_db, dtype=float) - params.snr_midpoint_db) / params.snr_scale_db)
    xi = params.floor + (1.0 - params.floor) * (1.0 - o ** params.compression_power) * s
    return float(xi) if xi.ndim == 0 else xi


def make_grid(start: float, stop: float, step: float) -> np.ndarray:
    """Inclusive grid, rounded to kill accumulated floating-point drift."""
    if step <= 0:
        raise TableError("grid step must be positive")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    if count < 1:
        raise TableError("empty grid")
    return np.round(start + step * np.arange(count), 10)


@dataclass(frozen=True)
class SimilarityTable:
    snr_grid_db: np.ndarray
    compression_grid: np.ndarray
    xi_values: np.ndarray

    def __post_init__(self):
        snr = np.array(self.snr_grid_db, dtype=float)
        comp = np.array(self.compression_grid, dtype=float)
        xi = np.array(self.xi_values, dtype=float)
        if snr.ndim != 1 or comp.ndim != 1 or snr.size == 0 or comp.size == 0:
            raise TableError("grids must be non-empty vectors")
        if np.any(np.diff(snr) <= 0) or np.any(np.diff(comp) <= 0):
            raise TableError("grid not ascending")
        if not np.all(np.isfinite(snr)):
            raise TableError("SNR grid must be finite")
        if comp[0] <= 0 or comp[-1] > 1:
            raise TableError("compression grid must lie in (0, 1]")
        if xi.shape != (snr.size, comp.size):
            raise TableError(f"xi matrix is {xi.shape}, grids need {(snr.size, comp.size)}")
        if not np.all(np.isfinite(xi)) or np.any(xi < 0) or np.any(xi > 1):
            raise TableError("similarity out of range")
        for a in (snr, comp, xi):
            a.setflags(write=False)
        object.__setattr__(self, "snr_grid_db", snr)
        object.__setattr__(self, "compression_grid", comp)
        object.__setattr__(self, "xi_values", xi)

    @property
    def shape(self) -> tuple[int, int]:
        return self.xi_values.shape

    def row_index(self, snr_db: float) -> int:
        """Largest grid row with SNR <= ``snr_db`` (never credits unearned SNR)."""
        if not snr_db >= self.snr_grid_db[0] - _GRID_EPS:
            raise BelowTableRange(f"SNR {snr_db:.3f} dB is below table range "
                                  f"(starts at {self.snr_grid_db[0]:g} dB)")
        return int(np.searchsorted(self.snr_grid_db, snr_db + _GRID_EPS, side="right") - 1)

    def column_index(self, compression: float) -> int:
        return int(np.argmin(np.abs(self.compression_grid - compression)))

    def row(self, snr_db: float) -> np.ndarray:
        return self.xi_values[self.row_index(snr_db)]

    def is_monotone(self) -> bool:
        """Rows strictly decreasing in O; columns with O < 1 strictly increasing in SNR."""
        xi = self.xi_values
        rows_ok = np.all(np.diff(xi, axis=1) < 0)
        inner = xi[:, self.compression_grid < 1]
        cols_ok = np.all(np.diff(inner, axis=0) > 0)
        return bool(rows_ok and cols_ok)


def generate_table(snr_grid_db=None, compression_grid=None,
                   params: SurrogateParams = SurrogateParams()) -> SimilarityTable:
    snr = make_grid(*DEFAULT_SNR_RANGE_DB) if snr_grid_db is None else np.asarray(snr_grid_db, float)
    comp = (make_grid(*DEFAULT_COMPRESSION_RANGE) if compression_grid is None
            else np.asarray(compression_grid, float))
    if comp.size and (comp.min() <= 0 or comp.max() > 1):
        raise TableError("compression grid must lie in (0, 1]")
    xi = surrogate_xi(comp[None, :], snr[:, None], params)
    return SimilarityTable(snr, comp, np.atleast_2d(xi))


def save_table(table: SimilarityTable) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([CSV_CORNER] + [f"{o:.6f}" for o in table.compression_grid])
    for s, row in zip(table.snr_grid_db, table.xi_values):
        writer.writerow([f"{s:.6f}"] + [f"{v:.6f}" for v in row])
    return buf.getvalue()


def load_table(csv_text: str) -> SimilarityTable:
    rows = [r for r in csv.reader(io.StringIO(csv_text)) if r]
    if len(rows) < 2:
        raise TableError("table needs a header and at least one row")
    header = rows[0]
    if header[0].strip() != CSV_CORNER:
        raise TableError(f"first cell must be {CSV_CORNER!r}")
    width = len(header)
    for k, r in enumerate(rows[1:], start=2):
        if len(r) != width:
            raise TableError(f"ragged row at line {k}")

    def num(cell, where):
        try:
            v = float(cell)
        except ValueError:
            raise TableError(f"non-numeric cell {cell!r} at {where}") from None
        if not math.isfinite(v):
            raise TableError(f"non-finite cell at {where}")
        return v

    comp = np.array([num(c, f"header column {j}") for j, c in enumerate(header[1:], 1)])
    snr = np.array([num(r[0], f"line {k}") for k, r in enumerate(rows[1:], 2)])
    xi = np.array([[num(c, f"line {k}") for c in r[1:]] for k, r in enumerate(rows[1:], 2)])
    return SimilarityTable(snr, comp, xi)


def lookup_xi(table: SimilarityTable, snr_db: float, compression: float) -> float:
    return float(table.xi_values[table.row_index(snr_db), table.column_index(compression)])


def candidate_entries(table: SimilarityTable, snr_db: float, xi_min: float, xi_max: float):
    """In-band (xi, O) pairs of the floored SNR row, best similarity first.

    Ties in xi prefer the larger compression rate (less data to send).
    """
    if not 0 <= xi_min <= xi_max <= 1:
        raise ValueError("need 0 <= xi_min <= xi_max <= 1")
    row = table.row(snr_db)
    comp = table.compression_grid
    keep = np.flatnonzero((row >= xi_min) & (row <= xi_max))
    order = sorted(keep, key=lambda j: (-row[j], -comp[j]))
    return [(float(row[j]), float(comp[j])) for j in order]


# --------------------------------------------------------------------------
# image metrics
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ImagePair:
    source: np.ndarray
    reconstruction: np.ndarray
    max_pixel: float = 255.0

    def __post_init__(self):
        src = np.asarray(self.source, dtype=float)
        rec = np.asarray(self.reconstruction, dtype=float)
        if src.shape != rec.shape:
            raise ValueError(f"shape mismatch: {src.shape} vs {rec.shape}")
        for a in (src, rec):
            if np.any(a < 0) or np.any(a > self.max_pixel):
                raise ValueError("pixel values outside [0, max_pixel]")
        object.__setattr__(self, "source", src)
        object.__setattr__(self, "reconstruction", rec)


def mse(pair: ImagePair) -> float:
    return float(np.mean((pair.source - pair.reconstruction) ** 2))


def psnr(pair: ImagePair) -> float:
    """Peak SNR in dB; identical images give :data:`INFINITE_PSNR`."""
    err = mse(pair)
    if err == 0:
        return INFINITE_PSNR
    return 10.0 * math.log10(pair.max_pixel**2 / err)


def psnr_to_similarity(psnr_db: float, cap_db: float = 50.0) -> float:
    if not cap_db > 0:
        raise ValueError("cap_db must be positive")
    if psnr_db == INFINITE_PSNR:
        return 1.0
    return min(1.0, max(0.0, psnr_db / cap_db))

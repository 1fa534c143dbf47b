"""Binary marker matrices: parsing, mean imputation, Manhattan distances and
bootstrap resampling of rows.

Missing cells are held as ``NaN`` in a float array. Once imputed, cells are
real numbers in ``[0, 1]`` and every downstream computation works on reals.
"""
import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import pdist

from ._rng import stream

logger = logging.getLogger(__name__)

DEFAULT_MISSING = "NA"


class MarkerParseError(ValueError):
    """A cell of a marker file could not be read as 0, 1 or the missing token."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class MarkerValidationError(ValueError):
    """A marker matrix violates a structural requirement."""


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MarkerMatrix:
    """Observation-by-marker matrix.

    Parameters
    ----------
    cells : array_like, shape (n_rows, n_cols)
        Marker values. ``NaN`` marks a missing cell.
    row_ids : sequence of str, optional
        Observation labels; defaults to ``"0", "1", ...``.
    col_ids : sequence of str, optional
        Marker names; defaults to ``"m0", "m1", ...``.
    imputed : bool
        If False every cell must be 0, 1 or missing. If True no cell may be
        missing and every cell lies in ``[0, 1]``.
    """

    cells: np.ndarray
    row_ids: tuple = None
    col_ids: tuple = None
    imputed: bool = False

    def __post_init__(self):
        cells = _frozen(self.cells)
        if cells.ndim != 2:
            raise MarkerValidationError(f"cells must be 2-D, got shape {cells.shape}")
        n, p = cells.shape
        if n < 2:
            raise MarkerValidationError(f"need at least 2 observations, got {n}")
        if p < 1:
            raise MarkerValidationError("need at least 1 marker")
        row_ids = tuple(str(r) for r in self.row_ids) if self.row_ids is not None \
            else tuple(str(i) for i in range(n))
        col_ids = tuple(str(c) for c in self.col_ids) if self.col_ids is not None \
            else tuple(f"m{j}" for j in range(p))
        if len(row_ids) != n or len(col_ids) != p:
            raise MarkerValidationError("row_ids/col_ids length does not match cells")

        missing = np.isnan(cells)
        if self.imputed:
            if missing.any():
                raise MarkerValidationError("imputed matrix contains missing cells")
            if (cells < 0).any() or (cells > 1).any():
                raise MarkerValidationError("imputed cells must lie in [0, 1]")
        else:
            observed = cells[~missing]
            if not np.isin(observed, (0.0, 1.0)).all():
                raise MarkerValidationError("raw cells must be 0, 1 or missing")
        empty = np.flatnonzero(missing.all(axis=0))
        if empty.size:
            raise MarkerValidationError(
                f"column {col_ids[empty[0]]!r} is entirely missing")

        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "row_ids", row_ids)
        object.__setattr__(self, "col_ids", col_ids)

    @property
    def n_rows(self):
        return self.cells.shape[0]

    @property
    def n_cols(self):
        return self.cells.shape[1]

    @property
    def shape(self):
        return self.cells.shape

    @property
    def missing_fraction(self):
        return float(np.isnan(self.cells).mean())


@dataclass(frozen=True, eq=False)
class CondensedDistances:
    """Upper-triangle pairwise distances in ``(i, j), i < j`` row-major order."""

    n: int
    values: np.ndarray

    def __post_init__(self):
        values = _frozen(self.values)
        if values.shape != (self.n * (self.n - 1) // 2,):
            raise ValueError(f"expected {self.n * (self.n - 1) // 2} distances for n={self.n}, "
                             f"got shape {values.shape}")
        if (values < 0).any():
            raise ValueError("distances must be nonnegative")
        object.__setattr__(self, "values", values)

    def index(self, i, j):
        """Position of pair ``(i, j)`` in :attr:`values`."""
        if i == j:
            raise IndexError("diagonal is not stored")
        if i > j:
            i, j = j, i
        return self.n * i - i * (i + 1) // 2 + (j - i - 1)

    def __getitem__(self, ij):
        i, j = ij
        if i == j:
            return 0.0
        return float(self.values[self.index(i, j)])

    def square(self):
        """Full symmetric ``n x n`` matrix with a zero diagonal."""
        out = np.zeros((self.n, self.n))
        iu = np.triu_indices(self.n, 1)
        out[iu] = self.values
        out.T[iu] = self.values
        return out

    def pairs(self):
        """Row and column index arrays matching the order of :attr:`values`."""
        return np.triu_indices(self.n, 1)


@dataclass(frozen=True, eq=False)
class BootstrapSample:
    data: MarkerMatrix
    source_indices: np.ndarray
    replicate_id: int
    seed: int = field(default=0)


def _sniff_delimiter(path):
    return "\t" if Path(path).suffix.lower() in (".tsv", ".tab", ".txt") else ","


def _unit_float(tok):
    try:
        v = float(tok)
    except ValueError:
        return None
    return v if 0.0 <= v <= 1.0 else None


def load_markers(path, delimiter=None, missing=DEFAULT_MISSING, imputed=False):
    """Read a delimited marker file.

    The first line holds marker names (its first cell labels the id column);
    each following line is an observation id followed by one cell per marker.
    With ``imputed=True`` cells may be any number in ``[0, 1]`` (as written
    for an imputed matrix) and the result is flagged imputed.

    Raises
    ------
    MarkerParseError
        A cell is not ``0``, ``1`` or the missing token, or a line has the
        wrong number of fields.
    MarkerValidationError
        A column is entirely missing, or there are fewer than two rows.
    """
    delimiter = delimiter or _sniff_delimiter(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise MarkerParseError(f"{path}: empty file") from None
        col_ids = [c.strip() for c in header[1:]]
        p = len(col_ids)
        row_ids, rows = [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or (len(rec) == 1 and not rec[0].strip()):
                continue
            if len(rec) != p + 1:
                raise MarkerParseError(
                    f"{path}:{lineno}: expected {p + 1} fields, got {len(rec)}", row=lineno)
            row = np.empty(p)
            for j, raw in enumerate(rec[1:]):
                tok = raw.strip()
                if tok == "1":
                    row[j] = 1.0
                elif tok == "0":
                    row[j] = 0.0
                elif tok == missing and not imputed:
                    row[j] = np.nan
                elif imputed and _unit_float(tok) is not None:
                    row[j] = _unit_float(tok)
                else:
                    raise MarkerParseError(
                        f"{path}:{lineno}: bad cell {tok!r} in column {col_ids[j]!r} "
                        f"(row {rec[0]!r})", row=lineno, column=col_ids[j])
            row_ids.append(rec[0].strip())
            rows.append(row)
    if not rows:
        raise MarkerValidationError(f"{path}: no observations")
    m = MarkerMatrix(np.vstack(rows), row_ids=row_ids, col_ids=col_ids, imputed=imputed)
    logger.info("loaded %s: %d x %d, %.1f%% missing", path, m.n_rows, m.n_cols,
                100 * m.missing_fraction)
    return m


def write_markers(m, path, delimiter=None, missing=DEFAULT_MISSING, precision=6):
    """Write a matrix in the format read by :func:`load_markers`.

    Imputed (fractional) cells are written with ``precision`` significant
    digits; 0/1 cells are written as integers.
    """
    delimiter = delimiter or _sniff_delimiter(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(["id", *m.col_ids])
        for rid, row in zip(m.row_ids, m.cells):
            w.writerow([rid, *(_fmt_cell(v, missing, precision) for v in row)])


def _fmt_cell(v, missing, precision):
    if np.isnan(v):
        return missing
    if v == 0.0 or v == 1.0:
        return str(int(v))
    return f"{v:.{precision}g}"


def impute_mean(m):
    """Replace each missing cell by its column's mean over observed cells."""
    if m.imputed:
        return m
    cells = np.array(m.cells)
    missing = np.isnan(cells)
    counts = (~missing).sum(axis=0)
    if (counts == 0).any():
        raise MarkerValidationError("cannot impute an entirely missing column")
    means = np.nansum(cells, axis=0) / counts
    cells[missing] = np.take(means, np.nonzero(missing)[1])
    return MarkerMatrix(cells, row_ids=m.row_ids, col_ids=m.col_ids, imputed=True)


def manhattan_distances(m):
    """Pairwise L1 distances between rows of an imputed matrix."""
    if not m.imputed:
        raise MarkerValidationError("distances require an imputed matrix")
    return CondensedDistances(m.n_rows, pdist(m.cells, metric="cityblock"))


def write_distances(d, path, delimiter="\t"):
    """Write distances as ``i, j, d`` lines (0-based indices, ``i < j``)."""
    i, j = d.pairs()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(["i", "j", "d"])
        for a, b, v in zip(i.tolist(), j.tolist(), d.values.tolist()):
            w.writerow([a, b, repr(v)])


def bootstrap_indices(n, replicate_id, master_seed):
    """``n`` row indices drawn uniformly with replacement.

    The stream depends only on ``(master_seed, replicate_id)``.
    """
    if n < 1:
        raise ValueError("n must be positive")
    return stream(master_seed, 0, replicate_id).integers(0, n, size=n)


def bootstrap_rows(m, replicate_id, master_seed):
    """Resample the rows of ``m`` with replacement."""
    if not m.imputed:
        raise MarkerValidationError("bootstrap requires an imputed matrix")
    idx = bootstrap_indices(m.n_rows, replicate_id, master_seed)
    data = MarkerMatrix(m.cells[idx], row_ids=[m.row_ids[i] for i in idx],
                        col_ids=m.col_ids, imputed=True)
    idx.setflags(write=False)
    return BootstrapSample(data, idx, int(replicate_id), int(master_seed))

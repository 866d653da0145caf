"""Spatial histograms: face counts plus vertical/horizontal edge crossings.

Layout is row-major.  ``edges_v[i, j]`` is the edge between cells ``(i, j)``
and ``(i, j + 1)``; ``edges_h[i, j]`` joins ``(i, j)`` and ``(i + 1, j)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionError, ParseError, ValidationError

SCHEMA_VERSION = 1
CONSISTENCY_TOL = 1e-9

Cell = tuple[int, int]
# ("v", i, j) -> edges_v[i, j]; ("h", i, j) -> edges_h[i, j]
EdgeIndex = tuple[str, int, int]


def is_power_of_two(x: int) -> bool:
    return x >= 1 and (x & (x - 1)) == 0


def _frozen(a, shape, name: str) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    if arr.size == 0:
        arr = arr.reshape(shape)
    if arr.shape != shape:
        raise DimensionError(f"{name} has shape {arr.shape}, expected {shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries")
    if np.any(arr < 0):
        raise ValidationError(f"{name} contains negative entries")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class SpatialHistogram:
    """Immutable spatial histogram.

    ``normalized`` is the optional per-face sum of ``1/len`` over visiting
    paths (total mass ``n``); the partitioner needs it.  ``k_max`` is the
    longest ingested path, used to calibrate the per-cell Laplace baseline.
    """

    faces: np.ndarray
    edges_v: np.ndarray
    edges_h: np.ndarray
    n: float
    normalized: np.ndarray | None = None
    k_max: int | None = None
    rows: int = field(init=False)
    cols: int = field(init=False)

    def __post_init__(self):
        faces = np.asarray(self.faces)
        if faces.ndim != 2:
            raise DimensionError(f"faces must be 2-D, got {faces.ndim}-D")
        r, c = faces.shape
        # any shape is a valid histogram; ingestion and partitioning need powers of two
        if r < 1 or c < 1:
            raise DimensionError(f"grid {r}x{c} must have at least one cell")
        object.__setattr__(self, "rows", r)
        object.__setattr__(self, "cols", c)
        object.__setattr__(self, "faces", _frozen(faces, (r, c), "faces"))
        object.__setattr__(self, "edges_v", _frozen(self.edges_v, (r, c - 1), "edges_v"))
        object.__setattr__(self, "edges_h", _frozen(self.edges_h, (r - 1, c), "edges_h"))
        if self.normalized is not None:
            object.__setattr__(self, "normalized", _frozen(self.normalized, (r, c), "normalized"))
        n = float(self.n)
        if not np.isfinite(n) or n < 0:
            raise ValidationError(f"n must be a finite non-negative number, got {self.n!r}")
        object.__setattr__(self, "n", n)
        if self.k_max is not None:
            object.__setattr__(self, "k_max", int(self.k_max))

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "SpatialHistogram":
        return cls(np.zeros((rows, cols)), np.zeros((rows, cols - 1)), np.zeros((rows - 1, cols)), 0.0)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def n_entries(self) -> int:
        """Total number of faces plus edges."""
        return self.faces.size + self.edges_v.size + self.edges_h.size

    def flat(self) -> np.ndarray:
        """Faces, then vertical edges, then horizontal edges, row-major."""
        return np.concatenate([self.faces.ravel(), self.edges_v.ravel(), self.edges_h.ravel()])

    @classmethod
    def from_flat(cls, values: np.ndarray, rows: int, cols: int, n: float, **meta) -> "SpatialHistogram":
        nf, nv = rows * cols, rows * (cols - 1)
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (nf + nv + (rows - 1) * cols,):
            raise DimensionError(f"flat vector of length {values.size} does not fit a {rows}x{cols} grid")
        return cls(
            values[:nf].reshape(rows, cols),
            values[nf:nf + nv].reshape(rows, cols - 1),
            values[nf + nv:].reshape(rows - 1, cols),
            n,
            **meta,
        )

    def replace(self, **changes) -> "SpatialHistogram":
        fields = dict(
            faces=self.faces, edges_v=self.edges_v, edges_h=self.edges_h,
            n=self.n, normalized=self.normalized, k_max=self.k_max,
        )
        fields.update(changes)
        return SpatialHistogram(**fields)

    def __add__(self, other: "SpatialHistogram") -> "SpatialHistogram":
        if self.shape != other.shape:
            raise DimensionError(f"cannot add {self.shape} and {other.shape} histograms")
        return SpatialHistogram(
            self.faces + other.faces, self.edges_v + other.edges_v,
            self.edges_h + other.edges_h, self.n + other.n,
        )

    def __mul__(self, a: float) -> "SpatialHistogram":
        if a < 0:
            raise ValidationError("histograms can only be scaled by non-negative factors")
        return SpatialHistogram(self.faces * a, self.edges_v * a, self.edges_h * a, self.n * a)

    __rmul__ = __mul__

    def equals(self, other: "SpatialHistogram") -> bool:
        return (
            self.shape == other.shape
            and self.n == other.n
            and np.array_equal(self.faces, other.faces)
            and np.array_equal(self.edges_v, other.edges_v)
            and np.array_equal(self.edges_h, other.edges_h)
        )


@dataclass(frozen=True)
class RangeQuery:
    """Axis-aligned rectangle of cells; all bounds inclusive."""

    row_lo: int
    row_hi: int
    col_lo: int
    col_hi: int

    def __post_init__(self):
        if min(self.row_lo, self.col_lo) < 0:
            raise ValidationError(f"negative query bound in {self}")
        if self.row_lo > self.row_hi or self.col_lo > self.col_hi:
            raise ValidationError(f"query bounds out of order in {self}")

    def check_bounds(self, rows: int, cols: int) -> None:
        if self.row_hi >= rows or self.col_hi >= cols:
            raise ValidationError(f"{self} exceeds a {rows}x{cols} grid")

    def contains(self, cell: Cell) -> bool:
        return self.row_lo <= cell[0] <= self.row_hi and self.col_lo <= cell[1] <= self.col_hi

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.row_lo, self.row_hi, self.col_lo, self.col_hi)


def _check_path(path: Sequence[Cell], rows: int, cols: int, idx: int) -> list[Cell]:
    cells = [(int(r), int(c)) for r, c in path]
    if not cells:
        raise ValidationError(f"path {idx} is empty")
    seen = set()
    prev = None
    for r, c in cells:
        if not (0 <= r < rows and 0 <= c < cols):
            raise ValidationError(f"path {idx}: cell {(r, c)} outside {rows}x{cols} grid")
        if (r, c) in seen:
            raise ValidationError(f"path {idx}: cell {(r, c)} visited twice")
        if prev is not None and abs(r - prev[0]) + abs(c - prev[1]) != 1:
            raise ValidationError(f"path {idx}: {prev} -> {(r, c)} is not a 4-adjacent step")
        seen.add((r, c))
        prev = (r, c)
    return cells


def build_from_cell_paths(
    paths: Iterable[Sequence[Cell]], rows: int, cols: int, normalize: bool = True
) -> SpatialHistogram:
    """Count face visits and edge crossings of loop-free 4-adjacent paths."""
    if not (is_power_of_two(rows) and is_power_of_two(cols)):
        raise DimensionError(f"grid {rows}x{cols} is not a power of two per side")
    faces = np.zeros((rows, cols))
    ev = np.zeros((rows, cols - 1))
    eh = np.zeros((rows - 1, cols))
    norm = np.zeros((rows, cols)) if normalize else None
    n = 0
    k_max = 0
    for idx, path in enumerate(paths):
        cells = _check_path(path, rows, cols, idx)
        n += 1
        k_max = max(k_max, len(cells))
        w = 1.0 / len(cells)
        for r, c in cells:
            faces[r, c] += 1
            if norm is not None:
                norm[r, c] += w
        for (r0, c0), (r1, c1) in zip(cells, cells[1:]):
            if r0 == r1:
                ev[r0, min(c0, c1)] += 1
            else:
                eh[min(r0, r1), c0] += 1
    return SpatialHistogram(faces, ev, eh, n, normalized=norm, k_max=k_max)


def eval_range_query(h: SpatialHistogram, q: RangeQuery) -> float:
    """Faces inside the rectangle minus edges whose two faces are both inside."""
    q.check_bounds(h.rows, h.cols)
    r0, r1, c0, c1 = q.as_tuple()
    total = h.faces[r0:r1 + 1, c0:c1 + 1].sum()
    total -= h.edges_v[r0:r1 + 1, c0:c1].sum()
    total -= h.edges_h[r0:r1, c0:c1 + 1].sum()
    return float(total)


def _integral(a: np.ndarray) -> np.ndarray:
    out = np.zeros((a.shape[0] + 1, a.shape[1] + 1))
    if a.size:
        out[1:, 1:] = a.cumsum(0).cumsum(1)
    return out


def _box(p: np.ndarray, r0, r1, c0, c1) -> np.ndarray:
    # half-open [r0, r1) x [c0, c1); empty ranges give 0
    return p[r1, c1] - p[r0, c1] - p[r1, c0] + p[r0, c0]


def as_query_array(queries) -> np.ndarray:
    """Coerce RangeQuery objects or (r0, r1, c0, c1) rows to an ``(m, 4)`` int array."""
    if isinstance(queries, np.ndarray):
        arr = queries.astype(np.int64, copy=False)
    else:
        arr = np.array([q.as_tuple() if isinstance(q, RangeQuery) else tuple(q) for q in queries], dtype=np.int64)
    return arr.reshape(-1, 4)


def answer_queries(h: SpatialHistogram, queries, faces_only: bool = False) -> np.ndarray:
    """Vectorized ``eval_range_query`` over many rectangles via summed-area tables."""
    qa = as_query_array(queries)
    if qa.size and (qa.min() < 0 or qa[:, 1].max() >= h.rows or qa[:, 3].max() >= h.cols):
        raise ValidationError(f"query set exceeds a {h.rows}x{h.cols} grid")
    r0, r1, c0, c1 = qa[:, 0], qa[:, 1] + 1, qa[:, 2], qa[:, 3] + 1
    ans = _box(_integral(h.faces), r0, r1, c0, c1)
    if not faces_only:
        ans = ans - _box(_integral(h.edges_v), r0, r1, c0, np.maximum(c1 - 1, c0))
        ans = ans - _box(_integral(h.edges_h), r0, np.maximum(r1 - 1, r0), c0, c1)
    return ans


def check_consistency(h: SpatialHistogram, tol: float = CONSISTENCY_TOL) -> list[EdgeIndex]:
    """Edges exceeding the smaller of their two adjacent faces."""
    f = h.faces
    bad_v = np.argwhere(h.edges_v > np.minimum(f[:, :-1], f[:, 1:]) + tol)
    bad_h = np.argwhere(h.edges_h > np.minimum(f[:-1, :], f[1:, :]) + tol)
    return [("v", int(i), int(j)) for i, j in bad_v] + [("h", int(i), int(j)) for i, j in bad_h]


def edge_faces(edge: EdgeIndex) -> tuple[Cell, Cell]:
    kind, i, j = edge
    return ((i, j), (i, j + 1)) if kind == "v" else ((i, j), (i + 1, j))


# -- serialization -----------------------------------------------------------

def _matrix(doc: dict, key: str, shape: tuple[int, int]) -> np.ndarray:
    if key not in doc:
        raise ParseError(f"histogram document lacks '{key}'")
    rows = doc[key]
    if not isinstance(rows, list) or len(rows) != shape[0]:
        raise DimensionError(f"'{key}' must have {shape[0]} rows")
    for row in rows:
        if not isinstance(row, list) or len(row) != shape[1]:
            raise DimensionError(f"every row of '{key}' must have {shape[1]} entries")
        for v in row:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ParseError(f"'{key}' contains non-numeric entry {v!r}")
    return np.array(rows, dtype=np.float64).reshape(shape)


def to_dict(h: SpatialHistogram) -> dict:
    doc = {
        "version": SCHEMA_VERSION,
        "rows": h.rows,
        "cols": h.cols,
        "n": h.n,
        "faces": h.faces.tolist(),
        "edges_v": h.edges_v.tolist(),
        "edges_h": h.edges_h.tolist(),
    }
    if h.normalized is not None:
        doc["normalized"] = h.normalized.tolist()
    if h.k_max is not None:
        doc["k_max"] = h.k_max
    return doc


def from_dict(doc: dict) -> SpatialHistogram:
    if not isinstance(doc, dict):
        raise ParseError("histogram document must be a JSON object")
    if doc.get("version") != SCHEMA_VERSION:
        raise ParseError(f"unsupported histogram version {doc.get('version')!r}")
    try:
        r, c, n = int(doc["rows"]), int(doc["cols"]), doc["n"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"histogram header malformed: {exc}") from exc
    if r < 1 or c < 1:
        raise DimensionError(f"grid {r}x{c} must have at least one cell")
    if isinstance(n, bool) or not isinstance(n, (int, float)):
        raise ParseError(f"'n' must be a number, got {n!r}")
    meta = {}
    if "normalized" in doc:
        meta["normalized"] = _matrix(doc, "normalized", (r, c))
    if doc.get("k_max") is not None:
        meta["k_max"] = int(doc["k_max"])
    return SpatialHistogram(
        _matrix(doc, "faces", (r, c)),
        _matrix(doc, "edges_v", (r, c - 1)),
        _matrix(doc, "edges_h", (r - 1, c)),
        n,
        **meta,
    )


def dumps(h: SpatialHistogram) -> str:
    return json.dumps(to_dict(h))


def loads(text: str) -> SpatialHistogram:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"histogram document is not valid JSON: {exc}") from exc
    return from_dict(doc)


def save(h: SpatialHistogram, path) -> None:
    Path(path).write_text(dumps(h))


def load(path) -> SpatialHistogram:
    return loads(Path(path).read_text())

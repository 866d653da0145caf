"""Private quadtree partitioning into near-uniform regions with noisy densities.

Costs are evaluated on length-normalized counts (each path spreads total
mass 1 over the cells it visits), which caps the cost sensitivity at 2.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, ParseError, ValidationError
from .histogram import SpatialHistogram, is_power_of_two
from .privacy import NoiseSource, PrivacyBudget, laplace_scale

COST_SENSITIVITY = 2.0
DENSITY_SENSITIVITY = 1.0


@dataclass(frozen=True)
class Region:
    """Quadtree block of cells, bounds inclusive."""

    row_lo: int
    row_hi: int
    col_lo: int
    col_hi: int

    @property
    def n_cells(self) -> int:
        return (self.row_hi - self.row_lo + 1) * (self.col_hi - self.col_lo + 1)

    def cells(self) -> list[tuple[int, int]]:
        return [(r, c) for r in range(self.row_lo, self.row_hi + 1) for c in range(self.col_lo, self.col_hi + 1)]

    def slices(self) -> tuple[slice, slice]:
        return slice(self.row_lo, self.row_hi + 1), slice(self.col_lo, self.col_hi + 1)

    def intersects(self, r0: int, r1: int, c0: int, c1: int) -> bool:
        return self.row_lo <= r1 and r0 <= self.row_hi and self.col_lo <= c1 and c0 <= self.col_hi

    def split(self) -> list["Region"]:
        """Halve every side longer than one cell; children in row-major quadrant order."""
        rs = _halves(self.row_lo, self.row_hi)
        cs = _halves(self.col_lo, self.col_hi)
        return [Region(r0, r1, c0, c1) for r0, r1 in rs for c0, c1 in cs]


def _halves(lo: int, hi: int) -> list[tuple[int, int]]:
    if hi == lo:
        return [(lo, hi)]
    mid = lo + (hi - lo + 1) // 2
    return [(lo, mid - 1), (mid, hi)]


@dataclass
class PartitionSet:
    regions: list[Region]
    densities: np.ndarray
    delta: float
    rows: int
    cols: int
    _face_map: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.densities = np.asarray(self.densities, dtype=np.float64)
        if len(self.regions) != self.densities.size:
            raise ValidationError(f"{len(self.regions)} regions but {self.densities.size} densities")
        if self.densities.size and (self.densities.min() < 0 or self.densities.max() > 1):
            raise ValidationError("densities must lie in [0, 1]")

    def face_map(self) -> np.ndarray:
        """Region id of every cell; raises if the regions do not tile the grid."""
        if self._face_map is None:
            m = np.full((self.rows, self.cols), -1, dtype=np.int64)
            for k, reg in enumerate(self.regions):
                sl = reg.slices()
                if np.any(m[sl] != -1):
                    raise ValidationError(f"region {reg} overlaps another region")
                m[sl] = k
            if np.any(m == -1):
                raise ValidationError("regions do not cover the grid")
            self._face_map = m
        return self._face_map

    def region_bounds(self) -> np.ndarray:
        return np.array([[g.row_lo, g.row_hi, g.col_lo, g.col_hi] for g in self.regions], dtype=np.int64).reshape(-1, 4)

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "rows": self.rows,
            "cols": self.cols,
            "delta": self.delta,
            "regions": [[g.row_lo, g.row_hi, g.col_lo, g.col_hi] for g in self.regions],
            "densities": self.densities.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PartitionSet":
        try:
            if doc["version"] != 1:
                raise ParseError(f"unsupported partition version {doc['version']!r}")
            ps = cls([Region(*map(int, r)) for r in doc["regions"]], doc["densities"],
                     float(doc["delta"]), int(doc["rows"]), int(doc["cols"]))
        except (KeyError, TypeError) as exc:
            raise ParseError(f"partition document malformed: {exc}") from exc
        ps.face_map()
        return ps

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "PartitionSet":
        return cls.from_dict(json.loads(Path(path).read_text()))


def normalized_counts(h: SpatialHistogram) -> np.ndarray:
    if h.normalized is None:
        raise ValidationError(
            "histogram carries no length-normalized counts; ingest it with normalization enabled"
        )
    return np.array(h.normalized)


def uniformity_cost(m: np.ndarray, region: Region) -> float:
    """L1 deviation of the region's cells from the region mean."""
    block = m[region.slices()]
    if block.size == 0:
        raise ValidationError(f"region {region} is empty")
    return float(np.abs(block - block.mean()).sum())


def _block_costs(m: np.ndarray, bh: int, bw: int) -> np.ndarray:
    r, c = m.shape
    blocks = m.reshape(r // bh, bh, c // bw, bw)
    mean = blocks.mean(axis=(1, 3), keepdims=True)
    return np.abs(blocks - mean).sum(axis=(1, 3))


def _block_shapes(rows: int, cols: int) -> list[tuple[int, int]]:
    shapes = [(rows, cols)]
    while shapes[-1] != (1, 1):
        bh, bw = shapes[-1]
        shapes.append((max(bh // 2, 1), max(bw // 2, 1)))
    return shapes


def default_delta(eps1: float) -> float:
    return 4.0 / eps1 ** 2


def partition(
    h: SpatialHistogram, budget: PrivacyBudget, ns: NoiseSource, delta: float | None = None
) -> PartitionSet:
    """Top-down quadtree search; a node splits iff noisy(parent) - mean noisy(children) > delta.

    Each level is processed in one vectorized pass over its active blocks.
    Leaves receive ``sum(normalized)/n + Lap(1/eps2)`` clamped to [0, 1].
    """
    m = normalized_counts(h)
    rows, cols = h.shape
    if not (is_power_of_two(rows) and is_power_of_two(cols)):
        raise DimensionError(f"grid {rows}x{cols} is not a power of two per side")
    if delta is None:
        delta = default_delta(budget.eps1)
    cost_scale = laplace_scale(COST_SENSITIVITY, budget.eps1)
    shapes = _block_shapes(rows, cols)
    costs = [_block_costs(m, bh, bw) for bh, bw in shapes]

    leaves: list[Region] = []
    active = np.ones((1, 1), dtype=bool)
    for level, (bh, bw) in enumerate(shapes):
        idx = np.argwhere(active)
        if level == len(shapes) - 1:
            split = np.zeros(len(idx), dtype=bool)
        else:
            ch, cw = shapes[level + 1]
            fr, fc = bh // ch, bw // cw  # fan-out per axis (1 or 2)
            pcost = costs[level][active] + ns.laplace(cost_scale, size=len(idx))
            child = costs[level + 1].reshape(active.shape[0], fr, active.shape[1], fc).transpose(0, 2, 1, 3)
            kids = child[active].reshape(len(idx), fr * fc)
            chcost = (kids + ns.laplace(cost_scale, size=kids.shape)).mean(axis=1)
            split = pcost - chcost > delta
        for (i, j), s in zip(idx, split):
            if not s:
                leaves.append(Region(int(i * bh), int((i + 1) * bh - 1), int(j * bw), int((j + 1) * bw - 1)))
        if not split.any():
            break
        nxt = np.zeros_like(active)
        nxt[tuple(idx[split].T)] = True
        ch, cw = shapes[level + 1]
        active = np.repeat(np.repeat(nxt, bh // ch, axis=0), bw // cw, axis=1)

    leaves.sort(key=lambda g: (g.row_lo, g.col_lo))
    mass = np.array([m[g.slices()].sum() for g in leaves])
    exact = mass / h.n if h.n > 0 else np.zeros(len(leaves))
    noisy = exact + ns.laplace(laplace_scale(DENSITY_SENSITIVITY, budget.eps2), size=len(leaves))
    return PartitionSet(leaves, np.clip(noisy, 0.0, 1.0), float(delta), rows, cols)


def region_of(ps: PartitionSet) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Region ids for faces, vertical edges and horizontal edges.

    An edge belongs to the region of its top/left face.
    """
    fm = ps.face_map()
    return fm, fm[:, :-1].copy(), fm[:-1, :].copy()


def partition_cost(m: np.ndarray, regions: list[Region]) -> float:
    """Sum of exact (noise-free) uniformity costs over the regions."""
    return float(sum(uniformity_cost(m, g) for g in regions))


def min_pruning_cost(m: np.ndarray) -> float:
    """Least total cost over all prunings of the full quadtree (bottom-up DP)."""
    shapes = _block_shapes(*m.shape)
    best = _block_costs(m, *shapes[-1])
    for bh, bw in reversed(shapes[:-1]):
        own = _block_costs(m, bh, bw)
        ch, cw = best.shape
        kids = best.reshape(own.shape[0], ch // own.shape[0], own.shape[1], cw // own.shape[1]).sum(axis=(1, 3))
        best = np.minimum(own, kids)
    return float(best[0, 0])

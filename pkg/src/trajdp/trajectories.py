"""Raw GPS trajectories: CSV I/O, rasterization onto the grid, synthetic generators."""

from __future__ import annotations

import bisect
import csv
import itertools
import math
from dataclasses import dataclass
from typing import Iterable, TextIO

import numpy as np

from .errors import ParseError, RasterizeError, ValidationError
from .histogram import Cell, SpatialHistogram, build_from_cell_paths

CSV_COLUMNS = ("traj_id", "seq", "lat", "lon")


@dataclass(frozen=True)
class RawTrajectory:
    id: str
    points: tuple[tuple[float, float], ...]  # (lat, lon) in degrees

    def __post_init__(self):
        if not self.points:
            raise ValidationError(f"trajectory {self.id!r} has no points")
        for lat, lon in self.points:
            if not (math.isfinite(lat) and math.isfinite(lon)):
                raise ValidationError(f"trajectory {self.id!r} has a non-finite coordinate")


@dataclass(frozen=True)
class GridSpec:
    """A ``2**resolution`` square grid over a lat/lon bounding box; row 0 is the north edge."""

    min_lat: float
    min_lon: float
    max_lat: float
    max_lon: float
    resolution: int

    def __post_init__(self):
        if not (self.max_lat > self.min_lat and self.max_lon > self.min_lon):
            raise ValidationError(
                f"bbox ({self.min_lat}, {self.min_lon}, {self.max_lat}, {self.max_lon}) is not ordered min < max"
            )
        if not 1 <= self.resolution <= 12:
            raise ValidationError(f"resolution must be in [1, 12], got {self.resolution}")

    @classmethod
    def parse_bbox(cls, text: str, resolution: int) -> "GridSpec":
        try:
            vals = [float(x) for x in text.split(",")]
        except ValueError as exc:
            raise ValidationError(f"bbox {text!r} is not four comma-separated numbers") from exc
        if len(vals) != 4:
            raise ValidationError(f"bbox {text!r} must have four values min_lat,min_lon,max_lat,max_lon")
        return cls(*vals, resolution=resolution)

    @property
    def side(self) -> int:
        return 2 ** self.resolution

    def contains(self, lat: float, lon: float) -> bool:
        return self.min_lat <= lat <= self.max_lat and self.min_lon <= lon <= self.max_lon

    def to_grid(self, lat: float, lon: float) -> tuple[float, float]:
        """Continuous (row, col) coordinates in cell units."""
        y = (self.max_lat - lat) / (self.max_lat - self.min_lat) * self.side
        x = (lon - self.min_lon) / (self.max_lon - self.min_lon) * self.side
        return y, x

    def cell_of(self, y: float, x: float) -> Cell:
        last = self.side - 1
        return (min(int(math.floor(y)), last), min(int(math.floor(x)), last))

    def cell_center(self, cell: Cell) -> tuple[float, float]:
        """(lat, lon) of a cell's center."""
        r, c = cell
        lat = self.max_lat - (r + 0.5) / self.side * (self.max_lat - self.min_lat)
        lon = self.min_lon + (c + 0.5) / self.side * (self.max_lon - self.min_lon)
        return lat, lon


def supercover(p0: tuple[float, float], p1: tuple[float, float], side: int) -> list[Cell]:
    """4-connected cells crossed by the segment p0 -> p1 (grid units, (row, col)).

    Exact corner crossings step along the column axis first.
    """
    y0, x0 = p0
    y1, x1 = p1
    last = side - 1
    r, c = min(int(math.floor(y0)), last), min(int(math.floor(x0)), last)
    er, ec = min(int(math.floor(y1)), last), min(int(math.floor(x1)), last)
    dy, dx = y1 - y0, x1 - x0
    sr = 1 if er > r else -1
    sc = 1 if ec > c else -1

    def first_crossing(pos, cell, step, d):
        if d == 0:
            return math.inf
        boundary = cell + 1 if step > 0 else cell
        return (boundary - pos) / d

    t_r = first_crossing(y0, r, sr, dy)
    t_c = first_crossing(x0, c, sc, dx)
    dt_r = math.inf if dy == 0 else abs(1.0 / dy)
    dt_c = math.inf if dx == 0 else abs(1.0 / dx)

    cells = [(r, c)]
    for _ in range(abs(er - r) + abs(ec - c)):
        if c == ec:
            move_col = False
        elif r == er:
            move_col = True
        else:
            move_col = t_c <= t_r
        if move_col:
            c += sc
            t_c += dt_c
        else:
            r += sr
            t_r += dt_r
        cells.append((r, c))
    return cells


def rasterize(t: RawTrajectory, g: GridSpec) -> list[Cell]:
    """Loop-free 4-adjacent cell sequence; truncated at the first revisited cell."""
    for lat, lon in t.points:
        if not g.contains(lat, lon):
            raise RasterizeError(f"trajectory {t.id!r}: point ({lat}, {lon}) lies outside the bounding box")
    pts = [g.to_grid(lat, lon) for lat, lon in t.points]
    walk = [g.cell_of(*pts[0])]
    for a, b in zip(pts, pts[1:]):
        walk.extend(supercover(a, b, g.side)[1:])
    seen = set()
    out = []
    for cell in walk:
        if cell in seen:
            break
        seen.add(cell)
        out.append(cell)
    return out


def rasterize_all(trajs: Iterable[RawTrajectory], g: GridSpec) -> tuple[list[list[Cell]], list[tuple[str, str]]]:
    """Rasterize many trajectories; returns (paths, rejected) where rejected holds (id, reason)."""
    paths, rejected = [], []
    for t in trajs:
        try:
            paths.append(rasterize(t, g))
        except RasterizeError as exc:
            rejected.append((t.id, str(exc)))
    return paths, rejected


def ingest(trajs: Iterable[RawTrajectory], g: GridSpec) -> tuple[SpatialHistogram, list[tuple[str, str]]]:
    paths, rejected = rasterize_all(trajs, g)
    return build_from_cell_paths(paths, g.side, g.side), rejected


# -- CSV -----------------------------------------------------------------------

def parse_csv(stream: TextIO) -> list[RawTrajectory]:
    reader = csv.DictReader(stream)
    if reader.fieldnames is None:
        return []
    header = [f.strip() for f in reader.fieldnames]
    missing = [col for col in CSV_COLUMNS if col not in header]
    if missing:
        raise ParseError(f"CSV header lacks column(s): {', '.join(missing)}")
    reader.fieldnames = header
    groups: dict[str, dict[int, tuple[float, float]]] = {}
    for lineno, row in enumerate(reader, start=2):
        tid = (row["traj_id"] or "").strip()
        if not tid:
            raise ParseError(f"line {lineno}: empty traj_id")
        try:
            seq = int(row["seq"])
        except (TypeError, ValueError) as exc:
            raise ParseError(f"line {lineno}: seq {row['seq']!r} is not an integer") from exc
        try:
            lat, lon = float(row["lat"]), float(row["lon"])
        except (TypeError, ValueError) as exc:
            raise ParseError(f"line {lineno}: non-numeric coordinate ({row['lat']!r}, {row['lon']!r})") from exc
        if not (math.isfinite(lat) and math.isfinite(lon)):
            raise ParseError(f"line {lineno}: non-finite coordinate")
        pts = groups.setdefault(tid, {})
        if seq in pts:
            raise ParseError(f"line {lineno}: duplicate (traj_id, seq) = ({tid}, {seq})")
        pts[seq] = (lat, lon)
    return [RawTrajectory(tid, tuple(pts[s] for s in sorted(pts))) for tid, pts in groups.items()]


def write_csv(trajs: Iterable[RawTrajectory], stream: TextIO) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for t in trajs:
        for seq, (lat, lon) in enumerate(t.points):
            w.writerow([t.id, seq, repr(lat), repr(lon)])


# -- synthetic generators ------------------------------------------------------

_STEPS = ((0, 1), (1, 0), (0, -1), (-1, 0))


def _walk(rng: np.random.Generator, start: Cell, length: int, side: int, step_weight) -> list[Cell]:
    path = [start]
    seen = {start}
    while len(path) < length:
        r, c = path[-1]
        nbrs = [(r + dr, c + dc) for dr, dc in _STEPS]
        nbrs = [p for p in nbrs if 0 <= p[0] < side and 0 <= p[1] < side and p not in seen]
        if not nbrs:
            break
        # same draw as rng.choice(len(nbrs), p=w/sum(w)): one uniform against the CDF
        w = [step_weight((r, c), p) for p in nbrs]
        total = sum(w)
        cdf = list(itertools.accumulate(x / total for x in w))
        u = rng.random() * cdf[-1]
        nxt = nbrs[min(bisect.bisect_right(cdf, u), len(nbrs) - 1)]
        path.append(nxt)
        seen.add(nxt)
    return path


def _lengths(rng: np.random.Generator, n_traj: int, mean_len: float) -> np.ndarray:
    return 1 + rng.poisson(mean_len - 1, size=n_traj)


def _check_gen(n_traj: int, mean_len: float) -> None:
    if n_traj < 1:
        raise ValidationError(f"n_traj must be >= 1, got {n_traj}")
    if mean_len < 1:
        raise ValidationError(f"mean_len must be >= 1, got {mean_len}")


def _to_raw(paths: list[list[Cell]], g: GridSpec, prefix: str) -> list[RawTrajectory]:
    return [RawTrajectory(f"{prefix}{i}", tuple(g.cell_center(c) for c in p)) for i, p in enumerate(paths)]


def gen_uniform_paths(n_traj: int, mean_len: float, side: int, seed: int) -> list[list[Cell]]:
    _check_gen(n_traj, mean_len)
    rng = np.random.default_rng(seed)
    lengths = _lengths(rng, n_traj, mean_len)
    starts = rng.integers(0, side, size=(n_traj, 2))
    return [
        _walk(rng, (int(s[0]), int(s[1])), int(k), side, lambda a, b: 1.0)
        for s, k in zip(starts, lengths)
    ]


def gen_skewed_paths(
    n_traj: int, mean_len: float, side: int, hotspot: tuple[float, float], concentration: float, seed: int
) -> list[list[Cell]]:
    """Random walks whose starts and steps favour cells near ``hotspot`` (grid units).

    Start cells are drawn with weight ``exp(-concentration * d)`` and each
    step with weight ``exp(concentration * (d_here - d_next))``, where ``d`` is
    the Euclidean distance in cells from the cell centre to the hotspot.
    """
    _check_gen(n_traj, mean_len)
    if concentration < 0:
        raise ValidationError(f"concentration must be >= 0, got {concentration}")
    rng = np.random.default_rng(seed)
    hy, hx = hotspot
    rr, cc = np.mgrid[0:side, 0:side]
    dist = np.hypot(rr + 0.5 - hy, cc + 0.5 - hx)
    w = np.exp(-concentration * (dist - dist.min()))
    lengths = _lengths(rng, n_traj, mean_len)
    starts = rng.choice(side * side, size=n_traj, p=(w / w.sum()).ravel())

    def step_weight(a: Cell, b: Cell) -> float:
        return math.exp(concentration * (dist[a] - dist[b]))

    return [_walk(rng, divmod(int(s), side), int(k), side, step_weight) for s, k in zip(starts, lengths)]


def gen_uniform(n_traj: int, mean_len: float, g: GridSpec, seed: int) -> list[RawTrajectory]:
    return _to_raw(gen_uniform_paths(n_traj, mean_len, g.side, seed), g, "u")


def gen_skewed(
    n_traj: int,
    mean_len: float,
    g: GridSpec,
    hotspot: tuple[float, float] | None = None,
    concentration: float = 1.0,
    seed: int = 0,
) -> list[RawTrajectory]:
    """Skewed dataset; ``hotspot`` is (lat, lon) and defaults to the bbox centre."""
    if hotspot is None:
        hotspot = ((g.min_lat + g.max_lat) / 2, (g.min_lon + g.max_lon) / 2)
    if not g.contains(*hotspot):
        raise ValidationError(f"hotspot {hotspot} lies outside the bounding box")
    paths = gen_skewed_paths(n_traj, mean_len, g.side, g.to_grid(*hotspot), concentration, seed)
    return _to_raw(paths, g, "s")

"""L1-nearest consistent histogram via linear programming, plus a greedy baseline.

The LP is

    minimize   sum_k |x_k - y_k|
    subject to x_k >= 0, x_e <= x_a and x_e <= x_b for every edge e = (a, b)

with each variable shifted as ``x = y + d_plus - d_minus``.  That encoding
makes the all-slack basis dual feasible (every cost is non-negative), so a
dual simplex starts immediately and only has to pivot out the violated rows.

Some optimum always raises faces and lowers edges.  Edges that start out
satisfied therefore stay satisfied, and the problem splits into independent
pieces: the faces joined by violated edges.  ``local=True`` solves those
pieces separately.  ``local=False`` solves the whole grid as a single LP.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .errors import SolverError, ValidationError
from .histogram import SpatialHistogram

PIVOT_TOL = 1e-10
# violations smaller than this are float residue, not worth an LP
VIOLATION_EPS = 1e-12


@dataclass
class LpProblem:
    """``minimize c @ z`` s.t. ``A @ z <= b``, ``z >= 0``; z = (d_plus, d_minus)."""

    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    var_names: list[str]
    row_names: list[str]
    entries: np.ndarray  # flat histogram indices of the shifted variables
    base: np.ndarray  # their input values y

    def __post_init__(self):
        m, nz = self.A.shape
        if self.b.shape != (m,) or self.c.shape != (nz,) or nz != 2 * self.entries.size:
            raise ValidationError("LP dimensions are inconsistent")
        if len(self.var_names) != nz or len(self.row_names) != m:
            raise ValidationError("LP name lists do not match its dimensions")

    def dump(self) -> str:
        """Plain-text listing for debugging."""
        lines = ["minimize " + " + ".join(f"{c:g} {v}" for c, v in zip(self.c, self.var_names) if c)]
        lines.append("subject to")
        for name, row, rhs in zip(self.row_names, self.A, self.b):
            terms = " ".join(f"{a:+g} {v}" for a, v in zip(row, self.var_names) if a)
            lines.append(f"  {name}: {terms} <= {rhs:g}")
        lines.append("bounds")
        lines.append("  all variables >= 0")
        return "\n".join(lines)


@dataclass
class SimplexResult:
    z: np.ndarray
    objective: float
    pivots: int


def dual_simplex(A: np.ndarray, b: np.ndarray, c: np.ndarray, max_pivots: int | None = None) -> SimplexResult:
    """Dense tableau dual simplex from the slack basis, Bland's rule on both choices.

    Requires ``c >= 0`` so the slack basis is dual feasible.
    """
    m, nz = A.shape
    if np.any(c < 0):
        raise SolverError("dual simplex needs non-negative costs for a dual-feasible start")
    if max_pivots is None:
        max_pivots = 50 * (m + nz) + 100
    tab = np.zeros((m, nz + m + 1))
    tab[:, :nz] = A
    tab[:, nz:nz + m] = np.eye(m)
    tab[:, -1] = b
    red = np.concatenate([c, np.zeros(m)]).astype(np.float64)
    basis = np.arange(nz, nz + m)
    pivots = 0
    scale = max(1.0, float(np.abs(b).max(initial=0.0)))
    feas_tol = 1e-12 * scale
    while True:
        infeasible = np.flatnonzero(tab[:, -1] < -feas_tol)
        if infeasible.size == 0:
            break
        if pivots >= max_pivots:
            raise SolverError(
                f"dual simplex did not converge within {max_pivots} pivots "
                f"({infeasible.size} rows still infeasible, worst {tab[infeasible, -1].min():.3e})"
            )
        r = int(infeasible[np.argmin(basis[infeasible])])
        row = tab[r, :-1]
        cand = np.flatnonzero(row < -PIVOT_TOL)
        if cand.size == 0:
            raise SolverError(f"LP infeasible: row {r} cannot be repaired")
        ratios = red[cand] / -row[cand]
        best = ratios.min()
        j = int(cand[ratios <= best + 1e-12 * max(1.0, abs(best))][0])
        tab[r] /= tab[r, j]
        col = tab[:, j].copy()
        col[r] = 0.0
        tab -= np.outer(col, tab[r])
        red -= red[j] * tab[r, :-1]
        basis[r] = j
        pivots += 1
    z = np.zeros(nz + m)
    z[basis] = tab[:, -1]
    z = z[:nz]
    return SimplexResult(z, float(c @ z), pivots)


# -- grid topology ---------------------------------------------------------------

@dataclass(frozen=True)
class _Topology:
    n_faces: int
    edge_a: np.ndarray  # face index of the top/left endpoint, per edge in flat order
    edge_b: np.ndarray


def _topology(rows: int, cols: int) -> _Topology:
    ids = np.arange(rows * cols).reshape(rows, cols)
    a = np.concatenate([ids[:, :-1].ravel(), ids[:-1, :].ravel()])
    b = np.concatenate([ids[:, 1:].ravel(), ids[1:, :].ravel()])
    return _Topology(rows * cols, a, b)


def _name(k: int, rows: int, cols: int) -> str:
    nf, nv = rows * cols, rows * (cols - 1)
    if k < nf:
        return f"f[{k // cols},{k % cols}]"
    if k < nf + nv:
        k -= nf
        return f"ev[{k // (cols - 1)},{k % (cols - 1)}]"
    k -= nf + nv
    return f"eh[{k // cols},{k % cols}]"


def build_lp(
    y: np.ndarray, rows: int, cols: int, faces: list[int], edges: list[int], fixed_edges: list[int]
) -> LpProblem:
    """LP over the given face/edge subset; other entries stay at their values in ``y``.

    ``edges`` and ``fixed_edges`` are edge ordinals (0-based, flat edge order).
    """
    topo = _topology(rows, cols)
    nf = topo.n_faces
    entries = np.array(list(faces) + [nf + e for e in edges], dtype=np.int64)
    pos = {int(k): i for i, k in enumerate(entries)}
    nv = entries.size
    rows_a, rhs, names = [], [], []

    def row() -> np.ndarray:
        return np.zeros(2 * nv)

    for i, k in enumerate(entries):
        a = row()
        a[i], a[nv + i] = -1.0, 1.0
        rows_a.append(a)
        rhs.append(y[k])
        names.append(f"nonneg {_name(int(k), rows, cols)}")
    for e in edges:
        ie = pos[nf + e]
        for f in (int(topo.edge_a[e]), int(topo.edge_b[e])):
            a = row()
            a[ie], a[nv + ie] = 1.0, -1.0
            if f in pos:
                a[pos[f]], a[nv + pos[f]] = -1.0, 1.0
            rows_a.append(a)
            rhs.append(y[f] - y[nf + e])
            names.append(f"{_name(nf + e, rows, cols)} <= {_name(f, rows, cols)}")
    for e in fixed_edges:
        floor = max(y[nf + e], 0.0)
        for f in (int(topo.edge_a[e]), int(topo.edge_b[e])):
            if f in pos:
                a = row()
                a[pos[f]], a[nv + pos[f]] = -1.0, 1.0
                rows_a.append(a)
                rhs.append(y[f] - floor)
                names.append(f"{_name(f, rows, cols)} >= fixed {_name(nf + e, rows, cols)}")
    var_names = [f"d+ {_name(int(k), rows, cols)}" for k in entries] + [f"d- {_name(int(k), rows, cols)}" for k in entries]
    A = np.array(rows_a).reshape(len(rows_a), 2 * nv)
    return LpProblem(A, np.array(rhs, dtype=np.float64), np.ones(2 * nv), var_names, names, entries, y[entries].copy())


def _solve(lp: LpProblem) -> tuple[np.ndarray, int]:
    res = dual_simplex(lp.A, lp.b, lp.c)
    nv = lp.entries.size
    return lp.base + res.z[:nv] - res.z[nv:], res.pivots


def _components(y: np.ndarray, topo: _Topology, violated: np.ndarray, neg_faces: np.ndarray) -> list[tuple[list[int], list[int]]]:
    adj = defaultdict(list)
    for e in violated:
        a, b = int(topo.edge_a[e]), int(topo.edge_b[e])
        adj[a].append((b, int(e)))
        adj[b].append((a, int(e)))
    seeds = sorted(set(adj) | {int(f) for f in neg_faces})
    seen: set[int] = set()
    comps = []
    for s in seeds:
        if s in seen:
            continue
        faces, edges = [], set()
        stack = [s]
        seen.add(s)
        while stack:
            f = stack.pop()
            faces.append(f)
            for g, e in adj.get(f, ()):
                edges.add(e)
                if g not in seen:
                    seen.add(g)
                    stack.append(g)
        comps.append((sorted(faces), sorted(edges)))
    return comps


@dataclass
class ConsistentResult:
    histogram: SpatialHistogram | None
    values: np.ndarray  # flat faces, edges_v, edges_h
    objective: float
    components: int
    pivots: int


def solve_consistent(
    faces: np.ndarray, edges_v: np.ndarray, edges_h: np.ndarray, local: bool = True
) -> ConsistentResult:
    """Consistent inference on raw (possibly negative) arrays."""
    faces = np.asarray(faces, dtype=np.float64)
    rows, cols = faces.shape
    y = np.concatenate([faces.ravel(), np.asarray(edges_v, float).ravel(), np.asarray(edges_h, float).ravel()])
    if not np.all(np.isfinite(y)):
        raise ValidationError("consistent inference needs finite entries")
    topo = _topology(rows, cols)
    nf = topo.n_faces
    ye = y[nf:]
    slack = np.minimum(y[topo.edge_a], y[topo.edge_b]) - ye
    violated = np.flatnonzero(slack < -VIOLATION_EPS)
    neg_faces = np.flatnonzero(y[:nf] < 0)
    x = y.copy()
    pivots = 0
    if local:
        comps = _components(y, topo, violated, neg_faces)
        in_lp = np.zeros(ye.size, dtype=bool)
        in_lp[violated] = True
        for comp_faces, comp_edges in comps:
            # satisfied edges touching the component stay fixed but bound its faces from below
            mask = (np.isin(topo.edge_a, comp_faces) | np.isin(topo.edge_b, comp_faces)) & ~in_lp
            touching = np.flatnonzero(mask).tolist()
            lp = build_lp(y, rows, cols, comp_faces, comp_edges, touching)
            sol, piv = _solve(lp)
            x[lp.entries] = sol
            pivots += piv
        # edges never in any LP only need their sign fixed
        free = ~in_lp
        x[nf:][free] = np.maximum(ye[free], 0.0)
        n_comp = len(comps)
    else:
        lp = build_lp(y, rows, cols, list(range(nf)), list(range(ye.size)), [])
        x, pivots = _solve(lp)
        n_comp = 1
    x = _polish(x, topo)
    return ConsistentResult(None, x, float(np.abs(x - y).sum()), n_comp, pivots)


def _polish(x: np.ndarray, topo: _Topology) -> np.ndarray:
    """Remove round-off residue so constraints hold exactly."""
    nf = topo.n_faces
    x = x.copy()
    x[np.abs(x) < 1e-12] = 0.0
    x[:nf] = np.maximum(x[:nf], 0.0)
    cap = np.minimum(x[topo.edge_a], x[topo.edge_b])
    resid = x[nf:] - cap
    if resid.max(initial=0.0) > 1e-6 * max(1.0, float(np.abs(x).max(initial=0.0))):
        raise SolverError(f"solver output violates consistency by {resid.max():.3e}")
    x[nf:] = np.clip(x[nf:], 0.0, cap)
    return x


def consistent_inference(h: SpatialHistogram, local: bool = True) -> ConsistentResult:
    """L1-nearest histogram to ``h`` that satisfies every edge constraint."""
    res = solve_consistent(h.faces, h.edges_v, h.edges_h, local=local)
    res.histogram = SpatialHistogram.from_flat(res.values, h.rows, h.cols, h.n, normalized=h.normalized, k_max=h.k_max)
    return res


def greedy_repair(h: SpatialHistogram) -> tuple[SpatialHistogram, float]:
    """Clamp every edge to the smaller adjacent face; faces untouched."""
    f = h.faces
    ev = np.minimum(h.edges_v, np.minimum(f[:, :-1], f[:, 1:]))
    eh = np.minimum(h.edges_h, np.minimum(f[:-1, :], f[1:, :]))
    obj = float((h.edges_v - ev).sum() + (h.edges_h - eh).sum())
    return h.replace(edges_v=ev, edges_h=eh), obj

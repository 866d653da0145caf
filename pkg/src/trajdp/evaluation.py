"""Query workloads, error metrics, baseline mechanisms and the experiment runner."""

from __future__ import annotations

import csv
import json
import math
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

from .errors import DimensionError, ParseError, ValidationError
from .histogram import (
    SpatialHistogram,
    answer_queries,
    as_query_array,
    build_from_cell_paths,
    check_consistency,
    load as load_histogram,
)
from .partition import PartitionSet, partition
from .privacy import BudgetAccountant, NoiseSource, derive_seed, exp_mechanism_select, laplace_scale, split_budget
from .synthesis import DEFAULT_ITERATIONS, SynthesisConfig, SynthesisTrace, init_uniform, noisy_error, synthesize
from .trajectories import gen_skewed_paths, gen_uniform_paths

DEFAULT_QUERY_COUNT = 16000
MECHANISMS = ("dqam", "mwem_face", "lm")


@dataclass
class QuerySet:
    queries: np.ndarray  # (m, 4): row_lo, row_hi, col_lo, col_hi
    seed: int
    rows: int
    cols: int

    def __post_init__(self):
        self.queries = as_query_array(self.queries)
        q = self.queries
        if q.size and (q.min() < 0 or q[:, 1].max() >= self.rows or q[:, 3].max() >= self.cols
                       or np.any(q[:, 0] > q[:, 1]) or np.any(q[:, 2] > q[:, 3])):
            raise ValidationError(f"query set does not fit a {self.rows}x{self.cols} grid")

    def __len__(self) -> int:
        return len(self.queries)

    def to_dict(self) -> dict:
        return {"version": 1, "rows": self.rows, "cols": self.cols, "seed": self.seed,
                "queries": self.queries.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "QuerySet":
        try:
            if doc["version"] != 1:
                raise ParseError(f"unsupported query-set version {doc['version']!r}")
            return cls(np.array(doc["queries"], dtype=np.int64).reshape(-1, 4), int(doc["seed"]),
                       int(doc["rows"]), int(doc["cols"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"query-set document malformed: {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "QuerySet":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"query-set file is not valid JSON: {exc}") from exc
        return cls.from_dict(doc)


def ordered_pairs(side: int) -> np.ndarray:
    """All (lo, hi) with 0 <= lo <= hi < side."""
    return np.stack(np.triu_indices(side), axis=1)


def gen_queries(rows: int, cols: int, count: int = DEFAULT_QUERY_COUNT, seed: int = 0) -> QuerySet:
    """Rectangles whose row interval and column interval are each uniform over ordered pairs."""
    if count < 1:
        raise ValidationError(f"query count must be >= 1, got {count}")
    rng = np.random.default_rng(seed)
    rp, cp = ordered_pairs(rows), ordered_pairs(cols)
    ri = rng.integers(0, len(rp), size=count)
    ci = rng.integers(0, len(cp), size=count)
    return QuerySet(np.column_stack([rp[ri], cp[ci]]), seed, rows, cols)


# -- metrics -------------------------------------------------------------------

def _same_dims(a: SpatialHistogram, b: SpatialHistogram) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"histogram shapes differ: {a.shape} vs {b.shape}")


def avg_l1_error(h_true: SpatialHistogram, h_pub: SpatialHistogram, queries) -> float:
    _same_dims(h_true, h_pub)
    qa = as_query_array(queries)
    return float(np.abs(answer_queries(h_true, qa) - answer_queries(h_pub, qa)).mean())


def kld(h_true: SpatialHistogram, h_pub: SpatialHistogram) -> float:
    """sum c log(c / c') / n over every face and edge; c' is floored at 1e-6 * mass(H) / |H|."""
    _same_dims(h_true, h_pub)
    p, q = h_true.flat(), h_pub.flat()
    if h_true.n == 0 or p.sum() == 0:
        return 0.0
    floor = 1e-6 * p.sum() / p.size
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / np.maximum(q[mask], floor))) / h_true.n)


# -- mechanisms ----------------------------------------------------------------

def lm_publish(h_true: SpatialHistogram, epsilon: float, k_max: int, ns: NoiseSource) -> SpatialHistogram:
    """Independent Laplace noise on every cell, scale (2 k_max - 1) / epsilon, negatives clamped."""
    if k_max < 1:
        raise ValidationError(f"k_max must be >= 1, got {k_max}")
    scale = laplace_scale(2 * k_max - 1, epsilon)
    noisy = h_true.flat() + ns.laplace(scale, size=h_true.n_entries)
    return SpatialHistogram.from_flat(np.maximum(noisy, 0.0), h_true.rows, h_true.cols, h_true.n)


def mwem_face_publish(
    h_true: SpatialHistogram, queries, epsilon: float, iterations: int, ns: NoiseSource
) -> SpatialHistogram:
    """Multiplicative weights over faces only.

    Every density is 1 and only the cells inside the selected query are
    rescaled.  Edges stay frozen at the uniform start and there is no
    consistency repair.  The budget is split evenly between selection and
    measurement.
    """
    qa = as_query_array(queries)
    T = int(iterations)
    n = h_true.n
    truth = answer_queries(h_true, qa)
    est = init_uniform(h_true.rows, h_true.cols, n)
    half = epsilon / 2
    for _ in range(T):
        ans = answer_queries(est, qa)
        k = exp_mechanism_select(ns, np.abs(truth - ans), half / T, 1.0)
        werr = noisy_error(truth[k], ans[k], ns, half, T)
        mask = np.zeros((h_true.rows, h_true.cols), dtype=bool)
        r0, r1, c0, c1 = qa[k]
        mask[r0:r1 + 1, c0:c1 + 1] = True
        faces = est.faces * np.where(mask, math.exp(np.clip(werr / (2 * max(n, 1.0)), -600 / T, 600 / T)), 1.0)
        total = faces.sum()
        faces = faces * (est.faces.sum() / total if total > 0 else 1.0)
        est = est.replace(faces=faces)
    return est


@dataclass
class DqamResult:
    histogram: SpatialHistogram
    partition: PartitionSet
    trace: SynthesisTrace
    accountant: BudgetAccountant


def dqam_publish(
    h_true: SpatialHistogram,
    queries,
    epsilon: float,
    iterations: int = DEFAULT_ITERATIONS,
    seed: int = 0,
    delta: float | None = None,
    noise: bool = True,
    renormalize: bool = False,
) -> DqamResult:
    """Both stages end to end: private partitioning, then synthesis."""
    budget = split_budget(epsilon, iterations)
    acct = BudgetAccountant(epsilon)
    root = NoiseSource(seed, enabled=noise)
    ps = partition(h_true, budget, root.spawn("partition"), delta=delta)
    acct.spend("partition-cost", budget.eps1)
    acct.spend("partition-density", budget.eps2)
    cfg = SynthesisConfig(iterations, budget, seed, noise, renormalize)
    est, trace = synthesize(h_true, queries, ps, cfg, root.spawn("synthesize"), acct)
    acct.assert_exhausted()
    return DqamResult(est, ps, trace, acct)


# -- experiments ---------------------------------------------------------------

@dataclass
class EvalReport:
    mechanism: str
    epsilon: float
    dataset: str
    seed: int
    avg_l1: float
    kld: float
    runtime_s: float
    violations: int
    error: str = ""
    config: dict = field(default_factory=dict)


REPORT_COLUMNS = ("mechanism", "epsilon", "dataset", "seed", "avg_l1", "kld", "runtime_s", "violations")
SUMMARY_COLUMNS = ("mechanism", "epsilon", "dataset", "repetitions", "avg_l1_mean", "avg_l1_std", "kld_mean", "kld_std")


@dataclass
class DatasetSpec:
    name: str
    model: str = "skewed"  # uniform | skewed | file
    n: int = 1000
    mean_len: float = 10.0
    resolution: int = 4
    concentration: float = 1.0
    seed: int = 0
    path: str | None = None

    @classmethod
    def parse(cls, item) -> "DatasetSpec":
        if isinstance(item, str):
            if item in ("uniform", "skewed"):
                return cls(name=item, model=item)
            return cls(name=Path(item).stem, model="file", path=item)
        if isinstance(item, dict):
            known = {k: v for k, v in item.items() if k in cls.__dataclass_fields__}
            if "len" in item:
                known["mean_len"] = item["len"]
            if "name" not in known:
                known["name"] = known.get("model", "dataset")
            return cls(**known)
        raise ValidationError(f"cannot interpret dataset entry {item!r}")

    def build(self) -> SpatialHistogram:
        side = 2 ** self.resolution
        if self.model == "uniform":
            paths = gen_uniform_paths(self.n, self.mean_len, side, self.seed)
        elif self.model == "skewed":
            paths = gen_skewed_paths(self.n, self.mean_len, side, (side / 2, side / 2), self.concentration, self.seed)
        elif self.model == "file":
            return load_histogram(self.path)
        else:
            raise ValidationError(f"unknown dataset model {self.model!r}")
        return build_from_cell_paths(paths, side, side)


@dataclass
class ExperimentConfig:
    mechanisms: list[str]
    epsilons: list[float]
    datasets: list[DatasetSpec]
    seeds: list[int]
    T: int = DEFAULT_ITERATIONS
    query_count: int = DEFAULT_QUERY_COUNT
    query_seed: int = 0
    delta: float | None = None
    jobs: int = 1

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        try:
            cfg = cls(
                mechanisms=list(doc["mechanisms"]),
                epsilons=[float(e) for e in doc["epsilons"]],
                datasets=[DatasetSpec.parse(d) for d in doc["datasets"]],
                seeds=[int(s) for s in doc["seeds"]],
                T=int(doc.get("T", DEFAULT_ITERATIONS)),
                query_count=int(doc.get("query_count", DEFAULT_QUERY_COUNT)),
                query_seed=int(doc.get("query_seed", 0)),
                delta=doc.get("delta"),
                jobs=int(doc.get("jobs", 1)),
            )
        except KeyError as exc:
            raise ValidationError(f"experiment config lacks {exc}") from exc
        bad = [m for m in cfg.mechanisms if m not in MECHANISMS]
        if bad:
            raise ValidationError(f"unknown mechanism(s) {bad}; choose from {list(MECHANISMS)}")
        if min(cfg.epsilons, default=1) <= 0:
            raise ValidationError("every epsilon must be positive")
        if not (cfg.mechanisms and cfg.epsilons and cfg.datasets and cfg.seeds):
            raise ValidationError("mechanisms, epsilons, datasets and seeds must be non-empty")
        return cfg

    def echo(self) -> dict:
        return asdict(self)


def publish(mechanism: str, h_true: SpatialHistogram, qa: np.ndarray, epsilon: float, T: int, seed: int,
            delta: float | None = None) -> SpatialHistogram:
    if mechanism == "dqam":
        return dqam_publish(h_true, qa, epsilon, T, seed, delta=delta).histogram
    ns = NoiseSource(derive_seed(seed, mechanism))
    if mechanism == "mwem_face":
        return mwem_face_publish(h_true, qa, epsilon, T, ns)
    if mechanism == "lm":
        return lm_publish(h_true, epsilon, h_true.k_max or 1, ns)
    raise ValidationError(f"unknown mechanism {mechanism!r}")


def _run_cell(args) -> EvalReport:
    mechanism, epsilon, ds_name, seed, h_true, qa, T, delta = args
    t0 = time.perf_counter()
    try:
        out = publish(mechanism, h_true, qa, epsilon, T, seed, delta)
        return EvalReport(mechanism, epsilon, ds_name, seed, avg_l1_error(h_true, out, qa), kld(h_true, out),
                          time.perf_counter() - t0, len(check_consistency(out)))
    except Exception as exc:  # one failing cell must not sink the grid
        return EvalReport(mechanism, epsilon, ds_name, seed, math.nan, math.nan, time.perf_counter() - t0, -1,
                          error=f"{type(exc).__name__}: {exc}\n{traceback.format_exc(limit=3)}")


def run_experiment(cfg: ExperimentConfig) -> list[EvalReport]:
    """Every (dataset, mechanism, epsilon, seed) cell, in config order."""
    cells, failed = [], {}
    for ds in cfg.datasets:
        try:
            h = ds.build()
            qa = gen_queries(h.rows, h.cols, cfg.query_count, cfg.query_seed).queries
        except Exception as exc:
            h = qa = None
            failed[ds.name] = f"{type(exc).__name__}: {exc}"
        for mech in cfg.mechanisms:
            for eps in cfg.epsilons:
                for seed in cfg.seeds:
                    cells.append((mech, eps, ds.name, seed, h, qa, cfg.T, cfg.delta))
    todo = [c for c in cells if c[2] not in failed]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(cfg.jobs) as pool:
            done = iter(list(pool.map(_run_cell, todo)))
    else:
        done = iter([_run_cell(c) for c in todo])
    reports = [
        EvalReport(c[0], c[1], c[2], c[3], math.nan, math.nan, 0.0, -1, error=failed[c[2]])
        if c[2] in failed else next(done)
        for c in cells
    ]
    echo = cfg.echo()
    for r in reports:
        r.config = echo
    return reports


def summarize(reports: Iterable[EvalReport]) -> list[dict]:
    groups: dict[tuple, list[EvalReport]] = {}
    for r in reports:
        groups.setdefault((r.mechanism, r.epsilon, r.dataset), []).append(r)
    rows = []
    for (mech, eps, ds), rs in groups.items():
        ok = [r for r in rs if not r.error]
        l1 = np.array([r.avg_l1 for r in ok])
        kl = np.array([r.kld for r in ok])
        rows.append({
            "mechanism": mech, "epsilon": eps, "dataset": ds, "repetitions": len(ok),
            "avg_l1_mean": float(l1.mean()) if ok else math.nan,
            "avg_l1_std": float(l1.std(ddof=1)) if len(ok) > 1 else 0.0,
            "kld_mean": float(kl.mean()) if ok else math.nan,
            "kld_std": float(kl.std(ddof=1)) if len(ok) > 1 else 0.0,
        })
    return rows


def write_reports(reports: Iterable[EvalReport], stream: TextIO) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(REPORT_COLUMNS + ("error",))
    for r in reports:
        w.writerow([r.mechanism, r.epsilon, r.dataset, r.seed, repr(r.avg_l1), repr(r.kld),
                    f"{r.runtime_s:.6f}", r.violations, r.error.splitlines()[0] if r.error else ""])


def write_summary(rows: Iterable[dict], stream: TextIO) -> None:
    w = csv.DictWriter(stream, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow(row)

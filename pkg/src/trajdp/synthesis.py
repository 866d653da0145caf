"""Iterative private estimation of a spatial histogram.

Each round picks a badly answered query with the exponential mechanism,
measures its error under Laplace noise and rescales every region that
touches the query by ``exp(werr * density / (2n))``.  Consistency is then
restored by LP when the update broke it.

By default the rescaled counts are kept as they are, so the estimate's total
mass can move toward the data.  ``renormalize=True`` instead holds the face
total fixed, as in classic multiplicative weights.  Note that with a single
region that variant cancels every update exactly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .consistency import consistent_inference
from .histogram import SpatialHistogram, answer_queries, as_query_array, check_consistency
from .partition import PartitionSet, region_of
from .privacy import BudgetAccountant, NoiseSource, PrivacyBudget, derive_seed, exp_mechanism_select

UTILITY_SENSITIVITY = 1.0
DEFAULT_ITERATIONS = 10
# Growth budget for a whole run: T steps each clipped to 600/T keep the
# product of factors below e**600, well inside float64 range.
_TOTAL_EXPONENT = 600.0


@dataclass(frozen=True)
class SynthesisConfig:
    iterations: int
    budget: PrivacyBudget
    seed: int = 0
    noise: bool = True
    renormalize: bool = False

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.iterations != self.budget.iterations:
            raise ValueError("config iterations disagree with the budget's iteration count")


@dataclass
class SynthesisStep:
    iteration: int
    query: int
    werr: float
    violations: int
    repaired: bool
    repair_objective: float
    workload_error: float  # diagnostic only: computed against the true histogram


@dataclass
class SynthesisTrace:
    steps: list[SynthesisStep] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.steps)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(asdict(s)) + "\n" for s in self.steps)


def init_uniform(rows: int, cols: int, n: float) -> SpatialHistogram:
    cells = rows * cols
    return SpatialHistogram(
        np.full((rows, cols), n / cells),
        np.full((rows, cols - 1), n / (2 * cells)),
        np.full((rows - 1, cols), n / (2 * cells)),
        n,
    )


def score_queries(true_answers: np.ndarray, h_est: SpatialHistogram, queries) -> np.ndarray:
    """Absolute error of every query on the estimate; ``true_answers`` come from the real histogram."""
    return np.abs(np.asarray(true_answers) - answer_queries(h_est, queries))


def noisy_error(true_answer: float, est_answer: float, ns: NoiseSource, eps4: float, iterations: int) -> float:
    return float(true_answer + ns.laplace(iterations / eps4) - est_answer)


def update_factors(
    query, werr: float, ps: PartitionSet, n: float, max_exponent: float = _TOTAL_EXPONENT
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-entry multiplicative factors before renormalization."""
    r0, r1, c0, c1 = (int(v) for v in query)
    bounds = ps.region_bounds()
    hit = (bounds[:, 0] <= r1) & (r0 <= bounds[:, 1]) & (bounds[:, 2] <= c1) & (c0 <= bounds[:, 3])
    expo = np.where(hit, werr * ps.densities / (2.0 * max(n, 1.0)), 0.0)
    per_region = np.exp(np.clip(expo, -max_exponent, max_exponent))
    fm, vm, hm = region_of(ps)
    return per_region[fm], per_region[vm], per_region[hm]


def apply_update(
    h_est: SpatialHistogram,
    query,
    werr: float,
    ps: PartitionSet,
    n: float,
    renormalize: bool = False,
    max_exponent: float = _TOTAL_EXPONENT,
) -> SpatialHistogram:
    """Rescale every region touching ``query``.

    With ``renormalize`` the faces are scaled back to their previous total and
    the edges take the same global factor.
    """
    ff, fv, fh = update_factors(query, werr, ps, n, max_exponent)
    faces = h_est.faces * ff
    g = 1.0
    if renormalize:
        before, after = h_est.faces.sum(), faces.sum()
        g = before / after if after > 0 else 1.0
    return h_est.replace(faces=faces * g, edges_v=h_est.edges_v * fv * g, edges_h=h_est.edges_h * fh * g)


def synthesize(
    h_true: SpatialHistogram,
    queries,
    ps: PartitionSet,
    config: SynthesisConfig,
    ns: NoiseSource | None = None,
    accountant: BudgetAccountant | None = None,
) -> tuple[SpatialHistogram, SynthesisTrace]:
    qa = as_query_array(queries)
    if ns is None:
        ns = NoiseSource(derive_seed(config.seed, "synthesize"), enabled=config.noise)
    budget = config.budget
    T = config.iterations
    n = h_true.n
    truth = answer_queries(h_true, qa)
    est = init_uniform(h_true.rows, h_true.cols, n)
    trace = SynthesisTrace()
    for i in range(T):
        est_answers = answer_queries(est, qa)
        scores = np.abs(truth - est_answers)
        k = exp_mechanism_select(ns, scores, budget.select_share, UTILITY_SENSITIVITY)
        if accountant is not None:
            accountant.spend(f"select[{i}]", budget.select_share)
        werr = noisy_error(truth[k], est_answers[k], ns, budget.eps4, T)
        if accountant is not None:
            accountant.spend(f"measure[{i}]", budget.measure_share)
        est = apply_update(est, qa[k], werr, ps, n, config.renormalize, _TOTAL_EXPONENT / T)
        violations = check_consistency(est)
        repaired, objective = False, 0.0
        # Scale-downs are the expected source of violations.  Scale-ups can
        # break an edge whose owning region was hit while its other face was
        # not, so any violation is repaired.
        if violations:
            res = consistent_inference(est)
            est, objective, repaired = res.histogram, res.objective, True
        werr_all = float(np.abs(truth - answer_queries(est, qa)).mean())
        trace.steps.append(SynthesisStep(i, int(k), werr, len(violations), repaired, objective, werr_all))
    return est, trace

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trajdp.errors import BudgetError
from trajdp.evaluation import gen_queries
from trajdp.histogram import RangeQuery, answer_queries, check_consistency, eval_range_query
from trajdp.partition import PartitionSet, Region, partition
from trajdp.privacy import BudgetAccountant, NoiseSource, split_budget
from trajdp.synthesis import (
    SynthesisConfig,
    apply_update,
    init_uniform,
    noisy_error,
    score_queries,
    synthesize,
    update_factors,
)

QUIET = NoiseSource(0, enabled=False)


def one_region(side, density=1.0):
    return PartitionSet([Region(0, side - 1, 0, side - 1)], [density], 1.0, side, side)


def two_regions():
    return PartitionSet([Region(0, 1, 0, 0), Region(0, 1, 1, 1)], [1.0, 1.0], 1.0, 2, 2)


def test_init_uniform():
    h = init_uniform(2, 2, 4)
    assert np.all(h.faces == 1.0)
    assert np.all(h.edges_v == 0.5) and np.all(h.edges_h == 0.5)
    for r, c in [(4, 4), (8, 16), (1, 2)]:
        h = init_uniform(r, c, 37)
        assert check_consistency(h) == []
        assert h.faces.sum() == pytest.approx(37)


def test_score_queries(skewed_hist):
    q = gen_queries(16, 16, 200, 0).queries
    truth = answer_queries(skewed_hist, q)
    assert np.all(score_queries(truth, skewed_hist, q) == 0)
    est = init_uniform(16, 16, skewed_hist.n)
    s = score_queries(truth, est, q)
    for k in range(0, 200, 17):
        rq = RangeQuery(*q[k])
        assert s[k] == pytest.approx(abs(eval_range_query(skewed_hist, rq) - eval_range_query(est, rq)))


def test_noisy_error():
    assert noisy_error(5.0, 5.0, QUIET, 0.25, 10) == 0
    assert noisy_error(7.0, 3.0, QUIET, 0.25, 10) == 4
    # scale T / eps4 = 40: variance 2 * 40^2
    ns = NoiseSource(1)
    draws = np.array([noisy_error(0.0, 0.0, ns, 0.25, 10) for _ in range(100_000)])
    assert draws.var() == pytest.approx(3200, rel=0.05)


def test_update_zero_error_is_identity():
    h = init_uniform(4, 4, 10)
    out = apply_update(h, (0, 1, 0, 1), 0.0, one_region(4), 10)
    assert out.equals(h)


def test_update_single_region_factor():
    h = init_uniform(2, 2, 4)
    out = apply_update(h, (0, 0, 0, 0), 2.0, one_region(2), 4)
    # exp(werr * b / 2n) = exp(0.25) on every entry of the touched region
    np.testing.assert_allclose(out.faces, math.exp(0.25))
    np.testing.assert_allclose(out.edges_v, 0.5 * math.exp(0.25))
    # renormalized, a single region touched everywhere cancels
    ren = apply_update(h, (0, 0, 0, 0), 2.0, one_region(2), 4, renormalize=True)
    np.testing.assert_allclose(ren.faces, h.faces)


def test_update_two_regions_hand_computed():
    h = init_uniform(2, 2, 4)
    q = (0, 1, 0, 0)  # touches the left column only
    out = apply_update(h, q, 2.0, two_regions(), 4)
    a = math.exp(0.25)
    np.testing.assert_allclose(out.faces, [[a, 1.0], [a, 1.0]])
    np.testing.assert_allclose(out.edges_v, [[0.5 * a], [0.5 * a]])  # owned by the left region
    np.testing.assert_allclose(out.edges_h, [[0.5 * a, 0.5]])
    ren = apply_update(h, q, 2.0, two_regions(), 4, renormalize=True)
    g = 4 / (2 * a + 2)
    np.testing.assert_allclose(ren.faces, [[a * g, g], [a * g, g]])
    np.testing.assert_allclose(ren.edges_h, [[0.5 * a * g, 0.5 * g]])
    assert ren.faces[0, 0] / ren.faces[0, 1] == pytest.approx(a)


def test_update_uses_density():
    h = init_uniform(2, 2, 4)
    out = apply_update(h, (0, 0, 0, 0), 2.0, one_region(2, density=0.5), 4)
    np.testing.assert_allclose(out.faces, math.exp(0.125))
    out = apply_update(h, (0, 0, 0, 0), 2.0, one_region(2, density=0.0), 4)
    assert out.equals(h)


def test_update_exponent_is_clipped():
    ff, _, _ = update_factors((0, 0, 0, 0), 1e9, one_region(2), 1.0, max_exponent=60)
    assert np.all(ff == math.exp(60))


def full_grid_query(side):
    return np.array([[0, side - 1, 0, side - 1]])


def test_exact_start_no_update():
    h = init_uniform(4, 4, 16)
    b = split_budget(1.0, 1)
    est, trace = synthesize(h, full_grid_query(4), one_region(4), SynthesisConfig(1, b, noise=False))
    assert est.equals(h)
    assert trace.steps[0].werr == 0


def test_noise_free_descent(skewed_hist_8):
    h = skewed_hist_8
    b = split_budget(1.0, 10)
    q = gen_queries(8, 8, 2000, 0).queries
    ps = partition(h, b, QUIET)
    _, trace = synthesize(h, q, ps, SynthesisConfig(10, b, noise=False))
    start = np.abs(answer_queries(h, q) - answer_queries(init_uniform(8, 8, h.n), q)).mean()
    errs = [start] + [s.workload_error for s in trace.steps]
    assert sum(b <= a for a, b in zip(errs, errs[1:])) >= 8


def run(h, eps, seed, T=10, q=None):
    q = gen_queries(h.rows, h.cols, 500, 3).queries if q is None else q
    b = split_budget(eps, T)
    ps = partition(h, b, NoiseSource(seed).spawn("partition"))
    acc = BudgetAccountant(eps)
    acc.spend("partition", b.eps1)
    acc.spend("density", b.eps2)
    est, trace = synthesize(h, q, ps, SynthesisConfig(T, b, seed=seed), accountant=acc)
    return est, trace, acc


def test_seeded_runs_repeat(skewed_hist):
    a, ta, _ = run(skewed_hist, 0.5, 4)
    b, tb, _ = run(skewed_hist, 0.5, 4)
    assert a.equals(b)
    assert ta.to_jsonl() == tb.to_jsonl()


def test_trace_jsonl(skewed_hist):
    _, trace, _ = run(skewed_hist, 0.5, 1)
    lines = trace.to_jsonl().splitlines()
    assert len(lines) == len(trace) == 10
    rec = json.loads(lines[0])
    assert set(rec) == {"iteration", "query", "werr", "violations", "repaired", "repair_objective", "workload_error"}


def test_budget_spent_exactly(skewed_hist):
    _, _, acc = run(skewed_hist, 0.3, 2)
    acc.assert_exhausted()
    labels = [label for label, _ in acc.spends]
    assert labels.count("partition") == 1 and sum(lb.startswith("select") for lb in labels) == 10


def test_accountant_blocks_overspend(skewed_hist):
    b = split_budget(1.0, 10)
    ps = partition(skewed_hist, b, NoiseSource(0))
    acc = BudgetAccountant(0.4)  # synthesis alone needs eps3 + eps4 = 0.5
    with pytest.raises(BudgetError):
        synthesize(skewed_hist, gen_queries(16, 16, 50, 0).queries, ps, SynthesisConfig(10, b), accountant=acc)


def test_config_validation():
    with pytest.raises(ValueError):
        SynthesisConfig(0, split_budget(1.0, 1))
    with pytest.raises(ValueError):
        SynthesisConfig(5, split_budget(1.0, 10))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([0.01, 0.1, 1.0, 10.0]))
def test_output_consistent_and_non_negative(skewed_hist_8, seed, eps):
    est, trace, _ = run(skewed_hist_8, eps, seed, T=5)
    assert check_consistency(est) == []
    assert est.flat().min() >= 0
    assert all(np.isfinite(s.workload_error) for s in trace.steps)

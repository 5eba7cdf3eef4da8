import math

import numpy as np
import pytest

from elastitune.analysis import g_value
from elastitune.stream_model import (
    ArrivalDistribution,
    assign_buckets,
    assignment_from_buckets,
    derive_seed,
    make_uniform,
    make_zipf,
)
from elastitune.tuning import (
    candidate_set,
    candidate_union,
    cm_width,
    grid_search,
    hp_bound,
    lambda_hat_star,
    lambda_star,
    lambda_star_uniform,
    min_argmax,
)


def test_min_argmax_prefers_first():
    assert min_argmax([0.1, 0.5, 0.5, 0.2]) == 1
    assert min_argmax([0.3, 0.3 + 1e-14]) == 0


def test_candidates_from_lambda1():
    d = ArrivalDistribution(np.array([0.4, 0.3, 0.2, 0.1]))
    # buckets (0.4, 0.2) and (0.3, 0.1): lambda1 = 0.5 and 1/3
    assert candidate_set(assignment_from_buckets(d, [0, 1, 0, 1])).values == (1,)
    # (0.4, 0.3, 0.2) plus a singleton: lambda1 = 1.25 and 0
    a = assignment_from_buckets(d, [0, 0, 0, 1])
    assert math.isclose(a.lambda1_b[0], 1.25)
    assert candidate_set(a).values == (1, 2)


def test_candidates_fractional_thresholds():
    raw = np.array([0.2, 0.15, 0.15, 0.1, 0.08, 0.08, 0.08, 0.08])
    d = ArrivalDistribution(raw / raw.sum())
    a = assignment_from_buckets(d, [0, 0, 0, 1, 1, 1, 1, 1])
    np.testing.assert_allclose(a.lambda1_b, [1.5, 3.2], rtol=1e-12)
    assert candidate_set(a).values == (2, 4)


def test_candidates_all_singletons():
    a = assignment_from_buckets(make_uniform(3), [0, 1, 2])
    assert candidate_set(a).values == (1,)


def test_candidate_union_rejects_empty():
    with pytest.raises(ValueError):
        candidate_union([])


def test_lambda_star_single_uniform_bucket():
    for n in (2, 5, 9):
        a = assignment_from_buckets(make_uniform(n), [0] * n)
        assert lambda_star(a).lambda_star == n


def test_lambda_star_matches_exhaustive_search():
    a = assign_buckets(make_zipf(12, 1.0), 3, 42)
    top = int(a.n_b.max())
    gs = [g_value(a, lam) for lam in range(1, top + 1)]
    assert lambda_star(a).lambda_star == 1 + min_argmax(gs)
    assert lambda_star(a, dense=True).lambda_star == lambda_star(a).lambda_star


def test_lambda_star_uniform_equals_candidate_search():
    dist = make_uniform(40)
    for seed in range(10):
        a = assign_buckets(dist, 4, seed)
        assert lambda_star(a).lambda_star == lambda_star_uniform(a)


def test_lambda_star_uniform_examples():
    assert lambda_star_uniform(assign_buckets(make_uniform(17), 1, 0)) == 17
    a = assignment_from_buckets(make_uniform(4), [0, 0, 0, 1])
    assert lambda_star_uniform(a) == 3


def test_lambda_hat_star_single_seed_and_argmax():
    dist = make_zipf(500, 1.0)
    one = lambda_hat_star(dist, 20, [9])
    ref = lambda_star(assign_buckets(dist, 20, 9))
    assert one.lambda_star == ref.lambda_star
    res = lambda_hat_star(dist, 20, [derive_seed(0, k) for k in range(8)])
    gs = dict(res.table)
    assert all(res.g_at_star >= g for g in gs.values())
    again = lambda_hat_star(dist, 20, [derive_seed(0, k) for k in range(8)])
    assert again.to_dict() == res.to_dict()


def test_hp_bound_values():
    b = hp_bound(10_000, 200, 0.05)
    assert abs(b - 81.56) < 0.01
    assert hp_bound(5, 1, 1 - 1e-12) == pytest.approx(5, abs=1e-5)
    with pytest.raises(ValueError):
        hp_bound(10, 2, 1.0)


def test_cm_width():
    assert cm_width(1000, 3, 1, 0) == 1000
    assert cm_width(1000, 3, 2, 10) == 485


def test_grid_search_baseline_only():
    res = grid_search(make_zipf(100, 1.0), 500, 3, 2, [0], [1, 2])
    assert (res.m1, res.m2) == (0, 250)
    assert res.expected_error == 1 / 250


def test_grid_search_wasted_heavy_block():
    # every bucket holds many equiprobable items, so lambda = 1 never elects
    res = grid_search(make_uniform(100), 400, 3, 1, [0, 2], [5, 6], lam=1)
    assert res.configs[1]["g_hat"] == 0.0
    assert res.m1 == 0


def test_grid_search_invalid_budget():
    with pytest.raises(ValueError):
        grid_search(make_zipf(10, 1.0), 30, 3, 1, [0, 10], [1])


def test_grid_search_deterministic_and_optimal():
    dist = make_zipf(2000, 1.2)
    seeds = [derive_seed(3, k) for k in range(5)]
    res = grid_search(dist, 1000, 3, 1, [0, 25, 50, 100, 200], seeds)
    again = grid_search(dist, 1000, 3, 1, [0, 25, 50, 100, 200], seeds)
    assert res.to_dict() == again.to_dict()
    assert res.expected_error == min(c["expected_error"] for c in res.configs)
    assert res.m1 > 0

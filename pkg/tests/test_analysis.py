import math
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from elastitune.analysis import (
    BucketClass,
    RootFindingError,
    classify_buckets,
    election_probs,
    expected_limiting_error,
    g_beta,
    g_curve,
    g_value,
    phi,
    root_r,
    root_r_array,
    top_mass,
    weight_w,
)
from elastitune.stream_model import (
    assign_buckets,
    assignment_from_buckets,
    make_profile,
    make_uniform,
    make_zipf,
)


def bisect(f, lo, hi, n=200):
    for _ in range(n):
        mid = (lo + hi) / 2
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


def test_phi_values():
    assert phi(0.0, 2.7) == 1.0
    assert phi(1.0, 3) == 4.0
    assert math.isclose(phi(0.5, 3), 1.875, rel_tol=1e-15)
    assert math.isclose(phi(1 - 1e-12, 5), 6.0, rel_tol=1e-10)


def test_phi_matches_geometric_sum():
    for lam in range(1, 65):
        for x in (0.1, 0.5, 0.9, 0.999):
            ref = math.fsum(x**k for k in range(lam + 1))
            assert math.isclose(phi(x, lam), ref, rel_tol=1e-12)


def test_phi_domain():
    with pytest.raises(ValueError):
        phi(1.5, 2)
    with pytest.raises(ValueError):
        phi(0.5, 0)


def test_root_r_examples():
    assert root_r(3, 4) == 1.0
    assert root_r(3, 1) == 0.0
    ref = bisect(lambda x: 1 + x + x * x + x**3 - 2, 0.0, 1.0)
    assert abs(root_r(3, 2) - ref) <= 1e-9
    assert abs(root_r(3, 2) - 0.5437) < 1e-4


def test_root_r_real_lambda_and_residual():
    lam = np.linspace(1, 50, 40)
    z = np.minimum(40, 1 + 0.7 * lam)
    r = root_r_array(lam, z)
    assert np.all(np.abs(phi(r, lam) - z) <= 1e-10)


def test_root_r_monotone():
    lams = np.arange(1, 30)
    zs = np.linspace(1.05, 25, 30)
    grid = root_r_array(lams[:, None], zs[None, :])
    assert np.all(np.diff(grid, axis=0) <= 1e-15)
    assert np.all(np.diff(grid, axis=1) >= -1e-15)


def test_root_r_rejects_z_below_one():
    with pytest.raises(ValueError):
        root_r(3, 0.5)
    assert issubclass(RootFindingError, ArithmeticError)


def test_weight_w_examples():
    assert weight_w(3, 4) == 0.0
    assert weight_w(5, 1) == 1.0
    assert math.isclose(weight_w(3, 2), 1 - root_r(3, 2) ** 3, rel_tol=1e-14)
    assert abs(weight_w(3, 2) - 0.8393) < 1e-4


def test_election_probs_small_cases():
    assert election_probs(make_profile([1.0], items=[7]), 4) == {7: 1.0}
    a = election_probs(make_profile([1 / 3] * 3), 3)
    assert all(math.isclose(v, 1 / 3, rel_tol=1e-12) for v in a.values())
    # lambda equal to every lambda_i: boundary gives zero weight (MINUS bucket)
    assert set(election_probs(make_profile([1 / 3] * 3), 2).values()) == {0.0}


@settings(max_examples=60, deadline=None)
@given(n=st.integers(2, 8), lam=st.integers(1, 20), seed=st.integers(0, 2**31))
def test_election_probs_sum_to_one(n, lam, seed):
    p = np.random.default_rng(seed).dirichlet(np.ones(n))
    prof = make_profile(p)
    a = np.array(list(election_probs(prof, lam).values()))
    assert np.all((a >= 0) & (a <= 1))
    if prof.lambda1 < lam:
        assert abs(a.sum() - 1) <= 1e-10
    else:
        assert a.sum() == 0


def test_classification():
    dist = make_uniform(6)
    a = assignment_from_buckets(dist, [0, 0, 0, 1, 1, 3], m1=4)
    cls = classify_buckets(a, 2)
    assert cls.tolist() == [BucketClass.MINUS, BucketClass.PLUS, BucketClass.EMPTY,
                            BucketClass.PLUS]


def test_g_uniform_single_bucket():
    a = assignment_from_buckets(make_uniform(3), [0, 0, 0])
    assert math.isclose(g_value(a, 3), 1 / 3, rel_tol=1e-12)
    assert g_value(a, 2) == 0.0


def test_g_profile_consistency():
    dist = make_zipf(300, 1.1)
    a = assign_buckets(dist, 20, 5)
    for lam in (1, 3, 8, 20):
        prof = g_beta(a, lam)
        assert math.isclose(prof.g, g_value(a, lam), rel_tol=1e-12)
        assert 0 <= prof.g <= top_mass(a) + 1e-12
        for b in a.nonempty():
            probs = prof.bucket_probs(b)
            total = sum(probs.values())
            if prof.classes[b] == BucketClass.PLUS:
                assert abs(total - 1) <= 1e-10
            else:
                assert total == 0 and prof.g_b[b] == 0
        assert prof.to_dict()["g_beta"] == prof.g


def test_per_bucket_monotone_between_breakpoints():
    dist = make_zipf(60, 0.9)
    a = assign_buckets(dist, 4, 11)
    for b in a.nonempty():
        prof = a.profile(b)
        breaks = np.sort(np.unique(prof.lambda_i))
        grid = np.linspace(prof.lambda1 + 1e-6, breaks[-1] + 20, 400)
        vals = []
        for lam in grid:
            e = election_probs(prof, lam)
            vals.append(sum(e[int(i)] * p for i, p in zip(prof.items, prof.probs)))
        vals = np.array(vals)
        seg = np.searchsorted(breaks, grid, side="left")
        for s in np.unique(seg):
            v = vals[seg == s]
            assert np.all(np.diff(v) <= 1e-12), (b, s)


def test_expected_error():
    assert expected_limiting_error(0.0, 7) == 1 / 7
    assert expected_limiting_error(1.0, 7) == 0.0
    assert math.isclose(expected_limiting_error(1 / 3, 300), 1 / 450, rel_tol=1e-14)


def test_g_curve_bounds():
    a = assign_buckets(make_zipf(1000, 1.2), 30, 1)
    g = g_curve(a, range(1, 40))
    assert np.all((g >= 0) & (g <= 1))


def test_g_scales_linearly():
    def wall(n):
        a = assign_buckets(make_zipf(n, 1.0), 200, 3)
        g_value(a, 5)
        best = float("inf")
        for _ in range(5):
            t0 = time.perf_counter()
            g_value(a, 5)
            best = min(best, time.perf_counter() - t0)
        return best

    small, large = wall(100_000), wall(200_000)
    assert large <= 3.0 * small

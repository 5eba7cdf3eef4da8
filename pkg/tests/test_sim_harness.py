import math
from pathlib import Path

import numpy as np
import pytest

from elastitune import reporting
from elastitune.analysis import election_probs, g_value, root_r
from elastitune.sketch_core import SketchConfig
from elastitune.sim_harness import (
    cm_cell_limit_check,
    escape_level,
    markov_election_oracle,
    run_once,
    sweep_lambda,
    walk_return_oracle,
)
from elastitune.stream_model import (
    ArrivalDistribution,
    StreamSpec,
    assign_buckets,
    make_profile,
    make_uniform,
    make_zipf,
)

GOLDEN = Path(__file__).parent / "data" / "golden_sweep.csv"


def _tiny_sweep():
    dist = make_zipf(40, 1.1)
    return sweep_lambda(dist, SketchConfig(4, 10, lam=1, beta_seed=3), [1, 2, 4, 8], 2000, 3, 77)


def test_single_item_stream():
    m = run_once(SketchConfig(3, 5, lam=2), StreamSpec(500, ArrivalDistribution(np.ones(1)), 1))
    assert m.v_bar == 1.0 and m.are == 0.0 and m.err0_mean == 0.0


def test_m1_zero_baseline():
    m = run_once(SketchConfig(0, 64), StreamSpec(10_000, make_zipf(100, 1.0), 4))
    assert m.v_bar == 0.0
    assert m.err0_mean == 1 / 64


def test_error_identity_exact():
    dist = make_zipf(300, 1.0)
    for k, m1 in enumerate((1, 8, 32)):
        cfg = SketchConfig(m1, 23, lam=3, beta_seed=k)
        m = run_once(cfg, StreamSpec(7919, dist, k))
        assert abs(m.err0_mean - (1 - m.v_bar) / 23) <= 4 * np.finfo(float).eps


def test_run_once_reproducible():
    cfg = SketchConfig(10, 30, d=2, lam=4, beta_seed=2)
    spec = StreamSpec(5000, make_zipf(200, 1.0), 8)
    assert run_once(cfg, spec).to_dict() == run_once(cfg, spec).to_dict()


def test_sweep_common_streams_and_workers():
    a = _tiny_sweep()
    dist = make_zipf(40, 1.1)
    b = sweep_lambda(dist, SketchConfig(4, 10, lam=1, beta_seed=3), [1, 2, 4, 8], 2000, 3, 77,
                     workers=3)
    np.testing.assert_array_equal(a.vbar, b.vbar)
    assert a.manifest["stream_seeds"] == b.manifest["stream_seeds"]
    assert len(a.rows()) == 4 and a.n_runs == 3


def test_sweep_golden_csv():
    rows = _tiny_sweep().rows()
    text = reporting.csv_text(rows)
    assert text == GOLDEN.read_text()


def test_sweep_resampled_beta_theory_is_average():
    dist = make_zipf(60, 1.0)
    res = sweep_lambda(dist, SketchConfig(5, 10, beta_seed=0), [2, 3], 1000, 4, 5,
                       resample_beta=True)
    assert res.manifest["resample_beta"]
    assert np.all((res.theory >= 0) & (res.theory <= 1))


def test_all_minus_regime_gives_small_heavy_mass():
    dist = make_uniform(200)
    a = assign_buckets(dist, 4, 1)
    assert g_value(a, 1) == 0.0
    res = sweep_lambda(dist, SketchConfig(4, 50, beta_seed=1), [1], 100_000, 5, 3)
    assert res.vbar_mean[0] < 0.01


def test_theory_tracks_simulation_desk_scale():
    dist = make_zipf(2000, 1.2)
    a = assign_buckets(dist, 50, 4)
    lams = sorted(set(range(1, 12)))
    res = sweep_lambda(dist, SketchConfig(50, 100, beta_seed=4), lams, 200_000, 10, 9)
    assert res.mean_abs_deviation <= 0.03
    np.testing.assert_allclose(res.theory, [g_value(a, x) for x in lams])


def test_escape_level():
    assert escape_level(1.0) == -1
    assert escape_level(0.0) == 0
    L = escape_level(0.5)
    assert 0.5**L < 1e-6 <= 0.5 ** (L - 1)


def test_election_oracle_singleton_and_symmetry():
    one = markov_election_oracle(make_profile([0.3], mu=0.3, items=[4]), 2, n_trials=100)
    assert one.freqs == {4: 1.0}
    res = markov_election_oracle(make_profile([0.5, 0.5]), 2, n_trials=20_000, seed=3)
    for f in res.freqs.values():
        assert abs(f - 0.5) <= 3 * math.sqrt(0.25 / 20_000)


def test_election_oracle_four_item_profile():
    prof = make_profile([0.4, 0.3, 0.2, 0.1])
    formula = election_probs(prof, 2)
    res = markov_election_oracle(prof, 2, n_trials=100_000, seed=1)
    assert res.unresolved_fraction < 1e-3
    for i, a in formula.items():
        assert abs(res.freqs[i] - a) <= 0.02


def test_election_oracle_rejects_bad_mass():
    with pytest.raises(ValueError):
        markov_election_oracle(make_profile([0.2, 0.1], mu=0.5), 2)


def test_walk_oracle_regimes():
    res = walk_return_oracle(0.25, 0.5, 3, n_trials=50_000, seed=2)
    r = root_r(3, 2)
    assert abs(res.estimate - r) <= 3 * res.stderr + 1e-12
    rec = walk_return_oracle(0.1, 0.5, 2, n_trials=5000, seed=2)
    assert rec.escape_level == -1 and rec.estimate == 1.0
    two = walk_return_oracle(0.25, 0.5, 3, n_trials=50_000, seed=5, start=2)
    assert abs(two.estimate - r**2) <= 3 * two.stderr


def test_cell_limit_baseline_and_single_item():
    dist = make_zipf(50, 1.0)
    rep = cm_cell_limit_check(SketchConfig(0, 8), dist, 50_000, 5, 1)
    assert rep.ok
    single = cm_cell_limit_check(SketchConfig(1, 3, lam=2), ArrivalDistribution(np.ones(1)),
                                 1000, 3, 1)
    assert np.all(single.observed == 0) and np.all(single.limit == 0)


def test_cell_limit_zipf():
    rep = cm_cell_limit_check(SketchConfig(20, 50, lam=4, beta_seed=2), make_zipf(500, 1.0),
                              1_000_000, 8, 6)
    assert rep.ok, (rep.max_deviation, rep.stderr)


def test_are_decreases_in_m2():
    dist = make_zipf(1000, 1.0)
    small = sweep_lambda(dist, SketchConfig(20, 50, beta_seed=1), [4], 50_000, 30, 2)
    large = sweep_lambda(dist, SketchConfig(20, 200, beta_seed=1), [4], 50_000, 30, 2)
    assert large.are.mean() < small.are.mean()


def test_are_variance_grows_with_lambda():
    dist = make_zipf(20_000, 1.2)
    res = sweep_lambda(dist, SketchConfig(20, 100, beta_seed=1), [5, 50], 100_000, 30, 3)
    iqr = res.are_iqr()
    assert iqr[1] > iqr[0]

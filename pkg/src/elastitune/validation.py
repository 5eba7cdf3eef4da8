"""Desk-scale self-checks behind ``elastitune validate``.

Each family returns a :class:`CheckResult`; sizes are small enough for
the full suite to finish in well under a minute.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .analysis import election_probs, g_value, phi, root_r, root_r_array
from .sketch_core import ElasticSketch, InvariantViolation, SketchConfig
from .sim_harness import markov_election_oracle, run_once, sweep_lambda, walk_return_oracle
from .stream_model import (
    StreamSpec,
    assign_buckets,
    derive_seed,
    make_profile,
    make_rng,
    make_uniform,
    make_zipf,
    sample_stream,
)
from .tuning import candidate_set, hp_bound, lambda_star, lambda_star_uniform, min_argmax


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: dict = field(default_factory=dict)
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "seconds": round(self.seconds, 3),
                "detail": self.detail}


def check_root_residual(seed: int = 0) -> CheckResult:
    rng = make_rng(seed)
    lam = rng.uniform(1, 50, 200)
    z = rng.uniform(1.01, np.minimum(40, lam + 1))
    r = root_r_array(lam, z)
    resid = np.abs(np.asarray(phi(r, lam)) - z)
    worst = float(resid.max())
    return CheckResult("root-residual", worst <= 1e-10, {"max_residual": worst})


def check_election_oracle(n_buckets: int = 5, n_trials: int = 20_000, seed: int = 0) -> CheckResult:
    rng = make_rng(seed)
    worst = 0.0
    cases = 0
    while cases < n_buckets:
        n = int(rng.integers(2, 6))
        prof = make_profile(rng.dirichlet(np.ones(n)))
        lam = int(rng.integers(1, 9))
        if not prof.lambda1 < lam:
            continue
        formula = election_probs(prof, lam)
        res = markov_election_oracle(prof, lam, n_trials, seed=derive_seed(seed, cases))
        for i, a in formula.items():
            se = math.sqrt(max(a * (1 - a), 1e-12) / n_trials)
            worst = max(worst, abs(res.freqs[i] - a) / se)
        cases += 1
    return CheckResult("election-oracle", worst <= 4.0, {"max_z_score": worst, "buckets": cases})


def check_walk_oracle(n_trials: int = 20_000, seed: int = 0) -> CheckResult:
    triples = [(0.25, 0.5, 3), (0.2, 0.9, 5), (0.1, 0.5, 2), (0.3, 0.6, 1)]
    worst = 0.0
    for k, (p, mu, lam) in enumerate(triples):
        r = root_r(lam, mu / p)
        res = walk_return_oracle(p, mu, lam, n_trials, seed=derive_seed(seed, k))
        se = max(res.stderr, math.sqrt(max(r * (1 - r), 1e-12) / n_trials))
        worst = max(worst, abs(res.estimate - r) / se)
    return CheckResult("walk-oracle", worst <= 4.0, {"max_z_score": worst})


def check_mass_conservation(n_configs: int = 5, tau: int = 20_000, seed: int = 0,
                            corrupt: bool = False) -> CheckResult:
    """Instrumented runs; ``corrupt`` flips one counter to prove the detector fires."""
    rng = make_rng(seed)
    failures = []
    for k in range(n_configs):
        cfg = SketchConfig(int(rng.integers(0, 20)), int(rng.integers(5, 60)),
                           int(rng.integers(1, 4)), int(rng.integers(1, 10)),
                           derive_seed(seed, k))
        dist = make_zipf(int(rng.integers(20, 500)), float(rng.uniform(0.5, 1.5)))
        stream = sample_stream(StreamSpec(tau, dist, derive_seed(seed, 100 + k)))
        sk = ElasticSketch(cfg, dist.n_items, instrumented=True, check_every=256)
        try:
            sk.update_many(stream[: tau // 2])
            if corrupt:
                sk.state.cm[0, 0] += 1
            sk.update_many(stream[tau // 2:])
        except InvariantViolation as exc:
            failures.append({"config": cfg.to_dict(), "error": str(exc)})
    return CheckResult("mass-conservation", not failures,
                       {"configs": n_configs, "failures": failures[:3]})


def check_error_identity(seed: int = 0) -> CheckResult:
    dist = make_zipf(500, 1.1)
    worst = 0.0
    for k, m1 in enumerate((0, 10, 40)):
        cfg = SketchConfig(m1, 37, 1, 4, derive_seed(seed, k))
        m = run_once(cfg, StreamSpec(20_000, dist, derive_seed(seed, 50 + k)))
        worst = max(worst, abs(m.err0_mean - (1 - m.v_bar) / cfg.m2))
    return CheckResult("error-identity", worst <= 1e-15, {"max_gap": worst})


def check_membership(n_instances: int = 50, seed: int = 0) -> CheckResult:
    rng = make_rng(seed)
    violations = 0
    for k in range(n_instances):
        n = int(rng.integers(2, 51))
        dist = make_zipf(n, float(rng.uniform(0, 2)))
        a = assign_buckets(dist, int(rng.integers(1, 6)), derive_seed(seed, k))
        top = int(a.n_b.max())
        gs = [g_value(a, lam) for lam in range(1, top + 1)]
        best = 1 + min_argmax(gs)
        if best not in candidate_set(a).values or lambda_star(a).lambda_star > top:
            violations += 1
    return CheckResult("membership", violations == 0,
                       {"instances": n_instances, "violations": violations})


def check_hp_coverage(n_seeds: int = 200, seed: int = 0) -> CheckResult:
    dist = make_uniform(10_000)
    bound = hp_bound(10_000, 200, 0.05)
    over = sum(lambda_star_uniform(assign_buckets(dist, 200, derive_seed(seed, k))) > bound
               for k in range(n_seeds))
    frac = over / n_seeds
    return CheckResult("hp-coverage", frac <= 0.08, {"bound": bound, "fraction_over": frac})


def check_theory_vs_sim(seed: int = 0) -> CheckResult:
    dist = make_zipf(2000, 1.2)
    a = assign_buckets(dist, 50, seed)
    lams = list(candidate_set(a).values)
    res = sweep_lambda(dist, SketchConfig(50, 100, 1, 1, seed), lams, 100_000, 10,
                       derive_seed(seed, 7))
    return CheckResult("theory-vs-sim", res.mean_abs_deviation <= 0.03, res.summary())


SUITES = {
    "root-residual": check_root_residual,
    "election-oracle": check_election_oracle,
    "walk-oracle": check_walk_oracle,
    "mass-conservation": check_mass_conservation,
    "error-identity": check_error_identity,
    "membership": check_membership,
    "hp-coverage": check_hp_coverage,
    "theory-vs-sim": check_theory_vs_sim,
}


def run_suites(only: list[str] | None = None, seed: int = 0,
               inject_corruption: bool = False) -> list[CheckResult]:
    names = only or list(SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise ValueError(f"unknown check families {unknown}; choose from {sorted(SUITES)}")
    results = []
    for name in names:
        start = time.perf_counter()
        if name == "mass-conservation":
            res = check_mass_conservation(seed=seed, corrupt=inject_corruption)
        else:
            res = SUITES[name](seed=seed)
        res.seconds = time.perf_counter() - start
        results.append(res)
    return results

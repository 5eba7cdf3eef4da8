"""Stream simulation, finite-time metrics and Markov-chain oracles.

Runs are keyed by derived seeds (run ``k`` of master seed ``s`` uses
``derive_seed(s, k)``) so any run can be replayed on its own, and results
are always reduced in run order.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

from .analysis import BucketClass, classify_buckets, g_value, root_r
from .sketch_core import NONE, ElasticSketch, HashTables, SketchConfig, average_relative_error
from .stream_model import (
    ArrivalDistribution,
    BucketProfile,
    StreamSpec,
    assign_buckets,
    derive_seed,
    make_rng,
    sample_stream,
)

ESCAPE_RESIDUAL = 1e-6
UNRESOLVED_MAX = 1e-3


@dataclass
class RunMetrics:
    tau: int
    v_bar: float
    are: float
    err0_mean: float
    elected_final: list[int | None]

    def to_dict(self) -> dict:
        return {
            "tau": self.tau, "v_bar": self.v_bar, "are": self.are,
            "err0_mean": self.err0_mean, "elected_final": self.elected_final,
        }


def _metrics(sketch: ElasticSketch, counts: np.ndarray, err_rng, err_samples: int) -> RunMetrics:
    tau = sketch.state.t
    if tau == 0:
        return RunMetrics(0, 0.0, 0.0, 0.0, [None] * sketch.config.m1)
    v_bar = sketch.heavy_mass() / tau
    if sketch.config.d == 1:
        # exact average over the uniform column, i.e. row mass / (m2 * tau)
        err0 = float(sketch.state.cm[0].sum()) / (sketch.config.m2 * tau)
    else:
        draws = [sketch.sample_err0(err_rng) for _ in range(err_samples)]
        err0 = float(np.mean(draws)) / tau
    are = average_relative_error(sketch.estimate_all(), counts)
    elected = [None if s == NONE else int(s) for s in sketch.state.elected]
    return RunMetrics(tau, v_bar, are, err0, elected)


def run_once(config: SketchConfig, spec: StreamSpec, instrumented: bool = False,
             check_every: int = 1024, err_samples: int = 1000,
             tables: HashTables | None = None) -> RunMetrics:
    """Stream ``spec.tau`` arrivals through a fresh sketch and measure it.

    When instrumented, the finite-time counter identity and row mass
    conservation are asserted every ``check_every`` steps and at the end;
    a violation raises :class:`InvariantViolation` carrying a snapshot.
    """
    stream = sample_stream(spec)
    sketch = ElasticSketch(config, spec.dist.n_items, instrumented=instrumented,
                           check_every=check_every, tables=tables)
    sketch.update_many(stream)
    counts = np.bincount(stream, minlength=spec.dist.n_items)
    return _metrics(sketch, counts, make_rng(derive_seed(spec.seed, 0xE7)), err_samples)


# ---------------------------------------------------------------------------
# lambda sweeps
# ---------------------------------------------------------------------------


@dataclass
class TheoryVsSim:
    lambdas: list[int]
    theory: np.ndarray
    vbar: np.ndarray  # (n_runs, n_lambdas)
    are: np.ndarray  # (n_runs, n_lambdas)
    err0: np.ndarray  # (n_runs, n_lambdas)
    manifest: dict = field(default_factory=dict)

    @property
    def n_runs(self) -> int:
        return self.vbar.shape[0]

    @property
    def vbar_mean(self) -> np.ndarray:
        return self.vbar.mean(axis=0)

    @property
    def vbar_stderr(self) -> np.ndarray:
        return self.vbar.std(axis=0, ddof=1) / math.sqrt(self.n_runs)

    @property
    def deviation(self) -> np.ndarray:
        return self.theory - self.vbar_mean

    @property
    def mean_abs_deviation(self) -> float:
        return float(np.mean(np.abs(self.deviation)))

    @property
    def max_abs_deviation(self) -> float:
        return float(np.max(np.abs(self.deviation)))

    def empirical_argmax(self) -> int:
        from .tuning import min_argmax

        return self.lambdas[min_argmax(self.vbar_mean)]

    def are_iqr(self) -> np.ndarray:
        q1, q3 = np.percentile(self.are, [25, 75], axis=0)
        return q3 - q1

    def rows(self) -> list[dict]:
        q1, med, q3 = np.percentile(self.are, [25, 50, 75], axis=0)
        return [
            {
                "lambda": lam,
                "g_theory": float(self.theory[j]),
                "vbar_mean": float(self.vbar_mean[j]),
                "vbar_stderr": float(self.vbar_stderr[j]),
                "are_mean": float(self.are[:, j].mean()),
                "are_q1": float(q1[j]),
                "are_median": float(med[j]),
                "are_q3": float(q3[j]),
            }
            for j, lam in enumerate(self.lambdas)
        ]

    def summary(self) -> dict:
        return {
            "n_runs": self.n_runs,
            "mean_abs_deviation": self.mean_abs_deviation,
            "max_abs_deviation": self.max_abs_deviation,
            "empirical_argmax": self.empirical_argmax(),
        }


def _sweep_run(k, dist, template, lambdas, tau, master_seed, resample_beta, tables_cache):
    stream_seed = derive_seed(master_seed, k)
    if resample_beta:
        template = _with_beta(template, derive_seed(master_seed ^ 0xB5, k))
        tables = HashTables.build(template, dist.n_items)
    else:
        tables = tables_cache
    stream = sample_stream(StreamSpec(tau, dist, stream_seed))
    counts = np.bincount(stream, minlength=dist.n_items)
    err_rng = make_rng(derive_seed(stream_seed, 0xE7))
    out = []
    for lam in lambdas:
        sk = ElasticSketch(template.with_lambda(lam), dist.n_items, tables=tables)
        sk.update_many(stream)
        out.append(_metrics(sk, counts, err_rng, 200))
    return template.beta_seed, out


def _with_beta(cfg: SketchConfig, beta_seed: int) -> SketchConfig:
    return SketchConfig(cfg.m1, cfg.m2, cfg.d, cfg.lam, beta_seed)


def sweep_lambda(dist: ArrivalDistribution, template: SketchConfig, lambdas, tau: int,
                 n_runs: int, master_seed: int, resample_beta: bool = False,
                 workers: int = 1) -> TheoryVsSim:
    """Mean finite-time heavy mass per threshold against ``g_beta``.

    Every threshold sees the same ``n_runs`` streams. By default the bucket
    hash is fixed to ``template.beta_seed``; with ``resample_beta`` each run
    draws its own hash and the theory curve averages ``g`` over them.
    """
    if n_runs < 2:
        raise ValueError("need at least two runs for standard errors")
    lambdas = [int(x) for x in lambdas]
    tables = None if resample_beta else HashTables.build(template, dist.n_items)

    def task(k):
        return _sweep_run(k, dist, template, lambdas, tau, master_seed, resample_beta, tables)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(task, range(n_runs)))
    else:
        results = [task(k) for k in range(n_runs)]
    vbar = np.array([[m.v_bar for m in ms] for _, ms in results])
    are = np.array([[m.are for m in ms] for _, ms in results])
    err0 = np.array([[m.err0_mean for m in ms] for _, ms in results])
    beta_seeds = sorted({b for b, _ in results}) if resample_beta else [template.beta_seed]
    if template.m1 == 0:
        theory = np.zeros(len(lambdas))
    else:
        assignments = [assign_buckets(dist, template.m1, b) for b in beta_seeds]
        theory = np.array([np.mean([g_value(a, lam) for a in assignments]) for lam in lambdas])
    manifest = {
        "dist": dist.label, "n_items": dist.n_items, "config": template.to_dict(),
        "lambdas": lambdas, "tau": tau, "n_runs": n_runs, "master_seed": master_seed,
        "resample_beta": resample_beta,
        "stream_seeds": [derive_seed(master_seed, k) for k in range(n_runs)],
    }
    return TheoryVsSim(lambdas, theory, vbar, are, err0, manifest)


# ---------------------------------------------------------------------------
# Markov-chain oracles
# ---------------------------------------------------------------------------


def escape_level(r: float, residual: float = ESCAPE_RESIDUAL) -> int:
    """Smallest L with ``r**L < residual``; -1 when the walk is recurrent (r = 1)."""
    if r >= 1.0:
        return -1
    if r <= 0.0:
        return 0
    return int(math.floor(math.log(residual) / math.log(r))) + 1


@numba.njit(cache=True)
def _election_kernel(cum, up, lam, escape, n_trials, max_steps, seed):
    np.random.seed(seed)
    n = cum.shape[0]
    counts = np.zeros(n, dtype=np.int64)
    unresolved = 0
    for _ in range(n_trials):
        s = -1
        u = 0
        done = False
        for _step in range(max_steps):
            if u == 0:
                x = np.random.random()
                s = n - 1
                for j in range(n):
                    if x < cum[j]:
                        s = j
                        break
                u = lam
            elif np.random.random() < up[s]:
                u += lam
            else:
                u -= 1
            if escape[s] >= 0 and u > escape[s]:
                counts[s] += 1
                done = True
                break
        if not done:
            unresolved += 1
    return counts, unresolved


@dataclass
class ElectionOracleResult:
    freqs: dict[int, float]
    n_trials: int
    unresolved_fraction: float
    escape_levels: dict[int, int]

    def stderr(self, item: int) -> float:
        f = self.freqs[item]
        return math.sqrt(max(f * (1 - f), 0.0) / self.n_trials)


def markov_election_oracle(profile: BucketProfile, lam: int, n_trials: int = 100_000,
                           max_steps: int = 1_000_000, seed: int = 0,
                           residual: float = ESCAPE_RESIDUAL) -> ElectionOracleResult:
    """Absorption frequencies of the bucket chain (elected item, score).

    Steps where the arrival misses the bucket leave the chain unchanged, so
    only in-bucket arrivals are simulated: at score 0 a new item is drawn
    with probability ``p_i / mu``; otherwise the score climbs by ``lam`` with
    probability ``p_S / mu`` or drops by one. A trial is absorbed once the
    score passes an escape level beyond which a return has probability
    below ``residual``.
    """
    if int(lam) != lam or lam < 1:
        raise ValueError("the chain needs a positive integer threshold")
    p, mu = profile.probs, profile.mu
    if not math.isclose(p.sum(), mu, rel_tol=1e-9):
        raise ValueError("bucket mass mu must equal the sum of its item probabilities")
    cum = np.cumsum(p) / mu
    cum[-1] = 1.0
    up = p / mu
    levels = np.array([escape_level(root_r(lam, mu / pi), residual) for pi in p], dtype=np.int64)
    if profile.size == 1:
        levels[:] = 0
    steps = int(max_steps)
    for _attempt in range(3):
        counts, unresolved = _election_kernel(cum, up, int(lam), levels, int(n_trials), steps,
                                              seed & 0xFFFFFFFF)
        frac = unresolved / n_trials
        if frac < UNRESOLVED_MAX:
            break
        steps *= 10
    else:
        warnings.warn(f"election oracle: {frac:.2%} of trials unresolved after widening max_steps")
    items = [int(i) for i in profile.items]
    return ElectionOracleResult(
        dict(zip(items, (counts / n_trials).tolist())), int(n_trials), frac,
        dict(zip(items, levels.tolist())),
    )


@numba.njit(cache=True)
def _walk_kernel(q, lam, start, escape, n_trials, max_steps, seed):
    np.random.seed(seed)
    returned = 0
    unresolved = 0
    for _ in range(n_trials):
        g = start
        done = False
        for _step in range(max_steps):
            if np.random.random() < q:
                g += lam
            else:
                g -= 1
            if g == 0:
                returned += 1
                done = True
                break
            if escape >= 0 and g > escape:
                done = True
                break
        if not done:
            unresolved += 1
    return returned, unresolved


@dataclass
class WalkOracleResult:
    estimate: float
    stderr: float
    n_trials: int
    unresolved_fraction: float
    escape_level: int


def walk_return_oracle(p: float, mu: float, lam: int, n_trials: int = 100_000, seed: int = 0,
                       start: int = 1, max_steps: int = 1_000_000,
                       residual: float = ESCAPE_RESIDUAL) -> WalkOracleResult:
    """Empirical probability that the bucket walk started at ``start`` ever hits 0.

    The walk climbs by ``lam`` w.p. ``p``, drops by one w.p. ``mu - p`` and
    otherwise stays put; idle steps are skipped since they cannot change
    whether 0 is hit. Unresolved trials count as returns in the estimate
    only through ``unresolved_fraction`` (reported, never folded in).
    """
    if not 0 < p <= mu <= 1:
        raise ValueError("need 0 < p <= mu <= 1")
    if int(lam) != lam or lam < 1 or start < 1:
        raise ValueError("lam and start must be positive integers")
    level = escape_level(root_r(lam, mu / p), residual)
    if level >= 0:
        level = max(level, start)
    returned, unresolved = _walk_kernel(p / mu, int(lam), int(start), level, int(n_trials),
                                        int(max_steps), seed & 0xFFFFFFFF)
    est = returned / n_trials
    frac = unresolved / n_trials
    if frac >= UNRESOLVED_MAX:
        warnings.warn(f"walk oracle: {frac:.2%} of trials unresolved")
    return WalkOracleResult(est, math.sqrt(max(est * (1 - est), 0.0) / n_trials), int(n_trials),
                            frac, level)


# ---------------------------------------------------------------------------
# CM cell limits
# ---------------------------------------------------------------------------


@dataclass
class CellLimitReport:
    observed: np.ndarray  # (n_runs, m2) Y/tau
    limit: np.ndarray  # (n_runs, m2) predicted per-run limit
    max_deviation: float
    stderr: float

    @property
    def ok(self) -> bool:
        return self.max_deviation <= 5 * self.stderr


def cm_cell_limit_check(config: SketchConfig, dist: ArrivalDistribution, tau: int,
                        n_runs: int, master_seed: int) -> CellLimitReport:
    """Compare ``Y[0, c] / tau`` with the limit implied by each run's final elections.

    ``max_deviation`` is the largest per-cell deviation of the run-averaged
    gap; ``stderr`` is the largest across-run standard deviation of the
    per-cell gap, i.e. the fluctuation scale of a single run.
    """
    if config.d != 1:
        raise ValueError("the per-cell limit check is defined for d == 1")
    tables = HashTables.build(config, dist.n_items)
    cols = tables.cm_cols[0]
    base = np.bincount(cols, weights=dist.probs, minlength=config.m2)
    plus = None
    if config.m1:
        plus = classify_buckets(assign_buckets(dist, config.m1, config.beta_seed), config.lam)
    observed, limit = [], []
    for k in range(n_runs):
        stream = sample_stream(StreamSpec(tau, dist, derive_seed(master_seed, k)))
        sk = ElasticSketch(config, dist.n_items, tables=tables)
        sk.update_many(stream)
        lim = base.copy()
        if plus is not None:
            for b in np.flatnonzero(plus == BucketClass.PLUS):
                s = sk.state.elected[b]
                if s != NONE:
                    lim[cols[s]] -= dist.probs[s]
        observed.append(sk.state.cm[0] / tau)
        limit.append(lim)
    observed, limit = np.array(observed), np.array(limit)
    gap = observed - limit
    spread = gap.std(axis=0, ddof=1) if n_runs > 1 else np.zeros(config.m2)
    return CellLimitReport(observed, limit, float(np.abs(gap.mean(axis=0)).max()),
                           float(spread.max()))

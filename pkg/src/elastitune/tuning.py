"""Eviction-threshold selection and heavy/CM memory split search.

Between consecutive bucket thresholds ``lambda_b^(1)`` the function
``g_beta`` can only decrease, so for integer thresholds the smallest
maximizer is one of ``floor(lambda_b^(1)) + 1``. Searching that small
candidate set replaces a dense sweep over lambda.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .analysis import expected_limiting_error, g_value
from .stream_model import ArrivalDistribution, BucketAssignment, assign_buckets

# values within this relative distance of the maximum count as ties
TIE_RTOL = 1e-12


@dataclass(frozen=True)
class CandidateSet:
    values: tuple[int, ...]
    provenance: dict[int, list[tuple[int, int]]] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.values)

    def __iter__(self):
        return iter(self.values)

    def to_dict(self) -> dict:
        return {
            "values": list(self.values),
            "provenance": {str(k): [list(x) for x in v] for k, v in self.provenance.items()},
        }


@dataclass
class TuneResult:
    lambda_star: int
    g_at_star: float
    table: list[tuple[int, float]]
    candidates: CandidateSet | None = None
    m1: int | None = None
    m2: int | None = None
    expected_error: float | None = None
    configs: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {
            "lambda_star": self.lambda_star,
            "g_at_star": self.g_at_star,
            "table": [{"lambda": lam, "g": g} for lam, g in self.table],
        }
        if self.candidates is not None:
            out["candidates"] = self.candidates.to_dict()
        if self.m1 is not None:
            out.update(m1=self.m1, m2=self.m2, expected_error=self.expected_error,
                       configs=self.configs)
        return out


def min_argmax(values: Sequence[float]) -> int:
    """Index of the first value within TIE_RTOL of the maximum."""
    v = np.asarray(values, dtype=np.float64)
    top = v.max()
    return int(np.flatnonzero(v >= top - TIE_RTOL * max(abs(top), 1.0))[0])


def _bucket_candidates(assignment: BucketAssignment) -> tuple[np.ndarray, np.ndarray]:
    nonempty = assignment.nonempty()
    cands = np.floor(assignment.lambda1_b[nonempty]).astype(np.int64) + 1
    return nonempty, cands


def candidate_set(assignment: BucketAssignment) -> CandidateSet:
    """``{floor(lambda_b^(1)) + 1}`` over the nonempty buckets."""
    return candidate_union([assignment])


def candidate_union(assignments: Sequence[BucketAssignment]) -> CandidateSet:
    prov: dict[int, list[tuple[int, int]]] = {}
    for a in assignments:
        buckets, cands = _bucket_candidates(a)
        for b, c in zip(buckets.tolist(), cands.tolist()):
            prov.setdefault(c, []).append((a.seed, b))
    if not prov:
        raise ValueError("every bucket is empty; no candidate thresholds")
    return CandidateSet(tuple(sorted(prov)), prov)


def _best(lams: Sequence[int], gs: Sequence[float]) -> tuple[int, float]:
    k = min_argmax(gs)
    return int(lams[k]), float(gs[k])


def lambda_star(assignment: BucketAssignment, dense: bool = False) -> TuneResult:
    """Smallest integer threshold maximizing ``g_beta`` for a fixed hash.

    With ``dense=True`` every integer up to the largest candidate is
    evaluated instead (debug comparison against the candidate search).
    """
    cands = candidate_set(assignment)
    lams = list(range(1, max(cands.values) + 1)) if dense else list(cands.values)
    gs = [g_value(assignment, lam) for lam in lams]
    best, g = _best(lams, gs)
    return TuneResult(best, g, list(zip(lams, gs)), cands)


def lambda_hat_star(dist: ArrivalDistribution, m1: int, seeds: Sequence[int],
                    dense: bool = False) -> TuneResult:
    """Threshold maximizing the seed-averaged ``g_beta`` over the candidate union."""
    if len(seeds) < 1:
        raise ValueError("need at least one hash seed")
    assignments = [assign_buckets(dist, m1, s) for s in seeds]
    cands = candidate_union(assignments)
    lams = list(range(1, max(cands.values) + 1)) if dense else list(cands.values)
    # fixed seed order keeps the float reduction deterministic
    totals = np.zeros(len(lams))
    for a in assignments:
        totals += [g_value(a, lam) for lam in lams]
    gs = (totals / len(assignments)).tolist()
    best, g = _best(lams, gs)
    return TuneResult(best, g, list(zip(lams, gs)), cands)


def lambda_star_uniform(assignment: BucketAssignment) -> int:
    """Optimal threshold under uniform arrivals: the maximum bucket load."""
    return int(assignment.n_b.max())


def hp_bound(n_items: int, m1: int, delta: float) -> float:
    """High-probability upper bound on the optimal threshold (holds w.p. >= 1 - delta)."""
    if n_items < 1 or m1 < 1:
        raise ValueError("n_items and m1 must be positive")
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta!r}")
    mean = n_items / m1
    log_term = math.log(m1 / delta)
    return mean + math.sqrt(2 * mean * log_term) + log_term / 3


def cm_width(budget: int, cost_per_bucket: int, d: int, m1: int) -> int:
    return (budget - cost_per_bucket * m1) // d


def grid_search(dist: ArrivalDistribution, budget: int, cost_per_bucket: int, d: int,
                m1_grid: Sequence[int], seeds: Sequence[int],
                lam: int | None = None) -> TuneResult:
    """Pick ``(m1, m2, lambda)`` minimizing ``(1 - g_hat) / m2`` under a memory budget.

    One CM cell costs one unit and one heavy bucket ``cost_per_bucket``
    units. With ``lam`` given, the threshold is fixed instead of tuned.
    """
    if cost_per_bucket < 1 or d < 1:
        raise ValueError("cost_per_bucket and d must be positive")
    grid = sorted({int(m) for m in m1_grid})
    infeasible = [m for m in grid if m < 0 or cm_width(budget, cost_per_bucket, d, m) < 1]
    if infeasible:
        raise ValueError(
            f"budget {budget} leaves no CM column for m1 in {infeasible} "
            f"(cost_per_bucket={cost_per_bucket}, d={d})"
        )
    rows = []
    for m1 in grid:
        m2 = cm_width(budget, cost_per_bucket, d, m1)
        if m1 == 0:
            chosen, g, table = (lam or 1), 0.0, []
        elif lam is None:
            res = lambda_hat_star(dist, m1, seeds)
            chosen, g, table = res.lambda_star, res.g_at_star, res.table
        else:
            g = float(np.mean([g_value(assign_buckets(dist, m1, s), lam) for s in seeds]))
            chosen, table = lam, [(lam, g)]
        rows.append({
            "m1": m1, "m2": m2, "lambda": chosen, "g_hat": g,
            "expected_error": expected_limiting_error(g, m2),
            "table": [{"lambda": x, "g": y} for x, y in table],
        })
    # smallest error; ties -> smaller m1 (grid order) then smaller lambda
    errs = [-r["expected_error"] for r in rows]
    best = rows[min_argmax(errs)]
    return TuneResult(
        best["lambda"], best["g_hat"], [(x["lambda"], x["g"]) for x in best["table"]],
        m1=best["m1"], m2=best["m2"], expected_error=best["expected_error"], configs=rows,
    )

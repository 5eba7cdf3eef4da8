"""Limiting behaviour of the heavy block under an i.i.d. stationary stream.

For a bucket holding items with probabilities ``p_i`` and total mass
``mu``, item ``i`` can become permanently elected only when the eviction
threshold exceeds ``lambda_i = mu / p_i - 1``. The election probabilities
come from the return probability ``r`` of a lazy random walk that climbs
by ``lambda`` with probability ``p_i`` and drops by one with probability
``mu - p_i``; ``r`` is the root in [0, 1] of

    phi(x, lambda) = (x**(lambda+1) - 1) / (x - 1) = z,   z = mu / p_i.

``g_beta(lambda)`` is the expected stream mass the heavy block absorbs in
the limit, and ``(1 - g) / m2`` the expected limiting error per arrival
of an absent item (d = 1).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .stream_model import BucketAssignment, BucketProfile

PHI_NEAR_ONE = 1e-9
BISECT_MAX_ITER = 200
BISECT_XTOL = 2.0**-60
RESIDUAL_TOL = 1e-10


class RootFindingError(ArithmeticError):
    pass


class BucketClass(enum.IntEnum):
    EMPTY = 0
    PLUS = 1
    MINUS = 2


# ---------------------------------------------------------------------------
# phi, r, w
# ---------------------------------------------------------------------------


def _check_lambda(lam) -> None:
    if not np.all(np.asarray(lam) > 0):
        raise ValueError(f"lambda must be > 0, got {lam!r}")


def phi(x, lam):
    """Geometric sum ``1 + x + ... + x**lam`` for real ``lam > 0`` and x in [0, 1]."""
    xa = np.asarray(x, dtype=np.float64)
    if np.any((xa < 0) | (xa > 1)) or np.any(np.isnan(xa)):
        raise ValueError("phi is defined on 0 <= x <= 1")
    _check_lambda(lam)
    out = _phi(xa, np.asarray(lam, dtype=np.float64))
    return float(out) if out.ndim == 0 else out


def _phi(x: np.ndarray, lam: np.ndarray) -> np.ndarray:
    dx = x - 1.0
    near = np.abs(dx) < PHI_NEAR_ONE
    with np.errstate(divide="ignore", invalid="ignore"):
        closed = np.expm1((lam + 1.0) * np.log(x)) / dx
    # second-order expansion around x = 1; the limit itself is lam + 1
    taylor = (lam + 1.0) * (1.0 + 0.5 * lam * dx)
    return np.where(near, taylor, closed)


def root_r_array(lam, z) -> np.ndarray:
    """Vectorized :func:`root_r` (broadcasts ``lam`` against ``z``)."""
    lam, z = np.broadcast_arrays(np.asarray(lam, dtype=np.float64), np.asarray(z, dtype=np.float64))
    _check_lambda(lam)
    if np.any(z < 1) or np.any(np.isnan(z)):
        raise ValueError("z must be >= 1")
    out = np.ones(lam.shape)
    solve = lam > z - 1.0
    out[solve & (z == 1.0)] = 0.0
    idx = np.flatnonzero(solve & (z > 1.0))
    if idx.size == 0:
        return out
    lv, zv = lam.ravel()[idx], z.ravel()[idx]
    lo = np.zeros(idx.size)
    hi = np.ones(idx.size)
    for _ in range(BISECT_MAX_ITER):
        mid = 0.5 * (lo + hi)
        done = (hi - lo <= BISECT_XTOL) | (mid <= lo) | (mid >= hi)
        if done.all():
            break
        below = _phi(mid, lv) < zv
        lo = np.where(below & ~done, mid, lo)
        hi = np.where(~below & ~done, mid, hi)
    else:
        raise RootFindingError(f"bisection did not converge in {BISECT_MAX_ITER} iterations")
    f_lo = np.abs(_phi(lo, lv) - zv)
    f_hi = np.abs(_phi(hi, lv) - zv)
    root = np.where(f_lo <= f_hi, lo, hi)
    resid = np.minimum(f_lo, f_hi)
    if np.any(resid > RESIDUAL_TOL):
        k = int(np.argmax(resid))
        raise RootFindingError(
            f"residual {resid[k]:.3g} > {RESIDUAL_TOL} at lambda={lv[k]!r}, z={zv[k]!r}"
        )
    out.ravel()[idx] = root
    return out


def root_r(lam: float, z: float) -> float:
    """Return probability of the bucket walk from one step above zero.

    1 when ``lam <= z - 1`` (the walk is recurrent), otherwise the unique
    root in [0, 1) of ``phi(x, lam) = z``, found by bisection.
    """
    return float(root_r_array(lam, z))


def weight_w_array(lam, z) -> np.ndarray:
    r = root_r_array(lam, z)
    lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), r.shape)
    with np.errstate(divide="ignore"):
        w = -np.expm1(lam * np.log(r))
    return np.where(r == 0.0, 1.0, w)


def weight_w(lam: float, z: float) -> float:
    """``1 - r(lam, z)**lam``: probability the walk never returns to zero from ``lam``."""
    return float(weight_w_array(lam, z))


# ---------------------------------------------------------------------------
# per-bucket election probabilities
# ---------------------------------------------------------------------------


def _weights(p: np.ndarray, lam_i: np.ndarray, lam: float) -> np.ndarray:
    w = np.zeros(p.size)
    live = lam_i < lam
    if live.any():
        w[live] = p[live] * weight_w_array(lam, lam_i[live] + 1.0)
    return w


def election_probs(profile: BucketProfile, lam: float) -> dict[int, float]:
    """Probability that each item of the bucket ends up permanently elected."""
    _check_lambda(lam)
    if profile.size == 0:
        raise ValueError("election probabilities are undefined for an empty bucket")
    items = [int(i) for i in profile.items]
    if profile.size == 1:
        return {items[0]: 1.0}
    w = _weights(profile.probs, profile.lambda_i, lam)
    total = w.sum()
    if total == 0.0:
        return dict.fromkeys(items, 0.0)
    return dict(zip(items, (w / total).tolist()))


def classify_buckets(assignment: BucketAssignment, lam: float) -> np.ndarray:
    """BucketClass code per bucket (an int array usable as BucketClass values)."""
    _check_lambda(lam)
    cls = np.full(assignment.m1, BucketClass.MINUS, dtype=np.int64)
    with np.errstate(invalid="ignore"):
        plus = (assignment.n_b == 1) | (assignment.lambda1_b < lam)
    cls[plus] = BucketClass.PLUS
    cls[assignment.n_b == 0] = BucketClass.EMPTY
    return cls


@dataclass(frozen=True, eq=False)
class ElectionProfile:
    lam: float
    classes: np.ndarray
    a: np.ndarray  # per item
    g_b: np.ndarray  # per bucket
    g: float
    assignment: BucketAssignment

    def bucket_probs(self, b: int) -> dict[int, float]:
        return {int(i): float(self.a[i]) for i in self.assignment.items_in(b)}

    def to_dict(self) -> dict:
        nonempty = self.assignment.nonempty()
        return {
            "lambda": self.lam,
            "g_beta": self.g,
            "buckets": [
                {
                    "bucket": int(b),
                    "class": BucketClass(int(self.classes[b])).name,
                    "g_b": float(self.g_b[b]),
                    "a": {str(i): p for i, p in self.bucket_probs(b).items() if p > 0},
                }
                for b in nonempty
            ],
        }


def _absorbed_mass(assignment: BucketAssignment, lam: float):
    p = assignment.dist.probs
    idx = np.flatnonzero(assignment.lambda_i < lam)
    w = p[idx] * weight_w_array(lam, assignment.lambda_i[idx] + 1.0)
    b = assignment.bucket_of[idx]
    s = np.bincount(b, weights=w, minlength=assignment.m1)
    sp = np.bincount(b, weights=w * p[idx], minlength=assignment.m1)
    with np.errstate(invalid="ignore", divide="ignore"):
        g_b = np.where(s > 0, sp / s, 0.0)
    return idx, w, s, g_b


def g_beta(assignment: BucketAssignment, lam: float) -> ElectionProfile:
    """Full election profile; ``g`` is the expected absorbed stream mass."""
    _check_lambda(lam)
    idx, w, s, g_b = _absorbed_mass(assignment, lam)
    a = np.zeros(assignment.n_items)
    denom = s[assignment.bucket_of[idx]]
    a[idx] = w / denom
    return ElectionProfile(
        float(lam), classify_buckets(assignment, lam), a, g_b, float(g_b.sum()), assignment
    )


def g_value(assignment: BucketAssignment, lam: float) -> float:
    """``g_beta(lam)`` alone, touching only items with positive weight."""
    _check_lambda(lam)
    return float(_absorbed_mass(assignment, lam)[3].sum())


def g_curve(assignment: BucketAssignment, lams) -> np.ndarray:
    return np.array([g_value(assignment, float(x)) for x in lams])


def expected_limiting_error(g: float, m2: int) -> float:
    """Expected limiting error per arrival, ``(1 - g) / m2``; an upper bound when d > 1."""
    if m2 < 1:
        raise ValueError("m2 must be >= 1")
    return (1.0 - g) / m2


def curve_rows(assignment: BucketAssignment, lams, m2: int) -> list[dict]:
    return [
        {"lambda": float(x), "g": g, "expected_error": expected_limiting_error(g, m2)}
        for x, g in zip(lams, g_curve(assignment, lams))
    ]


def top_mass(assignment: BucketAssignment) -> float:
    """Sum over nonempty buckets of the largest item probability (upper bound on g)."""
    p = assignment.dist.probs
    top = np.zeros(assignment.m1)
    np.maximum.at(top, assignment.bucket_of, p)
    return float(math.fsum(top))

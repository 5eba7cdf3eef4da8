"""Item universes, arrival distributions, seeded hashing and stream sampling.

Items are dense integer ids ``0 .. n_items-1``; item ``k`` has Zipf rank
``k + 1``. Every random object in the package is derived from a 64-bit
seed so that runs replay bit-for-bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15

# lambda_i values this close to an integer are snapped onto it, so that
# e.g. a uniform bucket of size n gets lambda_1 == n - 1 exactly.
SNAP_TOL = 1e-9


# ---------------------------------------------------------------------------
# 64-bit mixing
# ---------------------------------------------------------------------------


def splitmix64(x: int) -> int:
    """SplitMix64 finalizer on a Python int (wraps to 64 bits)."""
    x = (x + _GOLDEN) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def derive_seed(master: int, k: int) -> int:
    """Seed of sub-stream ``k`` of ``master``: ``mix(master, k)``."""
    return splitmix64(splitmix64(master & MASK64) ^ (k & MASK64))


def _mix64_array(x: np.ndarray) -> np.ndarray:
    x = x + np.uint64(_GOLDEN)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def hash64(keys: np.ndarray, seed: int) -> np.ndarray:
    """Seeded 64-bit hash of integer keys (uint64 in, uint64 out)."""
    keys = np.asarray(keys).astype(np.uint64)
    salt = np.uint64(splitmix64(seed & MASK64))
    with np.errstate(over="ignore"):
        return _mix64_array(_mix64_array(keys ^ salt) + salt)


def multiply_shift(h: np.ndarray, m: int) -> np.ndarray:
    """Reduce 64-bit hashes to ``[0, m)`` as ``(h * m) >> 64``.

    The 128-bit product is assembled from 32-bit halves, exact for m < 2**32.
    """
    if not 1 <= m < 2**32:
        raise ValueError(f"range must be in [1, 2**32), got {m}")
    h = np.asarray(h, dtype=np.uint64)
    mm = np.uint64(m)
    lo = (h & np.uint64(0xFFFFFFFF)) * mm
    hi = (h >> np.uint64(32)) * mm
    return ((hi + (lo >> np.uint64(32))) >> np.uint64(32)).astype(np.int64)


def hash_to_range(keys: np.ndarray, seed: int, m: int) -> np.ndarray:
    return multiply_shift(hash64(keys, seed), m)


# ---------------------------------------------------------------------------
# Distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ArrivalDistribution:
    """Probability vector over the item universe (every p_i > 0)."""

    probs: np.ndarray
    label: str = "explicit"

    def __post_init__(self):
        p = np.array(self.probs, dtype=np.float64)
        if p.ndim != 1 or p.size == 0:
            raise ValueError("probs must be a non-empty 1-d sequence")
        if not np.all(np.isfinite(p)) or np.any(p <= 0):
            raise ValueError("every probability must be finite and > 0")
        if abs(math.fsum(p) - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {math.fsum(p)!r}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def n_items(self) -> int:
        return int(self.probs.size)

    @cached_property
    def cdf(self) -> np.ndarray:
        c = np.cumsum(self.probs)
        c[-1] = 1.0
        c.setflags(write=False)
        return c

    def to_dict(self) -> dict:
        return {"n_items": self.n_items, "probs": self.probs.tolist(), "label": self.label}

    @classmethod
    def from_dict(cls, data: dict) -> "ArrivalDistribution":
        dist = cls(np.asarray(data["probs"], dtype=np.float64), data.get("label", "explicit"))
        if dist.n_items != int(data.get("n_items", dist.n_items)):
            raise ValueError("n_items does not match the length of probs")
        return dist

    @classmethod
    def from_file(cls, path: str | Path) -> "ArrivalDistribution":
        """Read one probability per line; must sum to 1 within 1e-9, then renormalized."""
        values = []
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                values.append(float(line))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: not a number: {line!r}") from None
        p = np.asarray(values, dtype=np.float64)
        if p.size == 0:
            raise ValueError(f"{path}: no probabilities found")
        total = math.fsum(p)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"{path}: probabilities sum to {total!r}, expected 1 within 1e-9")
        return cls(p / total, label=f"file:{Path(path).name}")


def make_zipf(n_items: int, alpha: float) -> ArrivalDistribution:
    """Zipf(alpha) over ranks 1..n_items: p_i proportional to i**-alpha."""
    if int(n_items) != n_items or n_items < 1:
        raise ValueError(f"n_items must be a positive integer, got {n_items!r}")
    if not math.isfinite(alpha) or alpha < 0:
        raise ValueError(f"alpha must be finite and nonnegative, got {alpha!r}")
    ranks = np.arange(1, int(n_items) + 1, dtype=np.float64)
    weights = ranks ** (-float(alpha))
    return ArrivalDistribution(weights / math.fsum(weights), label=f"zipf(alpha={alpha:g})")


def make_uniform(n_items: int) -> ArrivalDistribution:
    if int(n_items) != n_items or n_items < 1:
        raise ValueError(f"n_items must be a positive integer, got {n_items!r}")
    return ArrivalDistribution(np.full(int(n_items), 1.0 / n_items), label="uniform")


# ---------------------------------------------------------------------------
# Bucket assignment
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BucketProfile:
    """The items hashing to one bucket together with the quantities the analysis needs."""

    bucket: int
    items: np.ndarray
    probs: np.ndarray
    mu: float
    lambda_i: np.ndarray

    @property
    def size(self) -> int:
        return int(self.items.size)

    @property
    def lambda1(self) -> float:
        return float(self.lambda_i.min()) if self.size else math.nan


def make_profile(probs, mu: float | None = None, items=None, bucket: int = 0) -> BucketProfile:
    """Build a standalone bucket profile from raw probabilities.

    ``mu`` defaults to ``sum(probs)``; it may exceed that sum when the
    probabilities are a sub-vector of a larger universe.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.size == 0 or np.any(p <= 0):
        raise ValueError("bucket probabilities must be non-empty and positive")
    mu = math.fsum(p) if mu is None else float(mu)
    items = np.arange(p.size) if items is None else np.asarray(items, dtype=np.int64)
    lam = _snap(mu / p - 1.0, single=p.size == 1)
    return BucketProfile(bucket, items, p, mu, lam)


def _snap(lam: np.ndarray, single) -> np.ndarray:
    r = np.rint(lam)
    close = np.abs(lam - r) <= SNAP_TOL * np.maximum(1.0, np.abs(r))
    # 0 is reserved for singleton buckets
    close &= (r >= 1) | single
    out = np.where(close, r, lam)
    return np.where(single, 0.0, np.maximum(out, 0.0))


@dataclass(frozen=True, eq=False)
class BucketAssignment:
    """A realized hash ``beta`` of the universe into ``m1`` buckets.

    ``order``/``offsets`` give a CSR view: the items of bucket ``b`` are
    ``order[offsets[b]:offsets[b+1]]``.
    """

    dist: ArrivalDistribution
    m1: int
    seed: int
    bucket_of: np.ndarray
    n_b: np.ndarray
    mu_b: np.ndarray
    lambda_i: np.ndarray
    lambda1_b: np.ndarray
    order: np.ndarray = field(repr=False)
    offsets: np.ndarray = field(repr=False)

    @property
    def n_items(self) -> int:
        return self.dist.n_items

    def items_in(self, b: int) -> np.ndarray:
        return self.order[self.offsets[b] : self.offsets[b + 1]]

    def profile(self, b: int) -> BucketProfile:
        items = self.items_in(b)
        return BucketProfile(
            int(b), items, self.dist.probs[items], float(self.mu_b[b]), self.lambda_i[items]
        )

    def nonempty(self) -> np.ndarray:
        return np.flatnonzero(self.n_b > 0)

    def to_dict(self) -> dict:
        return {
            "m1": self.m1,
            "seed": self.seed,
            "n_items": self.n_items,
            "bucket_of": self.bucket_of.tolist(),
            "n_b": self.n_b.tolist(),
            "mu_b": self.mu_b.tolist(),
            "lambda_i": self.lambda_i.tolist(),
            "lambda1_b": [None if math.isnan(x) else x for x in self.lambda1_b.tolist()],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def assign_buckets(dist: ArrivalDistribution, m1: int, seed: int) -> BucketAssignment:
    """Hash every item into ``m1`` buckets and derive the per-bucket profile."""
    if int(m1) != m1 or m1 < 1:
        raise ValueError(f"m1 must be a positive integer, got {m1!r}")
    m1 = int(m1)
    items = np.arange(dist.n_items, dtype=np.int64)
    bucket_of = hash_to_range(items, seed, m1)
    return _build_assignment(dist, m1, seed, bucket_of)


def assignment_from_buckets(dist: ArrivalDistribution, bucket_of, m1: int | None = None,
                            seed: int = -1) -> BucketAssignment:
    """Assignment from an explicit item -> bucket map (hand-built test cases)."""
    bucket_of = np.asarray(bucket_of, dtype=np.int64)
    if bucket_of.shape != (dist.n_items,):
        raise ValueError("bucket_of must map every item")
    m1 = int(bucket_of.max()) + 1 if m1 is None else int(m1)
    if bucket_of.min() < 0 or bucket_of.max() >= m1:
        raise ValueError("bucket index out of range")
    return _build_assignment(dist, m1, seed, bucket_of)


def _build_assignment(dist, m1, seed, bucket_of) -> BucketAssignment:
    p = dist.probs
    n_b = np.bincount(bucket_of, minlength=m1).astype(np.int64)
    mu_b = np.bincount(bucket_of, weights=p, minlength=m1)
    single = n_b[bucket_of] == 1
    lam = _snap(mu_b[bucket_of] / p - 1.0, single)
    lambda1 = np.full(m1, np.inf)
    np.minimum.at(lambda1, bucket_of, lam)
    lambda1[n_b == 0] = np.nan
    order = np.argsort(bucket_of, kind="stable")
    offsets = np.zeros(m1 + 1, dtype=np.int64)
    np.cumsum(n_b, out=offsets[1:])
    for arr in (bucket_of, n_b, mu_b, lam, lambda1, order, offsets):
        arr.setflags(write=False)
    return BucketAssignment(dist, m1, int(seed), bucket_of, n_b, mu_b, lam, lambda1, order, offsets)


# ---------------------------------------------------------------------------
# Streams
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StreamSpec:
    tau: int
    dist: ArrivalDistribution
    seed: int

    def __post_init__(self):
        if int(self.tau) != self.tau or self.tau < 0:
            raise ValueError(f"tau must be a nonnegative integer, got {self.tau!r}")


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed & MASK64))


def sample_stream(spec: StreamSpec) -> np.ndarray:
    """I.i.d. arrivals by inverse CDF (binary search) on a PCG64 stream."""
    u = make_rng(spec.seed).random(int(spec.tau))
    out = np.searchsorted(spec.dist.cdf, u, side="right")
    np.minimum(out, spec.dist.n_items - 1, out=out)
    return out.astype(np.int64)

"""Elastic-Sketch: heavy block of elected items in front of a Count-Min block.

The per-arrival update runs in numba kernels; the Python classes own the
state arrays and the hash tables (item -> bucket, item -> CM column per
row), which are precomputed because the universe is a dense id range.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .stream_model import derive_seed, hash_to_range

NONE = -1  # sentinel for "no elected item"


class InvariantViolation(RuntimeError):
    """An instrumented run broke a structural identity of the sketch."""

    def __init__(self, message: str, snapshot: dict | None = None):
        super().__init__(message)
        self.snapshot = snapshot


@dataclass(frozen=True)
class SketchConfig:
    m1: int
    m2: int
    d: int = 1
    lam: int = 1
    beta_seed: int = 0
    cm_seeds: tuple[int, ...] = field(default=())

    def __post_init__(self):
        for name in ("m1", "m2", "d", "lam"):
            v = getattr(self, name)
            if isinstance(v, bool) or int(v) != v:
                raise ValueError(f"{name} must be an integer, got {v!r}")
        if self.m1 < 0:
            raise ValueError("m1 must be >= 0")
        if self.m2 < 1 or self.d < 1:
            raise ValueError("m2 and d must be >= 1")
        if self.lam < 1:
            raise ValueError("the sketch eviction threshold lam must be a positive integer")
        seeds = tuple(int(s) for s in self.cm_seeds)
        if not seeds:
            seeds = tuple(derive_seed(self.beta_seed, 1 + row) for row in range(self.d))
        if len(seeds) != self.d:
            raise ValueError(f"need {self.d} CM seeds, got {len(seeds)}")
        object.__setattr__(self, "cm_seeds", seeds)

    def with_lambda(self, lam: int) -> "SketchConfig":
        return SketchConfig(self.m1, self.m2, self.d, lam, self.beta_seed, self.cm_seeds)

    def to_dict(self) -> dict:
        return {
            "m1": self.m1,
            "m2": self.m2,
            "d": self.d,
            "lambda": self.lam,
            "beta_seed": self.beta_seed,
            "cm_seeds": list(self.cm_seeds),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SketchConfig":
        return cls(
            data["m1"], data["m2"], data["d"], data["lambda"], data["beta_seed"],
            tuple(data["cm_seeds"]),
        )


@dataclass(frozen=True, eq=False)
class HashTables:
    bucket_of: np.ndarray  # (n_items,) ; empty when m1 == 0
    cm_cols: np.ndarray  # (d, n_items)

    @classmethod
    def build(cls, config: SketchConfig, n_items: int) -> "HashTables":
        items = np.arange(n_items, dtype=np.int64)
        if config.m1:
            bucket_of = hash_to_range(items, config.beta_seed, config.m1)
        else:
            bucket_of = np.zeros(0, dtype=np.int64)
        cm_cols = np.stack([hash_to_range(items, s, config.m2) for s in config.cm_seeds])
        return cls(bucket_of, np.ascontiguousarray(cm_cols))


@dataclass
class SketchState:
    elected: np.ndarray
    v_plus: np.ndarray
    v_minus: np.ndarray
    cm: np.ndarray
    t: int = 0

    @classmethod
    def empty(cls, m1: int, d: int, m2: int) -> "SketchState":
        return cls(
            np.full(m1, NONE, dtype=np.int64),
            np.zeros(m1, dtype=np.int64),
            np.zeros(m1, dtype=np.int64),
            np.zeros((d, m2), dtype=np.int64),
        )

    def copy(self) -> "SketchState":
        return SketchState(
            self.elected.copy(), self.v_plus.copy(), self.v_minus.copy(), self.cm.copy(), self.t
        )


@dataclass
class GroundTruth:
    """Exact counts, per-bucket eviction snapshots and a shadow plain-CM run."""

    counts: np.ndarray
    last_evict: np.ndarray
    count_at_evict: np.ndarray
    cm_shadow: np.ndarray

    @classmethod
    def empty(cls, n_items: int, m1: int, d: int, m2: int) -> "GroundTruth":
        return cls(
            np.zeros(n_items, dtype=np.int64),
            np.zeros(m1, dtype=np.int64),
            np.zeros(m1, dtype=np.int64),
            np.zeros((d, m2), dtype=np.int64),
        )


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


@numba.njit(cache=True, nogil=True)
def _update_kernel(stream, lam, bucket_of, cm_cols, elected, v_plus, v_minus, cm):
    d = cm.shape[0]
    m1 = elected.shape[0]
    for k in range(stream.shape[0]):
        item = stream[k]
        if m1 == 0:
            for row in range(d):
                cm[row, cm_cols[row, item]] += 1
            continue
        b = bucket_of[item]
        s = elected[b]
        if s == NONE or s == item:
            elected[b] = item
            v_plus[b] += 1
        elif lam * v_plus[b] - v_minus[b] > 0:
            v_minus[b] += 1
            for row in range(d):
                cm[row, cm_cols[row, item]] += 1
        else:
            flushed = v_plus[b]
            for row in range(d):
                cm[row, cm_cols[row, s]] += flushed
            elected[b] = item
            v_plus[b] = 1
            v_minus[b] = 0


@numba.njit(cache=True, nogil=True)
def _check_kernel(t, lam, cm_cols, elected, v_plus, v_minus, cm, counts, count_at_evict, cm_shadow):
    """0 if all identities hold, else a nonzero code naming the first failure."""
    d = cm.shape[0]
    m2 = cm.shape[1]
    m1 = elected.shape[0]
    heavy = 0
    for b in range(m1):
        if lam * v_plus[b] - v_minus[b] < 0:
            return 1
        s = elected[b]
        if s == NONE:
            if v_plus[b] != 0 or v_minus[b] != 0:
                return 2
        elif v_plus[b] != counts[s] - count_at_evict[b]:
            return 3
        heavy += v_plus[b]
    for row in range(d):
        total = 0
        for c in range(m2):
            total += cm[row, c]
        if total + heavy != t:
            return 4
    # Y + (flushable heavy mass) must rebuild the shadow plain-CM matrix
    recon = cm.copy()
    for b in range(m1):
        s = elected[b]
        if s != NONE:
            for row in range(d):
                recon[row, cm_cols[row, s]] += counts[s] - count_at_evict[b]
    for row in range(d):
        for c in range(m2):
            if recon[row, c] != cm_shadow[row, c]:
                return 5
    return 0


@numba.njit(cache=True, nogil=True)
def _update_instrumented_kernel(stream, t0, lam, bucket_of, cm_cols, elected, v_plus, v_minus, cm,
                                counts, last_evict, count_at_evict, cm_shadow, check_every):
    """Instrumented update; returns (steps_done, failure_code)."""
    d = cm.shape[0]
    m1 = elected.shape[0]
    t = t0
    for k in range(stream.shape[0]):
        item = stream[k]
        t += 1
        for row in range(d):
            cm_shadow[row, cm_cols[row, item]] += 1
        if m1 == 0:
            for row in range(d):
                cm[row, cm_cols[row, item]] += 1
        else:
            b = bucket_of[item]
            s = elected[b]
            if s == NONE or s == item:
                if s == NONE:
                    last_evict[b] = t - 1
                    count_at_evict[b] = counts[item]
                elected[b] = item
                v_plus[b] += 1
            elif lam * v_plus[b] - v_minus[b] > 0:
                v_minus[b] += 1
                for row in range(d):
                    cm[row, cm_cols[row, item]] += 1
            else:
                if lam * v_plus[b] - v_minus[b] < 0:
                    return k + 1, 1
                flushed = v_plus[b]
                for row in range(d):
                    cm[row, cm_cols[row, s]] += flushed
                elected[b] = item
                v_plus[b] = 1
                v_minus[b] = 0
                last_evict[b] = t - 1
                count_at_evict[b] = counts[item]
        counts[item] += 1
        if check_every > 0 and (t % check_every == 0 or k == stream.shape[0] - 1):
            code = _check_kernel(t, lam, cm_cols, elected, v_plus, v_minus, cm, counts,
                                 count_at_evict, cm_shadow)
            if code != 0:
                return k + 1, code
    return stream.shape[0], 0


_FAILURES = {
    1: "score lam*V+ - V- went negative",
    2: "empty bucket carries nonzero counters",
    3: "V+ differs from the elected item's count since its last eviction",
    4: "CM row mass plus heavy mass differs from t",
    5: "CM block plus heavy counters does not rebuild the shadow plain-CM matrix",
}


# ---------------------------------------------------------------------------
# public classes
# ---------------------------------------------------------------------------


class ElasticSketch:
    """Elastic-Sketch over the item universe ``0 .. n_items-1``.

    With ``instrumented=True`` the sketch also keeps a :class:`GroundTruth`
    and verifies the finite-time counter identity every ``check_every``
    updates (and after the last update of every batch).
    """

    def __init__(self, config: SketchConfig, n_items: int, *, instrumented: bool = False,
                 check_every: int = 1024, tables: HashTables | None = None):
        self.config = config
        self.n_items = int(n_items)
        self.tables = tables if tables is not None else HashTables.build(config, self.n_items)
        self.state = SketchState.empty(config.m1, config.d, config.m2)
        self.instrumented = instrumented
        self.check_every = int(check_every)
        self.truth = GroundTruth.empty(self.n_items, config.m1, config.d, config.m2) if instrumented else None

    # -- updates ---------------------------------------------------------

    def _check_items(self, items: np.ndarray) -> None:
        if items.size and (items.min() < 0 or items.max() >= self.n_items):
            bad = items[(items < 0) | (items >= self.n_items)][0]
            raise KeyError(f"unknown item id {int(bad)}")

    def update(self, item: int) -> None:
        self.update_many(np.array([item], dtype=np.int64))

    def update_many(self, stream) -> None:
        stream = np.ascontiguousarray(stream, dtype=np.int64)
        self._check_items(stream)
        st, tb, cfg = self.state, self.tables, self.config
        if not self.instrumented:
            _update_kernel(stream, cfg.lam, tb.bucket_of, tb.cm_cols, st.elected, st.v_plus,
                           st.v_minus, st.cm)
            st.t += int(stream.size)
            return
        tr = self.truth
        done, code = _update_instrumented_kernel(
            stream, st.t, cfg.lam, tb.bucket_of, tb.cm_cols, st.elected, st.v_plus, st.v_minus,
            st.cm, tr.counts, tr.last_evict, tr.count_at_evict, tr.cm_shadow, self.check_every,
        )
        st.t += int(done)
        if code:
            raise InvariantViolation(f"step {st.t}: {_FAILURES[code]}", self.snapshot())

    # -- queries ---------------------------------------------------------

    def _item_elected(self, item: int) -> bool:
        return self.config.m1 > 0 and self.state.elected[self.tables.bucket_of[item]] == item

    def estimate(self, item: int) -> int:
        if not 0 <= item < self.n_items:
            raise KeyError(f"unknown item id {item}")
        cm = self.state.cm
        est = int(min(cm[row, self.tables.cm_cols[row, item]] for row in range(self.config.d)))
        if self._item_elected(item):
            est += int(self.state.v_plus[self.tables.bucket_of[item]])
        return est

    def estimate_all(self) -> np.ndarray:
        """Estimates for every item in the universe, as one vector."""
        rows = np.arange(self.config.d)[:, None]
        est = self.state.cm[rows, self.tables.cm_cols].min(axis=0)
        if self.config.m1:
            el = self.state.elected
            held = el != NONE
            est[el[held]] += self.state.v_plus[held]
        return est

    def heavy_mass(self) -> int:
        return int(self.state.v_plus.sum())

    def sample_err0(self, rng: np.random.Generator) -> int:
        """Err_(0): min over rows of a uniformly chosen cell per row."""
        cols = rng.integers(0, self.config.m2, size=self.config.d)
        return int(self.state.cm[np.arange(self.config.d), cols].min())

    def err0_at(self, cols) -> int:
        return int(self.state.cm[np.arange(self.config.d), np.asarray(cols)].min())

    def err0_row_mean(self) -> float:
        """Exact expectation of Err_(0) over the uniform column draw when d == 1."""
        if self.config.d != 1:
            raise ValueError("exact row average only defined for d == 1")
        return float(self.state.cm[0].sum()) / self.config.m2

    # -- instrumentation -------------------------------------------------

    def check_finite_time_identity(self) -> bool:
        if self.truth is None:
            raise RuntimeError("sketch was built without instrumentation")
        return check_finite_time_identity(self, self.truth)

    # -- serialization ---------------------------------------------------

    def snapshot(self) -> dict:
        st = self.state
        return {
            "config": self.config.to_dict(),
            "n_items": self.n_items,
            "t": st.t,
            "elected": [None if s == NONE else int(s) for s in st.elected],
            "v_plus": st.v_plus.tolist(),
            "v_minus": st.v_minus.tolist(),
            "cm_shape": list(st.cm.shape),
            "cm": st.cm.ravel().tolist(),
        }

    @classmethod
    def from_snapshot(cls, data: dict) -> "ElasticSketch":
        sk = cls(SketchConfig.from_dict(data["config"]), data["n_items"])
        st = sk.state
        st.elected[:] = [NONE if s is None else s for s in data["elected"]]
        st.v_plus[:] = data["v_plus"]
        st.v_minus[:] = data["v_minus"]
        st.cm[:] = np.asarray(data["cm"], dtype=np.int64).reshape(data["cm_shape"])
        st.t = int(data["t"])
        return sk


def check_finite_time_identity(sketch: ElasticSketch, truth: GroundTruth) -> bool:
    """Per-bucket V+ identity, shadow-CM reconstruction and row mass conservation."""
    st = sketch.state
    code = _check_kernel(st.t, sketch.config.lam, sketch.tables.cm_cols, st.elected, st.v_plus,
                         st.v_minus, st.cm, truth.counts, truth.count_at_evict, truth.cm_shadow)
    return code == 0


class CountMin:
    """Plain Count-Min sketch, updated with numpy scatter-adds.

    Shares the hashing of :class:`SketchConfig` so it can shadow an
    Elastic-Sketch cell for cell.
    """

    def __init__(self, m2: int, d: int, cm_seeds, n_items: int):
        items = np.arange(n_items, dtype=np.int64)
        self.cm_cols = np.stack([hash_to_range(items, s, m2) for s in cm_seeds])
        self.cm = np.zeros((d, m2), dtype=np.int64)

    def update_many(self, stream) -> None:
        stream = np.asarray(stream, dtype=np.int64)
        for row in range(self.cm.shape[0]):
            np.add.at(self.cm[row], self.cm_cols[row, stream], 1)

    def estimate(self, item: int) -> int:
        return int(self.cm[np.arange(self.cm.shape[0]), self.cm_cols[:, item]].min())


def average_relative_error(estimates: np.ndarray, counts: np.ndarray) -> float:
    """Mean of |est - N| / N over items with N >= 1."""
    present = counts > 0
    if not present.any():
        return 0.0
    n = counts[present].astype(np.float64)
    return float(np.mean(np.abs(estimates[present] - n) / n))

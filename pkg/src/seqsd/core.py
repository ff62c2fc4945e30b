"""Stream ingestion, empirical state, and e-process accumulation.

Everything here is shared by the estimators in :mod:`seqsd.engine`.  States are
immutable snapshots: :func:`ingest` returns a new :class:`EmpiricalState` and
never touches the old one, so a snapshot can be handed to another thread or
replayed later.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

#: Per-round factors below this value are clamped (and flagged).
WEALTH_FLOOR = 1e-300


class WealthFloorWarning(RuntimeWarning):
    """Raised (as a warning) when a per-round e-value had to be clamped."""


@dataclass(frozen=True)
class ObservationPair:
    x: float
    y: float
    t: int

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite observation at t={self.t}: x={self.x}, y={self.y}")
        if self.t < 1:
            raise ValueError(f"round index must be positive, got {self.t}")


@dataclass(frozen=True)
class SignificanceLevel:
    alpha: float

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")

    @property
    def log_threshold(self) -> float:
        """log(1/alpha), the Ville rejection boundary in log-wealth units."""
        return -math.log(self.alpha)


AlphaLike = Union[float, SignificanceLevel]


def as_level(alpha: AlphaLike) -> SignificanceLevel:
    return alpha if isinstance(alpha, SignificanceLevel) else SignificanceLevel(float(alpha))


def _insert_sorted(arr: np.ndarray, value: float) -> np.ndarray:
    # side="right" keeps ties in arrival order; counts only use searchsorted
    idx = int(np.searchsorted(arr, value, side="right"))
    return np.concatenate((arr[:idx], (value,), arr[idx:]))


@dataclass(frozen=True, eq=False)
class EmpiricalState:
    """Running empirical distribution of the paired history ``(X, Y)^t``.

    Besides the raw history we keep the sorted marginals, the sorted pairwise
    maxima and the sorted pooled sample.  With those, every count the
    estimators need is a binary search:

    * ``#{X <= z}`` and ``#{Y <= z}`` from the marginals,
    * ``#{X <= z, Y <= z} = #{max(X, Y) <= z}``,
    * ``n_p(z) = #{X <= z < Y} = #{X <= z} - #{max <= z}`` and symmetrically
      ``n_q(z)``.
    """

    count_t: int = 0
    xs: np.ndarray = field(default_factory=lambda: np.empty(0))
    ys: np.ndarray = field(default_factory=lambda: np.empty(0))
    x_sorted: np.ndarray = field(default_factory=lambda: np.empty(0))
    y_sorted: np.ndarray = field(default_factory=lambda: np.empty(0))
    max_sorted: np.ndarray = field(default_factory=lambda: np.empty(0))
    pooled_sorted: np.ndarray = field(default_factory=lambda: np.empty(0))
    # memo for derived quantities; safe because the state never mutates
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def n_x_le(self, z) -> np.ndarray:
        return np.searchsorted(self.x_sorted, z, side="right")

    def n_y_le(self, z) -> np.ndarray:
        return np.searchsorted(self.y_sorted, z, side="right")

    def n_both_le(self, z) -> np.ndarray:
        return np.searchsorted(self.max_sorted, z, side="right")

    def ecdf_x(self, z):
        if self.count_t == 0:
            return np.zeros_like(np.asarray(z, dtype=float))
        return self.n_x_le(z) / self.count_t

    def ecdf_y(self, z):
        if self.count_t == 0:
            return np.zeros_like(np.asarray(z, dtype=float))
        return self.n_y_le(z) / self.count_t

    def ecdf_joint(self, z):
        """Empirical ``P(X <= z, Y <= z)``."""
        if self.count_t == 0:
            return np.zeros_like(np.asarray(z, dtype=float))
        return self.n_both_le(z) / self.count_t

    def counts(self, z) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(n_p(z), n_q(z))`` for a scalar or array of thresholds."""
        if isinstance(z, np.ndarray) and z.ndim == 1:
            key = ("counts", z.tobytes())
            hit = self._cache.get(key)
            if hit is None:
                both = self.n_both_le(z)
                hit = self._cache[key] = (self.n_x_le(z) - both, self.n_y_le(z) - both)
            return hit
        both = self.n_both_le(z)
        return self.n_x_le(z) - both, self.n_y_le(z) - both

    def summary(self) -> tuple:
        """Hashable digest used by replay-determinism checks."""
        return (
            self.count_t,
            self.xs.tobytes(),
            self.ys.tobytes(),
            self.x_sorted.tobytes(),
            self.y_sorted.tobytes(),
            self.max_sorted.tobytes(),
            self.pooled_sorted.tobytes(),
        )


def ingest(state: EmpiricalState, pair: ObservationPair) -> EmpiricalState:
    if pair.t != state.count_t + 1:
        raise ValueError(f"out-of-order observation: expected t={state.count_t + 1}, got t={pair.t}")
    x, y = float(pair.x), float(pair.y)
    pooled = _insert_sorted(_insert_sorted(state.pooled_sorted, x), y)
    return EmpiricalState(
        count_t=pair.t,
        xs=np.append(state.xs, x),
        ys=np.append(state.ys, y),
        x_sorted=_insert_sorted(state.x_sorted, x),
        y_sorted=_insert_sorted(state.y_sorted, y),
        max_sorted=_insert_sorted(state.max_sorted, max(x, y)),
        pooled_sorted=pooled,
    )


def state_from_history(xs: Sequence[float], ys: Sequence[float]) -> EmpiricalState:
    """Build a state in one shot; equal (bitwise) to ingesting pair by pair."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ValueError("xs and ys must be 1-d arrays of equal length")
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        raise ValueError("non-finite values in history")
    return EmpiricalState(
        count_t=len(xs),
        xs=xs.copy(),
        ys=ys.copy(),
        x_sorted=np.sort(xs, kind="stable"),
        y_sorted=np.sort(ys, kind="stable"),
        max_sorted=np.sort(np.maximum(xs, ys), kind="stable"),
        pooled_sorted=np.sort(np.concatenate([xs, ys]), kind="stable"),
    )


@dataclass(frozen=True)
class EProcess:
    """Log-wealth accumulator ``log E_t = sum log S_l`` with ``E_0 = 1``.

    ``levels`` lists the significance levels whose first crossing time is
    tracked; ``first_crossing[i]`` is the first round with
    ``E_t >= 1 / levels[i]`` (or ``None``).
    """

    log_wealth: float = 0.0
    running_max: float = 0.0
    t: int = 0
    levels: tuple = ()
    first_crossing: tuple = ()
    floor_hits: int = 0
    history: Optional[tuple] = None

    @classmethod
    def start(cls, levels: Sequence[AlphaLike] = (), keep_history: bool = False) -> "EProcess":
        lv = tuple(as_level(a).alpha for a in levels)
        return cls(levels=lv, first_crossing=(None,) * len(lv), history=() if keep_history else None)

    @property
    def wealth(self) -> float:
        return math.exp(self.log_wealth)

    def crossing_time(self, alpha: AlphaLike) -> Optional[int]:
        a = as_level(alpha).alpha
        if a in self.levels:
            return self.first_crossing[self.levels.index(a)]
        if self.history is None:
            raise KeyError(f"level {a} not tracked and no history kept")
        thr = as_level(a).log_threshold
        for i, lw in enumerate(self.history, start=1):
            if lw >= thr:
                return i
        return None


def eprocess_step(ep: EProcess, s_t: float) -> EProcess:
    s_t = float(s_t)
    if math.isnan(s_t) or s_t < 0.0:
        raise ValueError(f"per-round e-value must be nonnegative, got {s_t}")
    hits = ep.floor_hits
    if s_t < WEALTH_FLOOR:
        warnings.warn(f"per-round e-value {s_t:g} clamped to {WEALTH_FLOOR:g} at t={ep.t + 1}",
                      WealthFloorWarning, stacklevel=2)
        s_t = WEALTH_FLOOR
        hits += 1
    lw = ep.log_wealth + math.log(s_t)
    t = ep.t + 1
    crossing = ep.first_crossing
    if ep.levels and lw > ep.running_max:
        crossing = tuple(
            c if c is not None or lw < -math.log(a) else t
            for a, c in zip(ep.levels, crossing)
        )
    return EProcess(lw, max(ep.running_max, lw), t, ep.levels, crossing, hits,
                    None if ep.history is None else ep.history + (lw,))


def ville_reject(ep: EProcess, alpha: AlphaLike) -> bool:
    """Sticky level-alpha decision: has ``E_t`` ever reached ``1/alpha``?"""
    return ep.running_max >= as_level(alpha).log_threshold

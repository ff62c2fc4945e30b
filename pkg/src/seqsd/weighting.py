"""Threshold grids and predictable mixture weights over thresholds.

All weight schemes are evaluated as a log-softmax of a per-threshold score so
that large scores (hedge weights grow linearly in t) never overflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np

from .core import EmpiricalState
from .fsd import ThresholdCounts

PROVENANCES = ("fixed-equidistant", "quantile-grid", "finite-support")
WEIGHT_KINDS = ("exp", "hedge", "linear", "uniform")

DEFAULT_INITIAL_COUNT = 21
DEFAULT_K = 100
DEFAULT_BURN_IN = 50


@dataclass(frozen=True, eq=False)
class ThresholdGrid:
    thresholds: np.ndarray
    provenance: str = "fixed-equidistant"

    def __post_init__(self):
        z = np.asarray(self.thresholds, dtype=float)
        if z.ndim != 1:
            raise ValueError("thresholds must be one-dimensional")
        if z.size and np.any(np.diff(z) <= 0):
            raise ValueError("thresholds must be strictly increasing")
        if not np.all(np.isfinite(z)):
            raise ValueError("thresholds must be finite")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        z.setflags(write=False)
        object.__setattr__(self, "thresholds", z)

    def __len__(self) -> int:
        return self.thresholds.size

    def __eq__(self, other) -> bool:
        return (isinstance(other, ThresholdGrid) and self.provenance == other.provenance
                and np.array_equal(self.thresholds, other.thresholds))

    def restrict(self, lo: float = -math.inf, hi: float = math.inf) -> "ThresholdGrid":
        """Keep thresholds strictly inside ``(lo, hi)``; may be empty."""
        z = self.thresholds
        return ThresholdGrid(z[(z > lo) & (z < hi)], self.provenance)


@dataclass(frozen=True)
class WeightScheme:
    """``kind`` is one of exp (self-normalized), hedge, linear, uniform.

    ``sd_floor=None`` means the default floor ``1/t``.
    """

    kind: str = "exp"
    eta: float = 1.0
    sd_floor: Optional[float] = None

    def __post_init__(self):
        if self.kind not in WEIGHT_KINDS:
            raise ValueError(f"unknown weight scheme {self.kind!r}; choose from {WEIGHT_KINDS}")
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if self.sd_floor is not None and not self.sd_floor > 0:
            raise ValueError(f"sd_floor must be positive, got {self.sd_floor}")


def init_thresholds(mode: str = "fixed-equidistant", *, lo: float = 0.0, hi: float = 1.0,
                    count: int = DEFAULT_INITIAL_COUNT,
                    support: Optional[Sequence[float]] = None) -> ThresholdGrid:
    if mode == "fixed-equidistant":
        if not (math.isfinite(lo) and math.isfinite(hi)) or not lo < hi:
            raise ValueError(f"degenerate threshold interval [{lo}, {hi}]")
        if count < 2:
            raise ValueError(f"need at least 2 equidistant thresholds, got {count}")
        return ThresholdGrid(np.linspace(lo, hi, count), mode)
    if mode == "finite-support":
        if support is None or len(support) == 0:
            raise ValueError("finite-support mode needs a nonempty support set")
        return ThresholdGrid(np.unique(np.asarray(support, dtype=float)), mode)
    raise ValueError(f"unknown threshold mode {mode!r}")


def quantile_grid(pooled_sorted: np.ndarray, K: int) -> np.ndarray:
    """Lower (inverse-CDF, type 1) quantiles at ``K`` equidistant levels in [0, 1], de-duplicated."""
    if K < 2:
        raise ValueError(f"K must be at least 2, got {K}")
    n = pooled_sorted.size
    if n == 0:
        raise ValueError("cannot take quantiles of an empty sample")
    # round before ceil so that e.g. 0.35 * 20 counts as 7, not 7.000000000000001
    idx = np.ceil(np.round(_levels(K) * n, 9)).astype(np.int64) - 1
    q = pooled_sorted[np.clip(idx, 0, n - 1)]
    # q is sorted already, so de-duplication is a neighbour comparison
    return q[np.concatenate(([True], q[1:] != q[:-1]))]


@lru_cache(maxsize=32)
def _levels(K: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, K)


def update_thresholds(state: EmpiricalState, initial: ThresholdGrid, K: int = DEFAULT_K,
                      burn_in: int = DEFAULT_BURN_IN) -> ThresholdGrid:
    """Grid used at round ``state.count_t + 1``.

    ``state`` holds the history through the previous round.  Until ``burn_in``
    rounds have been observed the initial grid is returned; afterwards the
    grid is replaced wholesale by pooled-sample quantiles.
    """
    if K < 2:
        raise ValueError(f"K must be at least 2, got {K}")
    if state.count_t < burn_in or state.count_t == 0:
        return initial
    key = ("qgrid", K)
    cached = state._cache.get(key)
    if cached is None:
        cached = ThresholdGrid(quantile_grid(state.pooled_sorted, K), "quantile-grid")
        state._cache[key] = cached
    return cached


def sd_hat(counts: ThresholdCounts, sd_floor: Optional[float] = None) -> float:
    t = counts.t
    if t < 2:
        raise ValueError("sd_hat needs at least two rounds")
    floor = 1.0 / t if sd_floor is None else sd_floor
    p, q = counts.n_p / t, counts.n_q / t
    var = max(0.0, p + q - (p - q) ** 2)
    return max(floor, math.sqrt(var / (t - 1)))


def softmax_weights(scores: np.ndarray) -> np.ndarray:
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        raise ValueError("empty score vector")
    z = scores - np.max(scores)
    w = np.exp(z)
    return w / w.sum()


def weights_from_stats(scheme: WeightScheme, t: int, sum_d: np.ndarray, sum_d2: np.ndarray,
                       bets: np.ndarray) -> np.ndarray:
    """Weights from per-threshold payoff sums over the previous ``t`` rounds.

    ``sum_d`` and ``sum_d2`` are running sums of the payoff and its square.
    For the first-order payoff these are ``n_p - n_q`` and ``n_p + n_q``, so
    this reproduces :func:`compute_weights` exactly; other orders feed the
    sums of their generator differences.
    """
    n = len(bets)
    if n == 0:
        raise ValueError("empty threshold grid")
    kind = scheme.kind
    if kind == "uniform":
        return np.full(n, 1.0 / n)
    if kind == "linear":
        b = np.asarray(bets, dtype=float)
        tot = b.sum()
        return b / tot if tot > 0 else np.full(n, 1.0 / n)
    if kind == "hedge":
        return softmax_weights(scheme.eta * np.asarray(sum_d, dtype=float))
    # self-normalized exponential weights
    if t < 2:
        return np.full(n, 1.0 / n)
    mean = np.asarray(sum_d, dtype=float) / t
    var = np.maximum(np.asarray(sum_d2, dtype=float) / t - mean ** 2, 0.0)
    floor = 1.0 / t if scheme.sd_floor is None else scheme.sd_floor
    sd = np.maximum(floor, np.sqrt(var / (t - 1)))
    return softmax_weights(scheme.eta * mean / sd)


def compute_weights(scheme: WeightScheme, grid: ThresholdGrid, state: EmpiricalState,
                    bets: Sequence[float]) -> np.ndarray:
    """First-order weights at the next round from the history in ``state``."""
    bets = np.asarray(bets, dtype=float)
    if bets.shape != (len(grid),):
        raise ValueError("one bet per threshold required")
    n_p, n_q = state.counts(grid.thresholds)
    return weights_from_stats(scheme, state.count_t, n_p - n_q, n_p + n_q, bets)


def mixture_e_value(weights: Sequence[float], values: Sequence[float]) -> float:
    w = np.asarray(weights, dtype=float)
    v = np.asarray(values, dtype=float)
    if w.shape != v.shape:
        raise ValueError(f"weights and values differ in length: {w.shape} vs {v.shape}")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("weights must be a probability vector")
    if np.any(v < 0):
        raise ValueError("per-threshold e-values must be nonnegative")
    return float(w @ v)


def piecewise_mixture_e_value(knots: Sequence[float], segment_values: Sequence[float],
                              left_value: float, cdf: Callable[[np.ndarray], np.ndarray]) -> float:
    """Integrate a right-continuous step function against a continuous measure.

    The integrand equals ``left_value`` below ``knots[0]`` and
    ``segment_values[j]`` on ``[knots[j], knots[j+1])`` (the last segment is
    unbounded above).  ``cdf`` is the distribution function of the mixing
    measure.
    """
    k = np.asarray(knots, dtype=float)
    v = np.asarray(segment_values, dtype=float)
    if k.shape != v.shape:
        raise ValueError("one value per knot required")
    if k.size == 0:
        return float(left_value)
    F = np.asarray(cdf(k), dtype=float)
    masses = np.diff(np.append(F, 1.0))
    return float(left_value * F[0] + masses @ v)

"""Single-threshold e-variables and bets for first-order dominance.

The null at threshold ``z`` is ``F_X(z) <= F_Y(z)``.  Each round pays
``d = 1{x <= z} - 1{y <= z}`` and a bettor with fraction ``lambda`` multiplies
wealth by ``1 + lambda * d``.  With ``p = P(X <= z < Y)`` and
``q = P(Y <= z < X)``, the expected factor is ``1 + lambda (p - q) <= 1``
under the null.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import ObservationPair

DEFAULT_CAP = 0.01


@dataclass(frozen=True)
class BetParams:
    c_cap: float = DEFAULT_CAP

    def __post_init__(self):
        if not (0.0 < self.c_cap < 1.0):
            raise ValueError(f"c_cap must lie in (0, 1), got {self.c_cap}")

    @property
    def max_lambda(self) -> float:
        return 1.0 - self.c_cap


@dataclass(frozen=True)
class ThresholdCounts:
    n_p: int
    n_q: int
    t: int

    def __post_init__(self):
        if min(self.n_p, self.n_q, self.t) < 0 or self.n_p + self.n_q > self.t:
            raise ValueError(f"inconsistent counts n_p={self.n_p}, n_q={self.n_q}, t={self.t}")


def _check_lambda(lam: float) -> None:
    if not (0.0 <= lam <= 1.0):
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")


def payoff_d(pair: ObservationPair, z: float) -> int:
    return int(pair.x <= z) - int(pair.y <= z)


def payoff_d_vec(x: float, y: float, z: np.ndarray) -> np.ndarray:
    """Vectorized payoff over a threshold array."""
    return (x <= z).astype(np.int8) - (y <= z).astype(np.int8)


def building_block_e(lam: float, z: float, pair: ObservationPair) -> float:
    _check_lambda(lam)
    return 1.0 + lam * payoff_d(pair, z)


def gro_lambda_star(p: float, q: float) -> float:
    if p < 0 or q < 0:
        raise ValueError(f"probabilities must be nonnegative, got p={p}, q={q}")
    if p + q == 0:
        return 0.0
    return (p - q) / (p + q)


def e_power(lam: float, p: float, q: float) -> float:
    """Expected log-growth ``p log(1+lam) + q log(1-lam)``."""
    up = p * math.log1p(lam) if p > 0 else 0.0
    if q > 0:
        down = q * math.log1p(-lam) if lam < 1 else -math.inf
    else:
        down = 0.0
    return up + down


def plugin_lambda(counts: ThresholdCounts, cap: BetParams = BetParams()) -> float:
    tot = counts.n_p + counts.n_q
    if tot == 0:
        return 0.0
    return min(cap.max_lambda, max(0.0, (counts.n_p - counts.n_q) / tot))


def plugin_lambda_vec(n_p: np.ndarray, n_q: np.ndarray, c_cap: float = DEFAULT_CAP) -> np.ndarray:
    """Array version of :func:`plugin_lambda` for a whole threshold grid."""
    n_p = np.asarray(n_p, dtype=float)
    n_q = np.asarray(n_q, dtype=float)
    # an empty denominator has a zero numerator, so dividing by 1 gives 0
    raw = (n_p - n_q) / np.maximum(n_p + n_q, 1.0)
    return np.minimum(np.maximum(raw, 0.0), 1.0 - c_cap)


def _ecdf(batch: np.ndarray, z: float) -> float:
    return float(np.count_nonzero(batch <= z)) / batch.size


def batch_e(lam: float, z: float, batch_x: Sequence[float], batch_y: Sequence[float]) -> float:
    """Unpaired batch e-value ``1 + lam (ECDF_x(z) - ECDF_y(z))``.

    Valid when the batches come from independent rounds; the two batches may
    have different sizes.
    """
    _check_lambda(lam)
    bx = np.asarray(batch_x, dtype=float)
    by = np.asarray(batch_y, dtype=float)
    if bx.size == 0 or by.size == 0:
        raise ValueError("batches must be nonempty")
    if not (np.all(np.isfinite(bx)) and np.all(np.isfinite(by))):
        raise ValueError("non-finite values in batch")
    return 1.0 + lam * (_ecdf(bx, z) - _ecdf(by, z))


def batch_payoff_vec(batch_x: np.ndarray, batch_y: np.ndarray, z: np.ndarray) -> np.ndarray:
    """ECDF difference of two batches on a threshold array."""
    bx = np.sort(np.asarray(batch_x, dtype=float))
    by = np.sort(np.asarray(batch_y, dtype=float))
    return (np.searchsorted(bx, z, side="right") / bx.size
            - np.searchsorted(by, z, side="right") / by.size)

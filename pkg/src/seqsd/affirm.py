"""Affirming dominance: min e-processes, KS-type band tests and tvCS separation.

Two families live here.

* The min e-process runs one plug-in FSD e-process per threshold of a known
  finite support and reports the smallest.  It is an e-process for the
  union null "dominance fails at some threshold", so crossing ``1/alpha``
  affirms (restricted) dominance.
* Band tests use a time-uniform confidence band for a CDF with width
  ``A * sqrt((loglog(e t / t_min) + C) / t)``.  The constant ``C`` is
  calibrated by :func:`calibrate_lil_constant`; the derivation is in its
  docstring.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, optimize, special

from .core import AlphaLike, EmpiricalState, as_level
from .fsd import DEFAULT_CAP, plugin_lambda_vec

DEFAULT_A = 0.85

# C(0.85, alpha) from calibrate_lil_constant(0.85, alpha), rounded up in the
# fourth decimal; regenerate with `python -m seqsd.affirm`.
DEFAULT_C_TABLE = {
    0.01: 9.1687,
    0.05: 7.9381,
    0.1: 7.4037,
}


# ---------------------------------------------------------------------------
# min e-process


@dataclass(frozen=True, eq=False)
class MinEProcessState:
    thresholds: np.ndarray
    log_wealth: np.ndarray
    running_max_min: float = 0.0
    t: int = 0

    @classmethod
    def start(cls, thresholds: Sequence[float]) -> "MinEProcessState":
        z = np.unique(np.asarray(thresholds, dtype=float))
        if z.size == 0:
            raise ValueError("need at least one threshold")
        return cls(z, np.zeros(z.size))

    @property
    def log_e(self) -> float:
        return float(self.log_wealth.min())


def min_eprocess_update(state: MinEProcessState, factors: Sequence[float]) -> tuple[MinEProcessState, float]:
    f = np.asarray(factors, dtype=float)
    if f.shape != state.log_wealth.shape:
        raise ValueError(f"expected {state.log_wealth.size} factors, got {f.size}")
    if np.any(~(f > 0)):
        raise ValueError("per-threshold factors must be positive")
    lw = state.log_wealth + np.log(f)
    m = float(lw.min())
    new = replace(state, log_wealth=lw, running_max_min=max(state.running_max_min, m), t=state.t + 1)
    return new, math.exp(m)


def min_eprocess_factors(state: EmpiricalState, thresholds: np.ndarray, x: float, y: float,
                         c_cap: float = DEFAULT_CAP) -> np.ndarray:
    """Plug-in factors for the next pair, betting with counts from ``state``."""
    n_p, n_q = state.counts(thresholds)
    lam = plugin_lambda_vec(n_p, n_q, c_cap)
    d = (x <= thresholds).astype(float) - (y <= thresholds).astype(float)
    return 1.0 + lam * d


def support_thresholds(support: Sequence[float]) -> np.ndarray:
    """Drop the largest support point, where both CDFs equal one."""
    z = np.unique(np.asarray(support, dtype=float))
    if z.size < 2:
        raise ValueError("finite support needs at least two points")
    return z[:-1]


class MinEProcessTest:
    """Sequential test of the non-dominance null on a declared finite support."""

    def __init__(self, support: Sequence[float], alpha: AlphaLike = 0.05,
                 c_cap: float = DEFAULT_CAP, continuous: bool = False):
        if continuous:
            raise ValueError("the min e-process requires a finite support; continuous support declared")
        self.level = as_level(alpha)
        self.c_cap = c_cap
        self.support = np.unique(np.asarray(support, dtype=float))
        self.min_state = MinEProcessState.start(support_thresholds(self.support))
        self.data = EmpiricalState()

    def update(self, x: float, y: float) -> float:
        from .core import ObservationPair, ingest

        for label, v in (("x", x), ("y", y)):
            if not np.any(self.support == v):
                raise ValueError(f"{label}={v} is not in the declared support")
        f = min_eprocess_factors(self.data, self.min_state.thresholds, x, y, self.c_cap)
        self.min_state, e = min_eprocess_update(self.min_state, f)
        self.data = ingest(self.data, ObservationPair(x, y, self.data.count_t + 1))
        return e

    @property
    def rejected(self) -> bool:
        return self.min_state.running_max_min >= self.level.log_threshold


def affirm_sd_via_min(xs: Sequence[float], ys: Sequence[float], support: Sequence[float],
                      alpha: AlphaLike = 0.05, continuous: bool = False,
                      c_cap: float = DEFAULT_CAP) -> bool:
    test = MinEProcessTest(support, alpha, c_cap, continuous)
    for x, y in zip(xs, ys):
        test.update(float(x), float(y))
        if test.rejected:
            return True
    return False


# ---------------------------------------------------------------------------
# LIL band


@dataclass(frozen=True)
class BandSpec:
    """``C=None`` picks the shipped calibration for (A, alpha) when available."""

    alpha: float = 0.05
    A: float = DEFAULT_A
    C: Optional[float] = None
    t_min: int = 1

    def __post_init__(self):
        as_level(self.alpha)
        if self.A < 0.5:
            raise ValueError(f"A must be at least 1/2, got {self.A}")
        if int(self.t_min) != self.t_min or self.t_min < 1:
            raise ValueError(f"t_min must be a positive integer, got {self.t_min}")
        if self.C is None:
            object.__setattr__(self, "C", default_lil_constant(self.A, self.alpha))
        elif not self.C > 0:
            raise ValueError(f"C must be positive, got {self.C}")


def default_lil_constant(A: float, alpha: float) -> float:
    if A == DEFAULT_A and DEFAULT_C_TABLE.get(alpha) is not None:
        return DEFAULT_C_TABLE[alpha]
    return calibrate_lil_constant(A, alpha)


def lil_width(t: int, band: BandSpec) -> float:
    if t < band.t_min:
        raise ValueError(f"t={t} is below t_min={band.t_min}")
    return band.A * math.sqrt((math.log(math.log(math.e * t / band.t_min)) + band.C) / t)


def ks_statistic(state: EmpiricalState) -> float:
    """``sup_z (F_X - F_Y)(z)`` over the pooled sample (where the sup is attained)."""
    if state.count_t == 0:
        return 0.0
    z = state.pooled_sorted
    return float(max(0.0, np.max(state.ecdf_x(z) - state.ecdf_y(z))))


def ks_band_test(state: EmpiricalState, band: BandSpec) -> bool:
    """Single-time decision; use :class:`KSBandTest` for the sticky version."""
    return ks_statistic(state) > 2.0 * lil_width(state.count_t, band)


class KSBandTest:
    def __init__(self, band: BandSpec):
        self.band = band
        self.state = EmpiricalState()
        self.rejected = False
        self.rejection_time: Optional[int] = None

    def update(self, x: float, y: float) -> bool:
        from .core import ObservationPair, ingest

        self.state = ingest(self.state, ObservationPair(x, y, self.state.count_t + 1))
        if not self.rejected and self.state.count_t >= self.band.t_min and ks_band_test(self.state, self.band):
            self.rejected = True
            self.rejection_time = self.state.count_t
        return self.rejected


def lil_bands(state: EmpiricalState, band: BandSpec) -> tuple[Callable, Callable]:
    """(lower band for F_X, upper band for F_Y), each holding at level alpha/2."""
    w = lil_width(state.count_t, band)

    def lcb_x(z):
        return np.clip(state.ecdf_x(z) - w, 0.0, 1.0)

    def ucb_y(z):
        return np.clip(state.ecdf_y(z) + w, 0.0, 1.0)

    return lcb_x, ucb_y


def tvcs_affirm_test(lcb_x: Callable, ucb_y: Callable, witness_set: Sequence[float]) -> bool:
    """True iff ``ucb_y(z) < lcb_x(z)`` at every witness point."""
    z = np.asarray(witness_set, dtype=float)
    if z.size == 0:
        raise ValueError("witness set must be nonempty")
    return bool(np.all(np.asarray(ucb_y(z)) < np.asarray(lcb_x(z))))


class TvCSAffirmTest:
    """Sticky wrapper around :func:`tvcs_affirm_test` with the LIL bands."""

    def __init__(self, band: BandSpec, witness_set: Sequence[float]):
        if len(witness_set) == 0:
            raise ValueError("witness set must be nonempty")
        self.band = band
        self.witness = np.asarray(witness_set, dtype=float)
        self.state = EmpiricalState()
        self.rejected = False
        self.rejection_time: Optional[int] = None

    def update(self, x: float, y: float) -> bool:
        from .core import ObservationPair, ingest

        self.state = ingest(self.state, ObservationPair(x, y, self.state.count_t + 1))
        if not self.rejected and self.state.count_t >= self.band.t_min:
            if tvcs_affirm_test(*lil_bands(self.state, self.band), self.witness):
                self.rejected = True
                self.rejection_time = self.state.count_t
        return self.rejected


# ---------------------------------------------------------------------------
# calibration of C(A, alpha)


_S0 = math.sqrt(math.log(2.0) / 2.0)  # where 2 e^{-2 s^2} reaches 1


def _log_mgf_bound(theta: float) -> float:
    """log of ``1 + int_0^inf theta e^{theta s} min(1, 2 e^{-2 s^2}) ds``.

    This bounds ``E e^{theta W}`` for ``W >= 0`` with the two-sided DKW tail.
    """
    head = theta * _S0  # 1 + (e^{theta s0} - 1)
    # 2 theta e^{theta^2/8} sqrt(pi/8) erfc(sqrt(2) (s0 - theta/4)), erfc(x) = 2 Phi(-sqrt(2) x)
    tail = (math.log(4.0 * theta * math.sqrt(math.pi / 8.0)) + theta * theta / 8.0
            + float(special.log_ndtr(-2.0 * (_S0 - theta / 4.0))))
    return float(np.logaddexp(head, tail))


def epoch_bound(r: float) -> float:
    """Chernoff-Doob bound on ``P(max_{n <= N} sqrt(N) sup(F_n - F) >= r)``."""
    if r <= 0:
        return 1.0

    def obj(theta):
        return -theta * r + _log_mgf_bound(theta)

    res = optimize.minimize_scalar(obj, bounds=(1e-6, 4.0 * r + 2.0), method="bounded",
                                   options={"xatol": 1e-7})
    return min(1.0, math.exp(res.fun))


def _log_tail_bound(r: float) -> float:
    # the epoch bound evaluated at theta = 4r, using a Gaussian integral
    return float(np.logaddexp(-4 * r * r, math.log(8 * r * math.sqrt(math.pi / 2)) - 2 * r * r))


def _total_crossing_bound(A: float, C: float, ratio: float, n_exact: int) -> float:
    log_ratio = math.log(ratio)

    def r_of(u):  # u = log(1 + l * log ratio)
        return A * math.sqrt((u + C) / ratio)

    head = sum(epoch_bound(r_of(math.log1p(l * log_ratio))) for l in range(n_exact))
    # remaining epochs: the bound decreases in l, so the sum is below the integral from n_exact - 1
    u0 = math.log1p((n_exact - 1) * log_ratio)
    tail, _ = integrate.quad(lambda u: math.exp(_log_tail_bound(r_of(u)) + u) / log_ratio, u0, np.inf, limit=200)
    return head + tail


def calibrate_lil_constant(A: float = DEFAULT_A, alpha: float = 0.05,
                           ratios: Sequence[float] = None, n_exact: int = 200) -> float:
    """Smallest ``C`` certified by geometric stitching, minimized over epoch ratios.

    Split time into epochs ``[t_min eta^l, t_min eta^{l+1})``.  Within an epoch,
    ``n * sup_z (F_n - F)(z)`` is a nonnegative submartingale, so Doob's
    maximal inequality applied to ``exp(theta * .)`` bounds the chance of
    crossing ``n * width_n`` (increasing in ``n``) by ``exp(-theta r) E
    exp(theta W)``, where ``W = sqrt(N) sup(F_N - F)`` at the epoch end and
    ``r = A sqrt((log(1 + l log eta) + C) / eta)``.  The moment generating
    function is bounded through the two-sided DKW tail ``min(1, 2 e^{-2 s^2})``.
    Summing over epochs must give at most ``alpha / 2`` (one side of one CDF),
    which requires ``eta < 2 A^2``.
    """
    level = as_level(alpha).alpha
    if A <= math.sqrt(0.5):
        raise ValueError(f"stitching needs A > 1/sqrt(2), got {A}")
    if ratios is None:
        ratios = 1.0 + np.linspace(0.08, 0.2, 13) * (2 * A * A - 1.0)
    target = level / 2.0
    best = math.inf
    for ratio in ratios:
        if not 1.0 < ratio < 2 * A * A:
            continue

        def excess(C, ratio=ratio):
            return _total_crossing_bound(A, C, ratio, n_exact) - target

        hi_c = 8.0
        while excess(hi_c) > 0 and hi_c < 1e4:
            hi_c *= 2
        if excess(hi_c) > 0:
            continue
        best = min(best, optimize.brentq(excess, 1e-9, hi_c, xtol=1e-6) if excess(1e-9) > 0 else 1e-9)
    if not math.isfinite(best):
        raise RuntimeError(f"could not calibrate C for A={A}, alpha={alpha}")
    return best


if __name__ == "__main__":
    for a in (0.01, 0.05, 0.1):
        print(a, calibrate_lil_constant(DEFAULT_A, a))

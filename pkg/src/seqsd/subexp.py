"""Sub-exponential e-variables and gamma-exponential mixtures for unbounded data.

For 2-SD (and 3-SD with squared positive parts) we bet on the increment
``Delta = (z - X)_+^{k-1} - (z - Y)_+^{k-1}``, which under the null has
nonpositive mean.  Assuming ``Delta`` is sub-exponential with variance proxy
``nu**2`` and scale ``c``,

    exp(lambda * S_t - psi_E(lambda; c) * nu**2 * t)

is a test supermartingale for each ``lambda in [0, 1/c)``, where ``S_t`` is the
running sum of increments.  Mixing over ``lambda`` with a truncated gamma
density on ``u = 1 - c * lambda`` gives a closed form in terms of incomplete
gamma functions, implemented in :func:`gamma_exp_mixture`.

The density, in terms of ``lambda`` on ``[0, 1/c]``, is

    f(lambda) = c * C(a) * u**(a - 1) * exp(-a * u),   u = 1 - c * lambda,
    a = rho / c**2,   C(a) = a**a / gamma_lower(a, a).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import special

from .core import ObservationPair

DEFAULT_T_OPT = 100.0


@dataclass(frozen=True)
class SubExpParams:
    """``rho=None`` tunes the mixture to intrinsic time ``nu**2 * 100``."""

    nu: float = 1.0
    scale_c: float = 1.0
    rho: Optional[float] = None

    def __post_init__(self):
        if not (self.nu > 0 and self.scale_c > 0):
            raise ValueError(f"nu and scale_c must be positive, got nu={self.nu}, c={self.scale_c}")
        if self.rho is None:
            object.__setattr__(self, "rho", self.nu ** 2 * DEFAULT_T_OPT)
        elif not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")


def psi_e(lam: float, scale_c: float) -> float:
    if not scale_c > 0:
        raise ValueError("scale_c must be positive")
    if not (0.0 <= lam < 1.0 / scale_c):
        raise ValueError(f"lambda must lie in [0, 1/c) = [0, {1.0 / scale_c}), got {lam}")
    cl = scale_c * lam
    return (-math.log1p(-cl) - cl) / scale_c ** 2


def increment(pair: ObservationPair, z: float, k: int) -> float:
    if k not in (2, 3):
        raise ValueError(f"k must be 2 or 3, got {k}")
    return max(z - pair.x, 0.0) ** (k - 1) - max(z - pair.y, 0.0) ** (k - 1)


def increment_vec(x: float, y: float, z: np.ndarray, k: int) -> np.ndarray:
    return np.maximum(z - x, 0.0) ** (k - 1) - np.maximum(z - y, 0.0) ** (k - 1)


def subexp_e(lam: float, z: float, pair: ObservationPair, params: SubExpParams, k: int = 2) -> float:
    psi = psi_e(lam, params.scale_c)
    return math.exp(lam * increment(pair, z, k) - psi * params.nu ** 2)


def mixing_density(lam, params: SubExpParams):
    """Gamma-type mixing density over ``lambda in [0, 1/c]`` (zero outside)."""
    c = params.scale_c
    a = params.rho / c ** 2
    lam = np.asarray(lam, dtype=float)
    u = 1.0 - c * lam
    inside = (u > 0) & (u <= 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        logf = math.log(c) + _log_norm_const(a) + (a - 1) * np.log(u) - a * u
    return np.where(inside, np.exp(logf), 0.0)


def _log_norm_const(a: float) -> float:
    return a * math.log(a) - special.gammaln(a) - math.log(special.gammainc(a, a))


def log_gamma_exp_mixture(s: float, v: float, params: SubExpParams, exact: bool = False) -> float:
    """log of :func:`gamma_exp_mixture`."""
    if v < 0:
        raise ValueError(f"v must be nonnegative, got {v}")
    c, rho = params.scale_c, params.rho
    c2 = c * c
    a = rho / c2
    b = (v + rho) / c2
    B = (c * s + v + rho) / c2
    log_c = _log_norm_const(a)
    if B <= 0 and not exact:
        # integrand bounded by its value at u = 1
        return log_c - a - math.log(b)
    if B > b:
        # regularized incomplete gamma is at least ~1/2 here, so no underflow
        return (log_c + (c * s + v) / c2 + special.gammaln(b)
                + math.log(special.gammainc(b, B)) - b * math.log(B))
    # m = C(a) e^{-a} M(1, b + 1, B) / b, accurate and bounded for B <= b
    return log_c - a - math.log(b) + math.log(special.hyp1f1(1.0, b + 1.0, B))


def gamma_exp_mixture(s: float, v: float, params: SubExpParams, exact: bool = False) -> float:
    """Mixture over ``lambda`` of ``exp(lambda s - psi_E(lambda; c) v)``.

    With ``B = (c s + v + rho) / c**2 <= 0`` the default returns the
    conservative value ``C(a) e^{-a} / b`` (at most 1); ``exact=True``
    returns the exact integral instead.
    """
    return math.exp(log_gamma_exp_mixture(s, v, params, exact))


@dataclass(frozen=True, eq=False)
class SubExpAccumulator:
    """Per-threshold running sums for a fixed grid; ``v`` is shared."""

    z: np.ndarray
    s: np.ndarray
    v: float = 0.0

    @classmethod
    def start(cls, thresholds: Sequence[float]) -> "SubExpAccumulator":
        z = np.asarray(thresholds, dtype=float)
        if z.size == 0:
            raise ValueError("need at least one threshold")
        return cls(z, np.zeros_like(z), 0.0)

    def update(self, x: float, y: float, params: SubExpParams, k: int) -> "SubExpAccumulator":
        return SubExpAccumulator(self.z, self.s + increment_vec(x, y, self.z, k),
                                 self.v + params.nu ** 2)

    def log_e_value(self, params: SubExpParams) -> float:
        """log of the uniform average over thresholds of the mixture e-processes."""
        logs = np.array([log_gamma_exp_mixture(si, self.v, params, exact=True) for si in self.s])
        return float(np.logaddexp.reduce(logs) - math.log(logs.size))

"""Generators for integral stochastic orders and universal-portfolio betting.

An order is tested threshold by threshold: at index ``z`` the round payoff is
``u_z(Y) - u_z(X)`` for a generator ``u_z`` bounded so that payoffs lie in
``[-1, 1]``.  First-order dominance fits the same mould with
``u_z(x) = -1{x <= z}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import ObservationPair

ORDER_KINDS = ("fsd", "ksd", "icx", "laplace")
LAPLACE_DEFAULT_GRID = (0.0, 1e-2, 1e-1, 1.0, 1e2, 1e3)

UP_GRID_SIZE = 101
UP_MARGIN = 1e-4


class SupportViolation(ValueError):
    """An observation falls outside the support bound declared for the order."""


@dataclass(frozen=True)
class OrderSpec:
    kind: str = "fsd"
    k: int = 2
    a: float = 0.0
    b: float = 1.0
    index_grid: tuple = LAPLACE_DEFAULT_GRID

    def __post_init__(self):
        if self.kind not in ORDER_KINDS:
            raise ValueError(f"unknown order {self.kind!r}; choose from {ORDER_KINDS}")
        if self.kind == "ksd":
            if int(self.k) != self.k or self.k < 2:
                raise ValueError(f"ksd needs an integer k >= 2, got {self.k}")
            if not math.isfinite(self.a):
                raise ValueError("ksd lower bound a must be finite")
        if self.kind == "icx" and not math.isfinite(self.b):
            raise ValueError("icx upper bound b must be finite")
        if self.kind == "laplace":
            grid = tuple(float(r) for r in self.index_grid)
            if not grid or any(not (r >= 0 and math.isfinite(r)) for r in grid):
                raise ValueError("laplace index grid must be nonempty, finite and nonnegative")
            object.__setattr__(self, "index_grid", grid)

    @classmethod
    def fsd(cls) -> "OrderSpec":
        return cls("fsd")

    @classmethod
    def ksd(cls, k: int, a: float) -> "OrderSpec":
        return cls("ksd", k=k, a=a)

    @classmethod
    def icx(cls, b: float) -> "OrderSpec":
        return cls("icx", b=b)

    @classmethod
    def laplace(cls, index_grid: Sequence[float] = LAPLACE_DEFAULT_GRID) -> "OrderSpec":
        return cls("laplace", index_grid=tuple(index_grid))

    def describe(self) -> str:
        if self.kind == "ksd":
            return f"ksd:{self.k}:{self.a:g}"
        if self.kind == "icx":
            return f"icx:{self.b:g}"
        return self.kind

    def check_support(self, x: float, label: str = "x") -> None:
        if self.kind == "ksd" and x < self.a:
            raise SupportViolation(f"{label}={x} lies below the declared lower bound a={self.a}")
        if self.kind == "icx" and x > self.b:
            raise SupportViolation(f"{label}={x} lies above the declared upper bound b={self.b}")
        if self.kind == "laplace" and x < 0:
            raise SupportViolation(f"{label}={x} is negative; the Laplace order is tested on [0, inf)")

    def admissible(self, z: np.ndarray) -> np.ndarray:
        """Mask of indices at which the generator is defined."""
        z = np.asarray(z, dtype=float)
        if self.kind == "ksd":
            return z > self.a
        if self.kind == "icx":
            return z < self.b
        if self.kind == "laplace":
            return z >= 0
        return np.ones(z.shape, dtype=bool)


def _check_index(order: OrderSpec, z: np.ndarray) -> None:
    if not np.all(order.admissible(z)):
        bound = {"ksd": f"z > a={order.a}", "icx": f"z < b={order.b}", "laplace": "r >= 0"}[order.kind]
        raise ValueError(f"index outside admissible range for {order.describe()}: need {bound}")


def generator_vec(order: OrderSpec, z: np.ndarray, x: float) -> np.ndarray:
    """``u_z(x)`` for an array of admissible indices ``z`` (no checks)."""
    if order.kind == "fsd":
        return -(x <= z).astype(float)
    if order.kind == "ksd":
        return -(np.maximum(z - x, 0.0) / (z - order.a)) ** (order.k - 1)
    if order.kind == "icx":
        return np.maximum(x - z, 0.0) / (order.b - z)
    return -np.expm1(-z * x)


def generator(order: OrderSpec, z_or_r: float, x: float) -> float:
    z = np.asarray(float(z_or_r))
    _check_index(order, z)
    order.check_support(x)
    return float(generator_vec(order, z, x))


def payoff_vec(order: OrderSpec, z: np.ndarray, x: float, y: float) -> np.ndarray:
    return generator_vec(order, z, y) - generator_vec(order, z, x)


def payoff_matrix(order: OrderSpec, z: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Payoffs for every (threshold, round) pair; shape ``(len(z), len(xs))``."""
    zc = np.asarray(z, dtype=float)[:, None]
    return generator_vec(order, zc, ys[None, :]) - generator_vec(order, zc, xs[None, :])


def order_e_value(order: OrderSpec, lam: float, z_or_r: float, pair: ObservationPair) -> float:
    if not (0.0 <= lam <= 1.0):
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    d = generator(order, z_or_r, pair.y) - generator(order, z_or_r, pair.x)
    return 1.0 + lam * d


# ---------------------------------------------------------------------------
# universal portfolio


def up_candidates(n_grid: int = UP_GRID_SIZE, c_up: float = UP_MARGIN) -> np.ndarray:
    if n_grid < 2:
        raise ValueError("need at least two candidate bets")
    if not (0.0 < c_up < 0.5):
        raise ValueError(f"c_up must lie in (0, 1/2), got {c_up}")
    return np.linspace(c_up, 1.0 - c_up, n_grid)


def jeffreys_log_prior(lams: np.ndarray) -> np.ndarray:
    """Beta(1/2, 1/2) density evaluated on the grid, normalized to sum 1 (log scale)."""
    logd = -0.5 * (np.log(lams) + np.log1p(-lams))
    return logd - np.logaddexp.reduce(logd)


@dataclass(frozen=True, eq=False)
class UPState:
    """Candidate bets with log-weights ``log prior + log wealth``."""

    lams: np.ndarray = field(default_factory=up_candidates)
    log_prior: np.ndarray = None
    log_weights: np.ndarray = None

    def __post_init__(self):
        if self.lams.size < 2:
            raise ValueError("need at least two candidate bets")
        if self.log_prior is None:
            object.__setattr__(self, "log_prior", jeffreys_log_prior(self.lams))
        if self.log_weights is None:
            object.__setattr__(self, "log_weights", self.log_prior.copy())

    @property
    def log_wealth_per_candidate(self) -> np.ndarray:
        return self.log_weights - self.log_prior

    @property
    def log_mixture_wealth(self) -> float:
        """log of the prior mixture of candidate wealths."""
        return float(np.logaddexp.reduce(self.log_weights))


def posterior_mean(lams: np.ndarray, log_weights: np.ndarray) -> np.ndarray:
    """Row-wise weighted mean of ``lams`` under unnormalized log-weights."""
    lw = np.asarray(log_weights, dtype=float)
    w = np.exp(lw - lw.max(axis=-1, keepdims=True))
    return (w @ lams) / w.sum(axis=-1)


def up_bet(state: UPState) -> float:
    return float(posterior_mean(state.lams, state.log_weights))


def up_log_factors(lams: np.ndarray, s_t) -> np.ndarray:
    """``log((1 - lam) + lam * s)``; broadcasts ``s`` against the candidates."""
    s = np.asarray(s_t, dtype=float)
    if np.any(s < 0):
        raise ValueError("payoffs fed to the universal portfolio must be nonnegative")
    return np.log1p(lams * (s[..., None] - 1.0)) if s.ndim else np.log1p(lams * (s - 1.0))


def up_update(state: UPState, s_t: float) -> UPState:
    return UPState(state.lams, state.log_prior, state.log_weights + up_log_factors(state.lams, s_t))


def up_recompute_for_threshold(xs: Sequence[float], ys: Sequence[float], order: OrderSpec,
                               z_or_r: float, base: UPState = None) -> UPState:
    """UP state after replaying the full history at a single threshold."""
    base = UPState() if base is None else base
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.size == 0:
        return base
    _check_index(order, np.asarray(float(z_or_r)))
    d = payoff_matrix(order, np.array([float(z_or_r)]), xs, ys)[0]
    inc = np.log1p(np.outer(d, base.lams)).sum(axis=0)
    return UPState(base.lams, base.log_prior, base.log_prior + inc)


def up_log_wealth_rows(lams: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Accumulated ``sum_l log(1 + lam_g d_il)`` for a payoff matrix ``d`` (rows = thresholds)."""
    out = np.empty((d.shape[0], lams.size))
    for g, lam in enumerate(lams):
        out[:, g] = np.log1p(lam * d).sum(axis=1)
    return out


def up_log_wealth_from_counts(lams: np.ndarray, n_p: np.ndarray, n_q: np.ndarray) -> np.ndarray:
    """First-order shortcut: payoffs are +1 ``n_p`` times and -1 ``n_q`` times."""
    n_p = np.asarray(n_p, dtype=float)[:, None]
    n_q = np.asarray(n_q, dtype=float)[:, None]
    return n_p * np.log1p(lams)[None, :] + n_q * np.log1p(-lams)[None, :]

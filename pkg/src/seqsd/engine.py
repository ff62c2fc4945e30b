"""Sequential dominance tests assembled from grids, bets and weights.

Each round runs in two halves.  :meth:`DominanceTest.plan` picks thresholds,
bets and mixture weights from the history through the previous round only;
:meth:`DominanceTest.settle` then reveals the new pair and multiplies wealth
by the mixture e-value.  Keeping the halves separate makes predictability easy
to audit, and lets several tests share one :class:`~seqsd.core.EmpiricalState`
in simulations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import AlphaLike, EmpiricalState, EProcess, ObservationPair, as_level, eprocess_step, ingest, ville_reject
from .fsd import DEFAULT_CAP, batch_payoff_vec, plugin_lambda_vec
from .orders import (OrderSpec, jeffreys_log_prior, payoff_matrix, payoff_vec, posterior_mean,
                     up_candidates, up_log_wealth_from_counts, up_log_wealth_rows)
from .subexp import SubExpAccumulator, SubExpParams
from .weighting import (DEFAULT_BURN_IN, DEFAULT_K, ThresholdGrid, WeightScheme, init_thresholds,
                        quantile_grid, update_thresholds, weights_from_stats)

BETTORS = ("gro", "constant", "up")
VARIANTS = ("adagro-exp", "adagro-hedge", "adagro-linear", "gro", "constant", "up", "subexp")
FSD_VARIANTS = ("adagro-exp", "adagro-hedge", "adagro-linear", "gro", "constant")
DEFAULT_REFRESH_RATIO = 2.0


@dataclass(frozen=True, eq=False)
class RoundPlan:
    """Everything committed before the round-t pair is seen."""

    thresholds: np.ndarray
    bets: np.ndarray
    weights: np.ndarray


def _empty_plan() -> RoundPlan:
    e = np.empty(0)
    return RoundPlan(e, e, e)


class DominanceTest:
    """Mixture-of-thresholds e-process for the null "X dominates Y" under an order.

    For first order the null is ``F_X(z) <= F_Y(z)`` for every ``z``; the payoff
    ``u_z(Y) - u_z(X)`` has nonpositive mean under it.

    Parameters mirror the CLI: ``bettor`` is gro (plug-in, first order only),
    constant or up; ``adaptive`` swaps the initial grid for a pooled-quantile
    grid of size ``K`` once ``burn_in`` rounds are in.  For orders other than
    first order, per-threshold state must be replayed from history when the
    grid moves, so the grid is only refreshed at rounds ``burn_in *
    refresh_ratio**j`` (``refresh_ratio=1`` refreshes every round).
    """

    def __init__(self, order: OrderSpec = OrderSpec(), bettor: str = "gro",
                 weights: WeightScheme = WeightScheme(), adaptive: bool = True,
                 initial_grid: Optional[ThresholdGrid] = None, K: int = DEFAULT_K,
                 burn_in: int = DEFAULT_BURN_IN, c_cap: float = DEFAULT_CAP,
                 constant_lambda: float = 0.1, refresh_ratio: float = DEFAULT_REFRESH_RATIO,
                 alpha: AlphaLike = 0.05, keep_history: bool = False, name: str = ""):
        if bettor not in BETTORS:
            raise ValueError(f"unknown bettor {bettor!r}; choose from {BETTORS}")
        if bettor == "gro" and order.kind != "fsd":
            raise ValueError("the plug-in GRO bet is only available for first-order dominance; use up")
        if not (0.0 < c_cap < 1.0):
            raise ValueError(f"c_cap must lie in (0, 1), got {c_cap}")
        if not (0.0 <= constant_lambda <= 1.0 - c_cap):
            raise ValueError(f"constant bet must lie in [0, 1 - c_cap], got {constant_lambda}")
        if K < 2:
            raise ValueError(f"K must be at least 2, got {K}")
        if burn_in < 1:
            raise ValueError(f"burn_in must be at least 1, got {burn_in}")
        if refresh_ratio < 1.0:
            raise ValueError(f"refresh_ratio must be at least 1, got {refresh_ratio}")
        self.order = order
        self.bettor = bettor
        self.scheme = weights
        self.K, self.burn_in, self.c_cap = K, burn_in, c_cap
        self.constant_lambda = constant_lambda
        self.refresh_ratio = refresh_ratio
        self.level = as_level(alpha)
        self.name = name or bettor

        if order.kind == "laplace":
            initial_grid = ThresholdGrid(np.unique(order.index_grid), "finite-support")
        elif initial_grid is None:
            initial_grid = init_thresholds("fixed-equidistant", lo=0.0, hi=1.0)
        self.initial_grid = initial_grid
        # grids built from a known support (and the Laplace index set) never move
        self.adaptive = adaptive and initial_grid.provenance != "finite-support"
        self._initial_z = self._admissible(initial_grid.thresholds)

        self.ep = EProcess.start([self.level], keep_history=keep_history)
        self.state = EmpiricalState()  # used by update(); step() takes a shared state
        self.last_plan: RoundPlan = _empty_plan()
        if bettor == "up":
            self._lams = up_candidates()
            self._log_prior = jeffreys_log_prior(self._lams)
        # per-threshold sums for orders other than first order
        self._z = self._initial_z
        self._sum_d = np.zeros(self._z.size)
        self._sum_d2 = np.zeros(self._z.size)
        self._up_rows = np.zeros((self._z.size, self._lams.size)) if bettor == "up" else None
        self._next_refresh = burn_in

    # -- helpers -----------------------------------------------------------
    def _admissible(self, z: np.ndarray) -> np.ndarray:
        return z[self.order.admissible(z)]

    @property
    def is_fsd(self) -> bool:
        return self.order.kind == "fsd"

    def _refresh_general(self, state: EmpiricalState) -> None:
        z = self._admissible(quantile_grid(state.pooled_sorted, self.K))
        D = payoff_matrix(self.order, z, state.xs, state.ys)
        self._z = z
        self._sum_d = D.sum(axis=1)
        self._sum_d2 = (D * D).sum(axis=1)
        if self.bettor == "up":
            self._up_rows = up_log_wealth_rows(self._lams, D)

    # -- the two halves of a round ----------------------------------------
    def plan(self, state: EmpiricalState) -> RoundPlan:
        """Thresholds, bets and weights for round ``state.count_t + 1``.

        Depends only on ``state`` (history through the previous round) and on
        internal sums built from that same history.
        """
        t_prev = state.count_t
        if self.is_fsd:
            if self.adaptive:
                z = update_thresholds(state, self.initial_grid, self.K, self.burn_in).thresholds
            else:
                z = self._initial_z
            if z.size == 0:
                return _empty_plan()
            n_p, n_q = state.counts(z)
            sum_d, sum_d2 = n_p - n_q, n_p + n_q
            if self.bettor == "gro":
                lam = plugin_lambda_vec(n_p, n_q, self.c_cap)
            elif self.bettor == "up":
                lam = posterior_mean(self._lams, self._log_prior + up_log_wealth_from_counts(self._lams, n_p, n_q))
            else:
                lam = np.full(z.size, self.constant_lambda)
        else:
            if self.adaptive and t_prev >= self._next_refresh:
                self._refresh_general(state)
                self._next_refresh = max(t_prev + 1, math.ceil(t_prev * self.refresh_ratio))
            z = self._z
            if z.size == 0:
                return _empty_plan()
            sum_d, sum_d2 = self._sum_d, self._sum_d2
            if self.bettor == "up":
                lam = posterior_mean(self._lams, self._log_prior + self._up_rows)
            else:
                lam = np.full(z.size, self.constant_lambda)
        w = weights_from_stats(self.scheme, t_prev, sum_d, sum_d2, lam)
        return RoundPlan(z, lam, w)

    def settle(self, plan: RoundPlan, x: float, y: float) -> float:
        """Apply the round's pair to a plan; returns the mixture e-value."""
        if plan.thresholds.size == 0:
            s = 1.0
        else:
            d = payoff_vec(self.order, plan.thresholds, x, y)
            s = float(plan.weights @ (1.0 + plan.bets * d))
            if not self.is_fsd:
                self._sum_d = self._sum_d + d
                self._sum_d2 = self._sum_d2 + d * d
                if self.bettor == "up":
                    self._up_rows = self._up_rows + np.log1p(np.outer(d, self._lams))
        self.ep = eprocess_step(self.ep, s)
        return s

    def step(self, state: EmpiricalState, x: float, y: float) -> float:
        """One round against a shared ``state`` that does not yet contain ``(x, y)``."""
        self.order.check_support(x, "x")
        self.order.check_support(y, "y")
        self.last_plan = self.plan(state)
        return self.settle(self.last_plan, x, y)

    def update(self, x: float, y: float) -> float:
        """One round using this test's own history."""
        pair = ObservationPair(float(x), float(y), self.state.count_t + 1)
        s = self.step(self.state, pair.x, pair.y)
        self.state = ingest(self.state, pair)
        return s

    # -- read-outs ------------------------------------------------------------
    @property
    def log_e_value(self) -> float:
        return self.ep.log_wealth

    @property
    def rejected(self) -> bool:
        return ville_reject(self.ep, self.level)

    @property
    def active_threshold_count(self) -> int:
        return int(self.last_plan.thresholds.size)


class SubExpTest:
    """Uniform average over a fixed grid of gamma-exponential mixture e-processes.

    Each threshold carries its own test supermartingale (a mixture over
    ``lambda``), so their average is again one; weights do not adapt.
    """

    def __init__(self, params: SubExpParams = SubExpParams(), k: int = 2,
                 thresholds: Sequence[float] = (-1.0, -0.5, 0.0, 0.5, 1.0),
                 alpha: AlphaLike = 0.05, keep_history: bool = False, name: str = "subexp"):
        if k not in (2, 3):
            raise ValueError(f"sub-exponential tests cover k in (2, 3), got {k}")
        self.params, self.k, self.name = params, k, name
        self.level = as_level(alpha)
        self.acc = SubExpAccumulator.start(thresholds)
        self.ep = EProcess.start([self.level], keep_history=keep_history)
        self.state = EmpiricalState()

    def step(self, state: EmpiricalState, x: float, y: float) -> float:
        prev = self.ep.log_wealth
        self.acc = self.acc.update(x, y, self.params, self.k)
        cur = self.acc.log_e_value(self.params)
        self.ep = eprocess_step(self.ep, math.exp(cur - prev))
        # keep the accumulator as the source of truth against rounding drift
        self.ep = _set_log_wealth(self.ep, cur)
        return math.exp(cur - prev)

    def update(self, x: float, y: float) -> float:
        pair = ObservationPair(float(x), float(y), self.state.count_t + 1)
        s = self.step(self.state, pair.x, pair.y)
        self.state = ingest(self.state, pair)
        return s

    @property
    def log_e_value(self) -> float:
        return self.ep.log_wealth

    @property
    def rejected(self) -> bool:
        return ville_reject(self.ep, self.level)

    @property
    def active_threshold_count(self) -> int:
        return int(self.acc.z.size)


def _set_log_wealth(ep: EProcess, value: float) -> EProcess:
    from dataclasses import replace

    if ep.history is not None:
        history = ep.history[:-1] + (value,)
    else:
        history = None
    return replace(ep, log_wealth=value, running_max=max(ep.running_max, value), history=history)


class BatchTest:
    """Unpaired batch rounds: two independent samples per round.

    Payoffs are ECDF differences ``F_x(z) - F_y(z)`` in ``[-1, 1]`` on a fixed
    grid.  The bet at a threshold is the predictable plug-in
    ``clip(sum d / sum |d|, 0, 1 - c)`` over past batches, the batch analogue
    of the first-order count ratio.
    """

    def __init__(self, grid: ThresholdGrid, weights: WeightScheme = WeightScheme("uniform"),
                 c_cap: float = DEFAULT_CAP, alpha: AlphaLike = 0.05, constant_lambda: Optional[float] = None):
        self.grid = grid
        self.scheme = weights
        self.c_cap = c_cap
        self.constant_lambda = constant_lambda
        self.level = as_level(alpha)
        n = len(grid)
        self._sum_d = np.zeros(n)
        self._sum_abs = np.zeros(n)
        self._sum_d2 = np.zeros(n)
        self.t = 0
        self.ep = EProcess.start([self.level])

    def bets(self) -> np.ndarray:
        if self.constant_lambda is not None:
            return np.full(len(self.grid), self.constant_lambda)
        with np.errstate(invalid="ignore", divide="ignore"):
            raw = np.where(self._sum_abs > 0, self._sum_d / np.where(self._sum_abs > 0, self._sum_abs, 1), 0.0)
        return np.clip(raw, 0.0, 1.0 - self.c_cap)

    def update(self, batch_x: Sequence[float], batch_y: Sequence[float]) -> float:
        bx = np.asarray(batch_x, dtype=float)
        by = np.asarray(batch_y, dtype=float)
        if bx.size == 0 or by.size == 0:
            raise ValueError("batches must be nonempty")
        if not (np.all(np.isfinite(bx)) and np.all(np.isfinite(by))):
            raise ValueError("non-finite values in batch")
        lam = self.bets()
        w = weights_from_stats(self.scheme, self.t, self._sum_d, self._sum_d2, lam)
        d = batch_payoff_vec(bx, by, self.grid.thresholds)
        s = float(w @ (1.0 + lam * d))
        self._sum_d += d
        self._sum_abs += np.abs(d)
        self._sum_d2 += d * d
        self.t += 1
        self.ep = eprocess_step(self.ep, s)
        return s

    @property
    def log_e_value(self) -> float:
        return self.ep.log_wealth

    @property
    def rejected(self) -> bool:
        return ville_reject(self.ep, self.level)

    @property
    def active_threshold_count(self) -> int:
        return len(self.grid)


def make_test(variant: str, order: OrderSpec = OrderSpec(), *, initial_grid: Optional[ThresholdGrid] = None,
              weights: Optional[str] = None, eta: float = 1.0, adaptive: Optional[bool] = None,
              K: int = DEFAULT_K, burn_in: int = DEFAULT_BURN_IN, c_cap: float = DEFAULT_CAP,
              constant_lambda: float = 0.1, refresh_ratio: float = DEFAULT_REFRESH_RATIO,
              alpha: AlphaLike = 0.05, subexp_params: Optional[SubExpParams] = None,
              keep_history: bool = False):
    """Build one of the named variants.

    ``adagro-{exp,hedge,linear}``: plug-in bets, adaptive grid, that weight scheme.
    ``gro``: plug-in bets, uniform weights, fixed grid.
    ``constant``: fixed bet, uniform weights, fixed grid.
    ``up``: universal-portfolio bets; ``weights`` (default exp) and ``adaptive``
    (default on) are free.
    ``subexp``: gamma-exponential mixtures for ``ksd`` with k in (2, 3).
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    if variant == "subexp":
        if order.kind != "ksd" or order.k not in (2, 3):
            raise ValueError("subexp requires a ksd order with k in (2, 3)")
        z = initial_grid.thresholds if initial_grid is not None else (-1.0, -0.5, 0.0, 0.5, 1.0)
        return SubExpTest(subexp_params or SubExpParams(), order.k, z, alpha, keep_history)
    common = dict(order=order, initial_grid=initial_grid, K=K, burn_in=burn_in, c_cap=c_cap,
                  constant_lambda=constant_lambda, refresh_ratio=refresh_ratio, alpha=alpha,
                  keep_history=keep_history, name=variant)
    if variant.startswith("adagro-"):
        kind = variant.split("-", 1)[1]
        if weights is not None and weights != kind:
            raise ValueError(f"variant {variant} fixes weights={kind}, got {weights}")
        return DominanceTest(bettor="gro", weights=WeightScheme(kind, eta),
                             adaptive=True if adaptive is None else adaptive, **common)
    if variant in ("gro", "constant"):
        return DominanceTest(bettor=variant, weights=WeightScheme(weights or "uniform", eta),
                             adaptive=False if adaptive is None else adaptive, **common)
    return DominanceTest(bettor="up", weights=WeightScheme(weights or "exp", eta),
                         adaptive=True if adaptive is None else adaptive, **common)

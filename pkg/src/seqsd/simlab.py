"""Simulation scenarios, replication runner and trajectory metrics.

Randomness: every replication gets its own child of
``numpy.random.SeedSequence(seed)`` (via ``spawn``) driving a
``numpy.random.Philox`` counter-based generator.  A (seed, replication index)
pair therefore reproduces the same stream regardless of how replications
are scheduled across processes.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence

import numpy as np

from .core import EmpiricalState, ObservationPair, as_level, ingest
from .weighting import ThresholdGrid, init_thresholds

SCENARIO_KINDS = ("anticorr-discrete", "bivariate-gaussian", "kinked-uniform", "finite-discrete")
COUPLINGS = ("independent", "comonotone", "antimonotone")


@dataclass(frozen=True)
class ScenarioSpec:
    """A data-generating process plus the grid the estimators start from.

    ``finite-discrete`` draws X and Y independently from probability vectors
    ``px`` and ``py`` on a shared ``support``.
    """

    kind: str
    horizon: int = 1000
    reps: int = 100
    seed: int = 0
    mu_x: float = 0.0
    sd_x: float = 1.0
    mu_y: float = 0.0
    sd_y: float = 1.0
    rho: float = 0.0
    z0: float = 0.0
    c0: float = 0.5
    coupling: str = "independent"
    support: tuple = ()
    px: tuple = ()
    py: tuple = ()
    grid_lo: float = 0.0
    grid_hi: float = 1.0
    grid_count: int = 21
    name: str = ""

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if self.horizon < 1 or self.reps < 1:
            raise ValueError("horizon and reps must be at least 1")
        if self.kind == "bivariate-gaussian":
            if not -1.0 <= self.rho <= 1.0:
                raise ValueError(f"rho must lie in [-1, 1], got {self.rho}")
            if not (self.sd_x > 0 and self.sd_y > 0):
                raise ValueError("standard deviations must be positive")
        if self.kind == "kinked-uniform":
            if not 0.0 <= self.z0 <= 1.0:
                raise ValueError(f"z0 must lie in [0, 1], got {self.z0}")
            if not 0.0 < self.c0 < 1.0:
                raise ValueError(f"c0 must lie in (0, 1), got {self.c0}")
            if self.coupling not in COUPLINGS:
                raise ValueError(f"unknown coupling {self.coupling!r}")
        if self.kind == "finite-discrete":
            if not (len(self.support) == len(self.px) == len(self.py) >= 2):
                raise ValueError("finite-discrete needs support, px, py of equal length >= 2")
            for p in (self.px, self.py):
                if min(p) < 0 or abs(sum(p) - 1.0) > 1e-9:
                    raise ValueError("px and py must be probability vectors")

    def initial_grid(self) -> ThresholdGrid:
        if self.kind == "anticorr-discrete":
            return init_thresholds("finite-support", support=(0.0, 1 / 3, 2 / 3, 1.0))
        if self.kind == "finite-discrete":
            return init_thresholds("finite-support", support=self.support)
        return init_thresholds("fixed-equidistant", lo=self.grid_lo, hi=self.grid_hi, count=self.grid_count)

    def replace(self, **changes) -> "ScenarioSpec":
        from dataclasses import replace

        return replace(self, **changes)


# presets -------------------------------------------------------------------


def anticorr(horizon: int = 5000, reps: int = 500, seed: int = 0) -> ScenarioSpec:
    return ScenarioSpec("anticorr-discrete", horizon, reps, seed, name="anticorr")


_GAUSS_CASES = {
    # (mu_y, sd_y, grid interval)
    1: (0.0, 1.0, (-1.5, 1.5)),
    2: (-0.25, 1.5, (-1.5, 1.5)),
    3: (0.25, 1.5, (0.0, 3.0)),
    4: (0.25, 1.5, (-3.0, 0.0)),
}


def gaussian_case(case: int, horizon: int = 2000, reps: int = 200, seed: int = 0) -> ScenarioSpec:
    """The four bivariate Gaussian cases: X ~ N(0, 1) with correlation -0.9."""
    if case not in _GAUSS_CASES:
        raise ValueError(f"Gaussian case must be one of {sorted(_GAUSS_CASES)}")
    mu_y, sd_y, (lo, hi) = _GAUSS_CASES[case]
    return ScenarioSpec("bivariate-gaussian", horizon, reps, seed, mu_x=0.0, sd_x=1.0, mu_y=mu_y,
                        sd_y=sd_y, rho=-0.9, grid_lo=lo, grid_hi=hi, name=f"gauss{case}")


def kinked(z0: float, c0: float = 0.5, horizon: int = 2000, reps: int = 200, seed: int = 0,
           coupling: str = "independent") -> ScenarioSpec:
    return ScenarioSpec("kinked-uniform", horizon, reps, seed, z0=z0, c0=c0, coupling=coupling,
                        name=f"kink{z0:g}")


# sampling ------------------------------------------------------------------


def make_rng(seed_seq: np.random.SeedSequence) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed_seq))


def replication_rngs(seed: int, reps: int) -> List[np.random.Generator]:
    return [make_rng(s) for s in np.random.SeedSequence(seed).spawn(reps)]


def kinked_cdf(z, z0: float, c0: float):
    z = np.asarray(z, dtype=float)
    inner = c0 * z + (1.0 - c0) * z0
    return np.where(z < 0, 0.0, np.where(z <= z0, inner, np.minimum(z, 1.0)))


def kinked_quantile(u, z0: float, c0: float):
    u = np.asarray(u, dtype=float)
    mass = (1.0 - c0) * z0
    return np.where(u <= mass, 0.0, np.where(u <= z0, (u - mass) / c0, u))


def sample_stream(spec: ScenarioSpec, rng: np.random.Generator, n: Optional[int] = None):
    """Draw ``n`` (default: horizon) pairs as two arrays."""
    n = spec.horizon if n is None else n
    if spec.kind == "anticorr-discrete":
        first = rng.random(n) < 0.5
        return np.where(first, 0.0, 2 / 3), np.where(first, 1.0, 1 / 3)
    if spec.kind == "bivariate-gaussian":
        e = rng.standard_normal((2, n))
        x = spec.mu_x + spec.sd_x * e[0]
        y = spec.mu_y + spec.sd_y * (spec.rho * e[0] + math.sqrt(1.0 - spec.rho ** 2) * e[1])
        return x, y
    if spec.kind == "kinked-uniform":
        u = rng.random(n)
        if spec.coupling == "independent":
            v = rng.random(n)
        elif spec.coupling == "comonotone":
            v = u
        else:
            v = 1.0 - u
        return kinked_quantile(u, spec.z0, spec.c0), v
    sup = np.asarray(spec.support, dtype=float)
    return sup[rng.choice(sup.size, n, p=spec.px)], sup[rng.choice(sup.size, n, p=spec.py)]


def sample_pair(spec: ScenarioSpec, rng: np.random.Generator, t: int = 1) -> ObservationPair:
    x, y = sample_stream(spec, rng, 1)
    return ObservationPair(float(x[0]), float(y[0]), t)


# running -------------------------------------------------------------------


@dataclass
class ReplicationResult:
    log_wealth: Dict[str, np.ndarray]
    rejection_time: Dict[str, Optional[int]]


def run_replication(xs: np.ndarray, ys: np.ndarray, factories: Mapping[str, Callable[[], object]],
                    alpha: float = 0.05, stop_when_all_rejected: bool = False) -> ReplicationResult:
    """Run several tests on one stream, sharing the empirical state.

    Every test plans its round from the history through the previous round
    before the new pair is ingested.  With ``stop_when_all_rejected`` the run
    ends once every test has rejected; the remaining trace entries are NaN.
    """
    thr = as_level(alpha).log_threshold
    tests = {name: f() for name, f in factories.items()}
    T = len(xs)
    traces = {name: np.full(T, np.nan) for name in tests}
    rej: Dict[str, Optional[int]] = {name: None for name in tests}
    state = EmpiricalState()
    for i in range(T):
        x, y = float(xs[i]), float(ys[i])
        for name, test in tests.items():
            test.step(state, x, y)
            lw = test.log_e_value
            traces[name][i] = lw
            if rej[name] is None and lw >= thr:
                rej[name] = i + 1
        if stop_when_all_rejected and all(r is not None for r in rej.values()):
            break
        state = ingest(state, ObservationPair(x, y, i + 1))
    return ReplicationResult(traces, rej)


def _one(args):
    spec, factories, alpha, stop, ss = args
    xs, ys = sample_stream(spec, make_rng(ss))
    return run_replication(xs, ys, factories, alpha, stop)


def run_scenario(spec: ScenarioSpec, factories: Mapping[str, Callable[[], object]], alpha: float = 0.05,
                 stop_when_all_rejected: bool = False, workers: int = 1) -> List[ReplicationResult]:
    """All replications of a scenario; results are ordered by replication index.

    ``factories`` must be picklable (e.g. ``functools.partial`` objects) when
    ``workers > 1``.
    """
    seeds = np.random.SeedSequence(spec.seed).spawn(spec.reps)
    jobs = [(spec, factories, alpha, stop_when_all_rejected, s) for s in seeds]
    if workers <= 1:
        return [_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_one, jobs))


# metrics -------------------------------------------------------------------


@dataclass
class TrajectoryMetrics:
    e_power: np.ndarray
    ville_error: np.ndarray
    rejection_times: List[Optional[int]] = field(default_factory=list)

    @property
    def horizon(self) -> int:
        return self.e_power.size


def aggregate_metrics(traces: Sequence[np.ndarray], alpha: float = 0.05) -> TrajectoryMetrics:
    """Ville error and e-power from log-wealth traces (one row per replication).

    NaN entries (runs stopped after rejecting) count as rejected for the Ville
    error and are skipped in the e-power mean.
    """
    if len(traces) == 0:
        raise ValueError("need at least one trace")
    L = np.vstack([np.asarray(t, dtype=float) for t in traces])
    thr = as_level(alpha).log_threshold
    crossed = np.maximum.accumulate(np.where(np.isnan(L), np.inf, L), axis=1) >= thr
    ville = crossed.mean(axis=0)
    if np.isnan(L).any():
        # columns where every run has stopped stay NaN
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            e_power = np.nanmean(L, axis=0)
    else:
        e_power = L.mean(axis=0)
    times = [int(np.argmax(row)) + 1 if row.any() else None for row in crossed]
    return TrajectoryMetrics(e_power, ville, times)


def metrics_by_variant(results: Sequence[ReplicationResult], alpha: float = 0.05) -> Dict[str, TrajectoryMetrics]:
    names = list(results[0].log_wealth)
    out = {}
    for name in names:
        m = aggregate_metrics([r.log_wealth[name] for r in results], alpha)
        m.rejection_times = [r.rejection_time[name] for r in results]
        out[name] = m
    return out


def write_metrics_csv(path: str, metrics: Mapping[str, TrajectoryMetrics]) -> None:
    """Long format: one row per (variant, t)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "t", "ville_error", "e_power"])
        for name, m in metrics.items():
            for i in range(m.horizon):
                w.writerow([name, i + 1, repr(float(m.ville_error[i])), repr(float(m.e_power[i]))])


def write_rejections_jsonl(path: str, metrics: Mapping[str, TrajectoryMetrics]) -> None:
    with open(path, "w") as fh:
        for name, m in metrics.items():
            for rep, t in enumerate(m.rejection_times):
                fh.write(json.dumps({"variant": name, "replication": rep, "rejection_time": t}) + "\n")


def read_metrics_csv(path: str) -> Dict[str, TrajectoryMetrics]:
    cols = {"variant", "t", "ville_error", "e_power"}
    rows: Dict[str, list] = {}
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        if r.fieldnames is None or set(r.fieldnames) != cols:
            raise ValueError(f"{path}: expected columns {sorted(cols)}, got {r.fieldnames}")
        for row in r:
            rows.setdefault(row["variant"], []).append(
                (int(row["t"]), float(row["ville_error"]), float(row["e_power"])))
    if not rows:
        raise ValueError(f"{path}: no metric rows")
    out = {}
    for name, vals in rows.items():
        vals.sort()
        out[name] = TrajectoryMetrics(np.array([v[2] for v in vals]), np.array([v[1] for v in vals]))
    return out


def read_rejections_jsonl(path: str) -> Dict[str, List[Optional[int]]]:
    out: Dict[str, List[Optional[int]]] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            if not {"variant", "replication", "rejection_time"} <= rec.keys():
                raise ValueError(f"{path}:{lineno}: missing rejection-record fields")
            out.setdefault(rec["variant"], []).append(rec["rejection_time"])
    return out

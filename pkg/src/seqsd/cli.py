"""Command-line front end: ``seqsd run``, ``seqsd simulate`` and ``seqsd report``.

Exit codes: 0 finished without rejecting, 10 rejected, 2 configuration
error, 3 data error.
"""

from __future__ import annotations

import argparse
import csv
import functools
import json
import math
import os
import sys
from typing import Any, Dict, Iterator, List, Optional, Sequence, TextIO

import numpy as np

from . import simlab
from .core import SignificanceLevel
from .engine import FSD_VARIANTS, VARIANTS, BatchTest, make_test
from .orders import LAPLACE_DEFAULT_GRID, OrderSpec, SupportViolation
from .subexp import SubExpParams
from .weighting import WEIGHT_KINDS, ThresholdGrid, WeightScheme, init_thresholds

EXIT_OK, EXIT_REJECTED, EXIT_CONFIG, EXIT_DATA = 0, 10, 2, 3


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


# ---------------------------------------------------------------------------
# parsing helpers


def parse_order(text: str) -> OrderSpec:
    parts = text.strip().split(":")
    kind = parts[0]
    try:
        if kind == "fsd" and len(parts) == 1:
            return OrderSpec.fsd()
        if kind == "ksd" and len(parts) == 3:
            return OrderSpec.ksd(int(parts[1]), float(parts[2]))
        if kind == "icx" and len(parts) == 2:
            return OrderSpec.icx(float(parts[1]))
        if kind == "laplace" and len(parts) <= 2:
            grid = [float(r) for r in parts[1].split(",")] if len(parts) == 2 else LAPLACE_DEFAULT_GRID
            return OrderSpec.laplace(grid)
    except ValueError as exc:
        raise ConfigError(f"bad --order {text!r}: {exc}") from exc
    raise ConfigError(f"bad --order {text!r}; expected fsd, ksd:K:A, icx:B or laplace[:r1,r2,...]")


def parse_scenario(text: str, horizon: int, reps: int, seed: int, coupling: str = "independent"):
    parts = text.split(":")
    try:
        if parts[0] == "anticorr" and len(parts) == 1:
            return simlab.anticorr(horizon, reps, seed)
        if parts[0] == "gauss" and len(parts) == 2:
            return simlab.gaussian_case(int(parts[1]), horizon, reps, seed)
        if parts[0] == "kink" and len(parts) in (2, 3):
            c0 = float(parts[2]) if len(parts) == 3 else 0.5
            return simlab.kinked(float(parts[1]), c0, horizon, reps, seed, coupling)
    except ValueError as exc:
        raise ConfigError(f"bad --scenario {text!r}: {exc}") from exc
    raise ConfigError(f"bad --scenario {text!r}; expected anticorr, gauss:N or kink:Z0[:C0]")


def _floats(text) -> List[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).split(",") if v.strip()]


# keys shared by the JSON config file and the command line
RUN_DEFAULTS: Dict[str, Any] = {
    "order": "fsd", "variant": "adagro-exp", "weights": None, "alpha": 0.05, "eta": 1.0,
    "burn_in": 50, "grid_k": 100, "cap_c": 0.01, "seed": 0, "input": "-", "output": "-",
    "grid_lo": 0.0, "grid_hi": 1.0, "grid_count": 21, "support": None, "lambda": 0.1,
    "adaptive": None, "refresh_ratio": 2.0, "nu": 1.0, "scale_c": 1.0, "rho": None,
    "batch_x": None, "batch_y": None,
}
SIM_DEFAULTS: Dict[str, Any] = {
    "scenario": "anticorr", "order": "fsd", "variants": None, "reps": 100, "horizon": 1000,
    "seed": 0, "alpha": 0.05, "coupling": "independent", "output": "seqsd_sim", "workers": 1,
    "eta": 1.0, "burn_in": 50, "grid_k": 100, "cap_c": 0.01, "lambda": 0.1,
    "refresh_ratio": 2.0, "nu": 1.0, "scale_c": 1.0, "rho": None, "weights": None,
}


def merge_config(defaults: Dict[str, Any], config_path: Optional[str], flags: Dict[str, Any]) -> Dict[str, Any]:
    """defaults < config file < explicit flags."""
    cfg = dict(defaults)
    if config_path:
        try:
            with open(config_path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {config_path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(data) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(data)
    cfg.update({k: v for k, v in flags.items() if v is not None and k in defaults})
    return cfg


def _grid(cfg) -> ThresholdGrid:
    if cfg.get("support"):
        return init_thresholds("finite-support", support=_floats(cfg["support"]))
    return init_thresholds("fixed-equidistant", lo=float(cfg["grid_lo"]), hi=float(cfg["grid_hi"]),
                           count=int(cfg["grid_count"]))


def _subexp_params(cfg) -> SubExpParams:
    return SubExpParams(float(cfg["nu"]), float(cfg["scale_c"]), None if cfg["rho"] is None else float(cfg["rho"]))


def build_test(cfg: Dict[str, Any]):
    """Validate a run configuration and build the test; raises ConfigError."""
    try:
        SignificanceLevel(float(cfg["alpha"]))
        order = parse_order(cfg["order"]) if isinstance(cfg["order"], str) else cfg["order"]
        variant = cfg["variant"]
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant {variant!r}; choose from {VARIANTS}")
        if cfg["weights"] is not None and cfg["weights"] not in WEIGHT_KINDS:
            raise ConfigError(f"unknown weights {cfg['weights']!r}; choose from {WEIGHT_KINDS}")
        return make_test(
            variant, order, initial_grid=_grid(cfg), weights=cfg["weights"], eta=float(cfg["eta"]),
            adaptive=cfg["adaptive"], K=int(cfg["grid_k"]), burn_in=int(cfg["burn_in"]),
            c_cap=float(cfg["cap_c"]), constant_lambda=float(cfg["lambda"]),
            refresh_ratio=float(cfg["refresh_ratio"]), alpha=float(cfg["alpha"]),
            subexp_params=_subexp_params(cfg))
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def read_pairs(fh: TextIO, name: str) -> Iterator[tuple]:
    """Yield ``(line_number, x, y)`` from a CSV with header ``x,y``."""
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise DataError(f"{name}: empty input, expected header x,y")
    if [h.strip().lower() for h in header] != ["x", "y"]:
        raise DataError(f"{name}:1: expected header x,y, got {','.join(header)}")
    for row in reader:
        lineno = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise DataError(f"{name}:{lineno}: expected 2 columns, got {len(row)}")
        try:
            x, y = float(row[0]), float(row[1])
        except ValueError:
            raise DataError(f"{name}:{lineno}: non-numeric value in {row}")
        if not (math.isfinite(x) and math.isfinite(y)):
            raise DataError(f"{name}:{lineno}: non-finite value in {row}")
        yield lineno, x, y


def read_batches(path: str) -> List[np.ndarray]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                vals = np.array([float(v) for v in line.split(",") if v.strip()])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric value")
            if vals.size == 0 or not np.all(np.isfinite(vals)):
                raise DataError(f"{path}:{lineno}: empty or non-finite batch")
            out.append(vals)
    return out


def _open_out(path: str):
    return sys.stdout if path == "-" else open(path, "w")


def _record(t, test) -> str:
    return json.dumps({"t": t, "log_e_value": test.log_e_value, "rejected": bool(test.rejected),
                       "active_threshold_count": test.active_threshold_count})


# ---------------------------------------------------------------------------
# commands


def cmd_run(cfg: Dict[str, Any]) -> int:
    if (cfg["batch_x"] is None) != (cfg["batch_y"] is None):
        raise ConfigError("batch mode needs both --batch-x and --batch-y")
    if cfg["batch_x"] is not None:
        return _run_batch(cfg)
    test = build_test(cfg)
    order = test.order if hasattr(test, "order") else None
    src = cfg["input"]
    try:
        fh = sys.stdin if src == "-" else open(src, newline="")
    except OSError as exc:
        raise DataError(f"cannot read input {src}: {exc}") from exc
    try:
        out = _open_out(cfg["output"])
    except OSError as exc:
        raise ConfigError(f"cannot write output {cfg['output']}: {exc}") from exc
    t = 0
    try:
        for lineno, x, y in read_pairs(fh, src):
            if order is not None:
                try:
                    order.check_support(x, "x")
                    order.check_support(y, "y")
                except SupportViolation as exc:
                    raise DataError(f"{src}:{lineno}: {exc}") from exc
            test.update(x, y)
            t += 1
            out.write(_record(t, test) + "\n")
        out.flush()
    finally:
        if fh is not sys.stdin:
            fh.close()
        if out is not sys.stdout:
            out.close()
    return EXIT_REJECTED if test.rejected else EXIT_OK


def _run_batch(cfg) -> int:
    try:
        SignificanceLevel(float(cfg["alpha"]))
        scheme = WeightScheme(cfg["weights"] or "uniform", float(cfg["eta"]))
        lam = float(cfg["lambda"]) if cfg["variant"] == "constant" else None
        test = BatchTest(_grid(cfg), scheme, float(cfg["cap_c"]), float(cfg["alpha"]), lam)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    try:
        bx, by = read_batches(cfg["batch_x"]), read_batches(cfg["batch_y"])
    except OSError as exc:
        raise DataError(str(exc)) from exc
    if len(bx) != len(by):
        raise DataError(f"batch files hold {len(bx)} and {len(by)} batches")
    out = _open_out(cfg["output"])
    try:
        for t, (x, y) in enumerate(zip(bx, by), 1):
            test.update(x, y)
            out.write(_record(t, test) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_REJECTED if test.rejected else EXIT_OK


def sim_factories(cfg, spec) -> Dict[str, Any]:
    order = parse_order(cfg["order"])
    variants = cfg["variants"]
    if variants is None:
        variants = list(FSD_VARIANTS) if order.kind == "fsd" else ["up"]
    elif isinstance(variants, str):
        variants = [v.strip() for v in variants.split(",") if v.strip()]
    grid = spec.initial_grid()
    out = {}
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown variant {v!r}")
        kw = dict(initial_grid=grid, weights=cfg["weights"] if v in ("up", "gro", "constant") else None,
                  eta=float(cfg["eta"]), K=int(cfg["grid_k"]), burn_in=int(cfg["burn_in"]),
                  c_cap=float(cfg["cap_c"]), constant_lambda=float(cfg["lambda"]),
                  refresh_ratio=float(cfg["refresh_ratio"]), alpha=float(cfg["alpha"]),
                  subexp_params=_subexp_params(cfg))
        try:
            make_test(v, order, **kw)  # validate eagerly
        except ValueError as exc:
            raise ConfigError(f"variant {v}: {exc}") from exc
        out[v] = functools.partial(make_test, v, order, **kw)
    return out


def cmd_simulate(cfg: Dict[str, Any]) -> int:
    if int(cfg["reps"]) < 1 or int(cfg["horizon"]) < 1:
        raise ConfigError("--reps and --horizon must be at least 1")
    try:
        SignificanceLevel(float(cfg["alpha"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    spec = parse_scenario(cfg["scenario"], int(cfg["horizon"]), int(cfg["reps"]), int(cfg["seed"]),
                          cfg["coupling"])
    factories = sim_factories(cfg, spec)
    prefix = cfg["output"]
    csv_path, jsonl_path = prefix + "_metrics.csv", prefix + "_rejections.jsonl"
    for p in (csv_path, jsonl_path):
        try:
            with open(p, "a"):
                pass
        except OSError as exc:
            raise ConfigError(f"cannot write {p}: {exc}") from exc
    results = simlab.run_scenario(spec, factories, float(cfg["alpha"]), workers=int(cfg["workers"]))
    metrics = simlab.metrics_by_variant(results, float(cfg["alpha"]))
    simlab.write_metrics_csv(csv_path, metrics)
    simlab.write_rejections_jsonl(jsonl_path, metrics)
    print(f"scenario {spec.name}: {spec.reps} replications, horizon {spec.horizon}")
    print(f"{'variant':<15}{'max ville':>10}{'final e-power':>15}{'rejected':>10}")
    for name, m in metrics.items():
        rej = sum(t is not None for t in m.rejection_times)
        print(f"{name:<15}{m.ville_error.max():>10.3f}{m.e_power[-1]:>15.3f}{rej:>10d}")
    print(f"wrote {csv_path} and {jsonl_path}")
    return EXIT_OK


def cmd_report(metrics_path: str, rejections_path: Optional[str], alpha: float,
               checkpoints: Sequence[int] = (100, 500, 1000, 2000, 5000)) -> int:
    try:
        SignificanceLevel(alpha)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    try:
        metrics = simlab.read_metrics_csv(metrics_path)
        rejections = simlab.read_rejections_jsonl(rejections_path) if rejections_path else {}
    except OSError as exc:
        raise DataError(str(exc)) from exc
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise DataError(f"schema mismatch: {exc}") from exc
    for name, m in metrics.items():
        mv = float(m.ville_error.max())
        verdict = "within" if mv <= alpha else "exceeds"
        print(f"[{name}] max Ville error {mv:.4f} ({verdict} alpha={alpha:g})")
        cps = [c for c in checkpoints if c <= m.horizon] or [m.horizon]
        print("  e-power " + ", ".join(f"t={c}: {m.e_power[c - 1]:.3f}" for c in cps))
        times = [t for t in rejections.get(name, []) if t is not None]
        if name in rejections:
            n = len(rejections[name])
            if times:
                print(f"  rejections {len(times)}/{n}; mean time {np.mean(times):.1f}, median {np.median(times):.1f}")
            else:
                print(f"  rejections 0/{n}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argparse


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with the same keys as the flags (flags win)")
    p.add_argument("--order", help="fsd | ksd:K:A | icx:B | laplace[:r1,r2,...]")
    p.add_argument("--weights", help=f"one of {', '.join(WEIGHT_KINDS)}")
    p.add_argument("--alpha", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--burn-in", dest="burn_in", type=int)
    p.add_argument("--grid-k", dest="grid_k", type=int)
    p.add_argument("--cap-c", dest="cap_c", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--lambda", dest="lambda", type=float, help="bet of the constant variant")
    p.add_argument("--refresh-ratio", dest="refresh_ratio", type=float)
    p.add_argument("--nu", type=float, help="sub-exponential variance proxy")
    p.add_argument("--scale-c", dest="scale_c", type=float, help="sub-exponential scale")
    p.add_argument("--rho", type=float, help="gamma mixture parameter")
    p.add_argument("--output")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seqsd", description="Anytime-valid sequential tests of stochastic dominance.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="stream pairs from CSV and emit one JSONL record per round")
    _add_common(run)
    run.add_argument("--variant", help=f"one of {', '.join(VARIANTS)}")
    run.add_argument("--input", help="CSV with header x,y ('-' for stdin)")
    run.add_argument("--grid-lo", dest="grid_lo", type=float)
    run.add_argument("--grid-hi", dest="grid_hi", type=float)
    run.add_argument("--grid-count", dest="grid_count", type=int)
    run.add_argument("--support", help="comma-separated finite support; fixes the threshold grid")
    run.add_argument("--adaptive", dest="adaptive", action="store_true", default=None)
    run.add_argument("--no-adaptive", dest="adaptive", action="store_false")
    run.add_argument("--batch-x", dest="batch_x", help="unpaired mode: one X batch per line")
    run.add_argument("--batch-y", dest="batch_y", help="unpaired mode: one Y batch per line")

    sim = sub.add_parser("simulate", help="replicate a simulation scenario and write metrics")
    _add_common(sim)
    sim.add_argument("--scenario", help="anticorr | gauss:N | kink:Z0[:C0]")
    sim.add_argument("--variants", help="comma-separated variant list")
    sim.add_argument("--reps", type=int)
    sim.add_argument("--horizon", type=int)
    sim.add_argument("--coupling", choices=simlab.COUPLINGS)
    sim.add_argument("--workers", type=int)

    rep = sub.add_parser("report", help="summarize files written by simulate")
    rep.add_argument("metrics", help="*_metrics.csv from simulate")
    rep.add_argument("--rejections", help="*_rejections.jsonl from simulate")
    rep.add_argument("--alpha", type=float, default=0.05)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    flags = vars(args)
    try:
        if args.command == "run":
            return cmd_run(merge_config(RUN_DEFAULTS, args.config, flags))
        if args.command == "simulate":
            return cmd_simulate(merge_config(SIM_DEFAULTS, args.config, flags))
        return cmd_report(args.metrics, args.rejections, args.alpha)
    except ConfigError as exc:
        print(f"seqsd: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"seqsd: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

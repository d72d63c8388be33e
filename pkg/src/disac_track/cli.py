"""Command-line entry point ``disac-track``.

Subcommands:

* ``simulate``  generate a synthetic scenario and save it as a trace directory
* ``track``     run one tracker and write estimates, active APs and metrics
* ``compare``   run several configs on one scenario realization
* ``validate``  lint a config (and its trace, if it names one)

All CSV numbers are written with 17 significant digits, so reruns with the
same config and seed produce identical bytes.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .measurement import MeasurementError
from .metrics import RunResult, active_ap_stats, error_cdf, rms_trajectory_error, summarize
from .phd import GaussianMixture
from .pipeline import run_tracker
from .scenario import (
    Deployment,
    StepMeasurements,
    TraceError,
    Trajectory,
    UEInit,
    deployment_of,
    fmt,
    generate_scenario,
    load_trace,
    save_trace,
)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 2


@dataclass
class Realization:
    deployment: Deployment
    steps: list[StepMeasurements]
    ue_inits: list[UEInit]
    truth: list[Trajectory] | None


def check_deployment(cfg: RunConfig, deployment: Deployment) -> None:
    """Cross-checks between the tracker settings and the AP deployment."""
    pol = cfg.tracker.policy
    known = {ap.id for ap in deployment.aps}
    if pol is not None and pol.kind == "fixed_subset" and not pol.fixed_ids <= known:
        missing = sorted(pol.fixed_ids - known)
        raise ConfigError("tracker.fixed_ids", f"unknown AP ids {missing}")


def realize(cfg: RunConfig) -> Realization:
    """Generate (or load) the measurements a config describes."""
    if cfg.scenario is not None:
        check_deployment(cfg, deployment_of(cfg.scenario))
        trajs, steps = generate_scenario(cfg.scenario)
        ue_inits = cfg.ue_inits or list(cfg.scenario.ue_inits)
        return Realization(deployment_of(cfg.scenario), steps, ue_inits, trajs)
    trace = load_trace(cfg.trace)
    check_deployment(cfg, trace.deployment)
    ue_inits = cfg.ue_inits
    if ue_inits is None:
        if trace.truth is None:
            raise ConfigError("ue", "trace has no truth.csv; declare initial UE states with [[ue]]")
        # start each track at its first true position, at rest
        ue_inits = [UEInit(t.ue_id, t.positions[0], np.zeros(3)) for t in trace.truth]
    truth = trace.truth
    if truth is not None and any(len(t) != len(trace.steps) for t in truth):
        raise TraceError("truth.csv: step count differs from measurements.csv")
    return Realization(trace.deployment, trace.steps, ue_inits, truth)


# --- writers -----------------------------------------------------------------


def _writer(path: Path):
    fh = open(path, "w", newline="")
    return fh, csv.writer(fh, lineterminator="\n")


def write_estimates(path: Path, result: RunResult) -> None:
    fh, w = _writer(path)
    with fh:
        w.writerow(["time_step", "ue_id", "x", "y", "z", "weight"])
        for t, (ests, ws, ids) in enumerate(zip(result.estimates, result.weights, result.ue_ids)):
            for e, wt, u in zip(ests, ws, ids):
                p = e.position
                w.writerow([t, u, fmt(p[0]), fmt(p[1]), fmt(p[2]), fmt(wt)])


def write_active(path: Path, result: RunResult) -> None:
    fh, w = _writer(path)
    with fh:
        w.writerow(["time_step", "ap_ids", "count"])
        for t, a in enumerate(result.active):
            w.writerow([t, ",".join(str(i) for i in a.sorted_ids), len(a)])


def write_errors(path: Path, result: RunResult) -> None:
    rep = rms_trajectory_error(result)
    counts, _ = active_ap_stats(result)
    fh, w = _writer(path)
    with fh:
        w.writerow(["time_step", "error_m", "active_count"])
        for t, (e, n) in enumerate(zip(rep.errors, counts)):
            w.writerow([t, fmt(e) if np.isfinite(e) else "nan", int(n)])


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


def _clean(x):
    # JSON has no NaN; missing metrics are null
    if isinstance(x, float) and not np.isfinite(x):
        return None
    return x


def mixture_line(v: GaussianMixture) -> str:
    return json.dumps(
        {"time_step": v.time_step, "weights": v.weights.tolist(), "means": v.means.tolist(), "covs": v.covs.tolist()},
        sort_keys=True,
    )


def run(cfg: RunConfig, out: Path | None = None, timing: bool = False, diag_mixtures: bool = False,
        realization: Realization | None = None) -> RunResult:
    """Run one config end to end and, when ``out`` is given, write its artifacts."""
    real = realization if realization is not None else realize(cfg)
    sink = None
    mix_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        if diag_mixtures:
            mix_fh = open(out / "mixtures.jsonl", "w")

            def sink(v: GaussianMixture) -> None:
                mix_fh.write(mixture_line(v) + "\n")

    try:
        result = run_tracker(real.deployment, real.steps, real.ue_inits, cfg.tracker, real.truth, sink, timing)
    finally:
        if mix_fh is not None:
            mix_fh.close()
    if out is not None:
        write_estimates(out / "estimates.csv", result)
        write_active(out / "active_aps.csv", result)
        metrics = {k: _clean(v) for k, v in summarize(result).items()}
        metrics["tracker"] = cfg.tracker.kind
        metrics["policy"] = "none" if cfg.tracker.policy is None else cfg.tracker.policy.kind
        metrics["steps"] = len(result.estimates)
        metrics["fallback_steps"] = result.diagnostics["fallback_steps"]
        metrics["clamped_measurements"] = result.diagnostics["clamped_measurements"]
        write_json(out / "metrics.json", metrics)
        if result.truth is not None:
            write_errors(out / "errors.csv", result)
        if timing:
            fh, w = _writer(out / "timing.csv")
            with fh:
                w.writerow(["time_step", "seconds"])
                for t, s in enumerate(result.diagnostics["step_seconds"]):
                    w.writerow([t, fmt(s)])
    return result


def compare(cfgs: Sequence[RunConfig], out: Path | None = None, timing: bool = False) -> dict:
    """Run every config on the scenario realization of the first one.

    Deltas are each run's metrics minus the first run's.
    """
    if not cfgs:
        raise ConfigError("config", "compare needs at least one config")
    seeds = {c.seed for c in cfgs}
    if len(seeds) > 1:
        raise ConfigError("seed", f"compared configs must share one seed, got {sorted(seeds)}")
    names = [c.name for c in cfgs]
    if len(set(names)) != len(names):
        names = [f"{i}_{n}" for i, n in enumerate(names)]
    real = realize(cfgs[0])
    runs, cdfs = [], []
    for name, cfg in zip(names, cfgs):
        sub = None if out is None else out / name
        res = run(cfg, sub, timing, False, real)
        m = {k: _clean(v) for k, v in summarize(res).items()}
        runs.append({"name": name, "tracker": cfg.tracker.kind, "metrics": m})
        if res.truth is not None:
            errs = rms_trajectory_error(res).errors
            if np.isfinite(errs).any():
                cdfs.append((name, error_cdf(errs)))
    base = runs[0]["metrics"]
    deltas = {}
    for r in runs:
        deltas[r["name"]] = {
            k: (None if v is None or base[k] is None else v - base[k]) for k, v in r["metrics"].items()
        }
    report = {"seed": cfgs[0].seed, "baseline": runs[0]["name"], "runs": runs, "deltas": deltas}
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "comparison.json", report)
        fh, w = _writer(out / "cdf.csv")
        with fh:
            w.writerow(["run", "error_m", "fraction"])
            for name, cdf in cdfs:
                for value, frac in cdf:
                    w.writerow([name, fmt(value), fmt(frac)])
    return report


# --- argument handling -------------------------------------------------------


def _load(path: str, seed: int | None) -> RunConfig:
    cfg = load_config(path)
    return cfg.with_seed(seed) if seed is not None else cfg


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="disac-track", description="GM-PHD UE tracking with FoV-aware AP management")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, multi=False):
        if multi:
            sp.add_argument("--config", action="append", required=True, help="run config (repeat for each run)")
        else:
            sp.add_argument("--config", required=True, help="run config (.toml or .json)")
        sp.add_argument("--seed", type=_seed, help="override the config seed")

    sp = sub.add_parser("simulate", help="generate a scenario and save it as a trace")
    common(sp)
    sp.add_argument("--out", required=True, help="trace directory to write")

    sp = sub.add_parser("track", help="run a tracker and write its outputs")
    common(sp)
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--timing", action="store_true", help="write per-step wall-clock times to timing.csv")
    sp.add_argument("--diag-mixtures", action="store_true", help="dump every posterior mixture to mixtures.jsonl")

    sp = sub.add_parser("compare", help="run several configs on one scenario realization")
    common(sp, multi=True)
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--timing", action="store_true", help="write per-step wall-clock times for each run")

    sp = sub.add_parser("validate", help="check a config and its trace")
    common(sp)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "simulate":
            cfg = _load(args.config, args.seed)
            if cfg.scenario is None:
                raise ConfigError("scenario", "simulate needs an inline scenario, not a trace")
            trajs, steps = generate_scenario(cfg.scenario)
            save_trace(args.out, deployment_of(cfg.scenario), steps, trajs)
            log.info("wrote %d steps to %s", len(steps), args.out)
        elif args.command == "track":
            cfg = _load(args.config, args.seed)
            res = run(cfg, Path(args.out), args.timing, args.diag_mixtures)
            log.info("mean active APs %.3f", active_ap_stats(res)[1])
        elif args.command == "compare":
            cfgs = [_load(c, args.seed) for c in args.config]
            compare(cfgs, Path(args.out), args.timing)
        else:
            cfg = _load(args.config, args.seed)
            if cfg.trace is not None:
                realize(cfg)
            else:
                check_deployment(cfg, deployment_of(cfg.scenario))
            print(f"{args.config}: ok")
    except (ConfigError, TraceError, MeasurementError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

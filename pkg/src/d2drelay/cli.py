"""Command-line experiment runner.

Subcommands: ``run`` (single arrival rate), ``sweep`` (several rates, both
policy modes), ``capacity`` (bisect the largest stabilizable symmetric
rate), and ``region`` (stability-region sweep of an explicit instance).
Every experiment writes CSV artifacts, the fully resolved configuration,
and a self-contained matplotlib plot script into the output directory.

Set the environment variable ``D2DRELAY_WORKERS`` to parallelize runs
across seeds and probes.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentSpec, default_spec, format_config, parse_config
from .policy import MODE_NO_RELAY, MODE_RELAY
from .sim import (
    classify_stability,
    config_with,
    run_seeds,
    search_capacity,
    write_trace_csv,
)
from .stability import load_instance, region_sweep

SUMMARY_HEADER = [
    "mode",
    "arrival_rate",
    "seed",
    "verdict",
    "slope",
    "ci_halfwidth",
    "final_backlog",
    "mean_backlog",
]


def _trace_name(mode: str, rate: float, seed: int) -> str:
    return f"trace_{mode}_lam{rate:g}_seed{seed}.csv"


def _write_summary(rows: list[dict], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_HEADER)
        writer.writeheader()
        writer.writerows(rows)


def _verdict_text(mode: str, rate: float, verdicts, seeds) -> str:
    lines = [
        f"mode: {mode}",
        f"arrival_rate: {rate:g}",
        f"seeds: {', '.join(str(s) for s in seeds)}",
    ]
    for seed, v in zip(seeds, verdicts):
        lines.append(
            f"seed {seed}: {v.verdict}  slope={v.slope:.6g}  ci95={v.ci_halfwidth:.6g}  "
            f"final={v.final_sum:.6g}"
        )
    th = verdicts[0].thresholds
    lines.append(
        f"thresholds: slope_stable={th.slope_stable_per_ms:g}/MS  "
        f"slope_unstable={th.slope_unstable_per_ms:g}/MS  "
        f"final_bound={th.resolve_final_bound(verdicts[0].n_ms, verdicts[0].window):g}"
    )
    return "\n".join(lines) + "\n"


def _run_rate(spec: ExperimentSpec, mode: str, rate: float, out: Path) -> list[dict]:
    template = spec.sim_config(mode=mode, rate=rate)
    traces = run_seeds(template, spec.seeds)
    thresholds = spec.thresholds()
    rows = []
    verdicts = []
    for seed, trace in zip(spec.seeds, traces):
        write_trace_csv(trace, out / _trace_name(mode, rate, seed))
        v = classify_stability(trace, thresholds)
        verdicts.append(v)
        rows.append(
            {
                "mode": mode,
                "arrival_rate": f"{rate:g}",
                "seed": seed,
                "verdict": v.verdict,
                "slope": repr(v.slope),
                "ci_halfwidth": repr(v.ci_halfwidth),
                "final_backlog": repr(v.final_sum),
                "mean_backlog": repr(float(trace.mean_backlog.sum())),
            }
        )
    (out / f"verdict_{mode}_lam{rate:g}.txt").write_text(
        _verdict_text(mode, rate, verdicts, spec.seeds)
    )
    return rows


def _experiment_run(spec: ExperimentSpec, out: Path) -> int:
    rate = spec.values["arrival.rate"]
    rows = _run_rate(spec, spec.values["policy.mode"], rate, out)
    _write_summary(rows, out / "summary.csv")
    return 0


def _experiment_sweep(spec: ExperimentSpec, out: Path) -> int:
    rates = spec.values["sweep.rates"]
    if not rates:
        raise ConfigError("sweep.rates: required for kind=sweep")
    rows = []
    for rate in rates:
        for mode in (MODE_RELAY, MODE_NO_RELAY):
            rows.extend(_run_rate(spec, mode, rate, out))
    _write_summary(rows, out / "summary.csv")
    return 0


def _experiment_capacity(spec: ExperimentSpec, out: Path) -> int:
    modes = (
        (spec.values["policy.mode"],)
        if "policy.mode" in spec.explicit
        else (MODE_RELAY, MODE_NO_RELAY)
    )
    v = spec.values
    results = {}
    for mode in modes:
        template = spec.sim_config(mode=mode)
        bracket = search_capacity(
            template,
            v["capacity.rate_lo"],
            v["capacity.rate_hi"],
            v["capacity.resolution"],
            spec.seeds,
            spec.thresholds(),
        )
        results[mode] = bracket
    with open(out / "capacity.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "bracket_lo", "bracket_hi"])
        for mode, bracket in results.items():
            writer.writerow([mode, repr(bracket.lo), repr(bracket.hi)])
    with open(out / "capacity_probes.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "arrival_rate", "verdicts"])
        for mode, bracket in results.items():
            for rate in sorted(bracket.probes):
                writer.writerow([mode, repr(rate), " ".join(bracket.probes[rate])])
    return 0


def _experiment_region(spec: ExperimentSpec, out: Path) -> int:
    inst = load_instance(spec.values["region.instance"])
    n = inst.n_ms
    axis = np.linspace(0.0, spec.values["region.lambda_max"], spec.values["region.grid_points"])
    rows = list(itertools.product(axis, repeat=n))
    results = region_sweep(inst, np.array(rows))
    with open(out / "region.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"lambda_{i}" for i in range(n)] + ["verdict", "slack"])
        for lam, res in zip(rows, results):
            writer.writerow([repr(float(x)) for x in lam] + [res.verdict, repr(res.slack)])
    return 0


PLOT_SCRIPT = '''#!/usr/bin/env python3
"""Render backlog-vs-slot curves from the trace CSVs in this directory.

Generated alongside the experiment artifacts; needs only matplotlib and the
standard library.  One figure per arrival rate, relay and no-relay side by
side when both were run.
"""
import csv
import glob
import os
import re

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))
PATTERN = re.compile(r"trace_(relay|no-relay)_lam([^_]+)_seed(\\d+)\\.csv$")

by_rate = {}
for path in sorted(glob.glob(os.path.join(HERE, "trace_*.csv"))):
    m = PATTERN.search(os.path.basename(path))
    if not m:
        continue
    mode, rate, seed = m.group(1), m.group(2), int(m.group(3))
    by_rate.setdefault(rate, {}).setdefault(mode, []).append((seed, path))

def backlog(path):
    slots, total = [], []
    with open(path) as fh:
        for row in csv.DictReader(fh):
            slots.append(int(row["slot"]))
            total.append(float(row["sumX"]) + float(row["sumY"]))
    return slots, total

for rate, modes in sorted(by_rate.items(), key=lambda kv: float(kv[0])):
    fig, axes = plt.subplots(1, len(modes), figsize=(6 * len(modes), 4), squeeze=False)
    for ax, mode in zip(axes[0], sorted(modes)):
        for seed, path in sorted(modes[mode]):
            slots, total = backlog(path)
            ax.plot(slots, total, label=f"seed {seed}", linewidth=1.0)
        ax.set_title(f"{mode}, arrival rate {rate} packets/slot")
        ax.set_xlabel("slot")
        ax.set_ylabel("total backlog (packets)")
        ax.legend()
    fig.tight_layout()
    name = os.path.join(HERE, f"backlog_lam{rate}.png")
    fig.savefig(name, dpi=150)
    plt.close(fig)
    print("wrote", name)
'''


def run_experiment(spec: ExperimentSpec) -> int:
    """Execute an experiment spec; writes artifacts under its output directory."""
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config_resolved.cfg").write_text(format_config(spec))
    (out / "plot.py").write_text(PLOT_SCRIPT)
    if spec.kind == "run":
        return _experiment_run(spec, out)
    if spec.kind == "sweep":
        return _experiment_sweep(spec, out)
    if spec.kind == "capacity":
        return _experiment_capacity(spec, out)
    if spec.kind == "region":
        return _experiment_region(spec, out)
    raise ConfigError(f"kind: unknown experiment kind {spec.kind!r}")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="d2drelay",
        description="Relay-assisted uplink scheduling experiments",
        epilog="Set D2DRELAY_WORKERS to run seeds/probes in parallel.",
    )
    sub = parser.add_subparsers(dest="kind", required=True)
    for kind, helptext in (
        ("run", "single arrival rate, one policy mode"),
        ("sweep", "several arrival rates, both policy modes"),
        ("capacity", "bisect the maximum stabilizable symmetric rate"),
        ("region", "stability-region sweep of an instance file"),
    ):
        p = sub.add_parser(kind, help=helptext)
        p.add_argument("--config", help="experiment config file")
        p.add_argument("--seed", type=int, action="append", help="rng seed (repeatable)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--mode", choices=[MODE_RELAY, MODE_NO_RELAY], help="policy mode")
        p.add_argument("--slots", type=int, help="horizon in slots")
        p.add_argument("--arrival-rate", type=float, help="symmetric arrival rate")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    overrides: dict = {"kind": args.kind}
    if args.seed:
        overrides["seeds"] = tuple(args.seed)
    if args.out:
        overrides["out"] = args.out
    if args.mode:
        overrides["policy.mode"] = args.mode
    if args.slots:
        overrides["sim.horizon"] = args.slots
    if args.arrival_rate is not None:
        overrides["arrival.rate"] = args.arrival_rate
    try:
        if args.config:
            spec = parse_config(args.config, overrides)
        else:
            spec = default_spec(overrides)
        return run_experiment(spec)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command line driver: single runs and multi-seed algorithm comparisons.

    greenplace run --algo hapso --synth 500 --seed 1 --out runs/h500
    greenplace compare --algo hapso --algo ffd --synth 500 --synth 5000 \\
        --seed 1 --seed 2 --seed 3 --out runs/cmp

Exit codes: 0 success, 1 some compare run failed, 2 bad configuration,
3 unreadable or malformed workload.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .simulator import ALGORITHMS, ConfigError, SimConfig, load_config, run_simulation
from .workload import SwfParseError, cloudlets_from_jobs, parse_swf_file, synthesize

logger = logging.getLogger("greenplace")

EXIT_OK, EXIT_RUN_FAILED, EXIT_CONFIG, EXIT_WORKLOAD = 0, 1, 2, 3
METRICS = ("energy_kwh", "carbon_kg", "cost_usd", "migrations", "sla_pct")
COMPARE_COLUMNS = ("workload", "algorithm", "n_runs", "failures") + tuple(
    f"{m}_{stat}" for m in METRICS for stat in ("mean", "std"))
THREADS_ENV = "GREENPLACE_THREADS"


class WorkloadError(Exception):
    pass


@dataclass(frozen=True)
class WorkloadSource:
    """Either ``synth`` VMs generated from the run seed, or a fixed SWF trace."""
    synth: int | None = None
    swf: str | None = None
    duration_s: float = 86_400.0

    @property
    def label(self) -> str:
        return f"synth-{self.synth}" if self.synth is not None else Path(self.swf).stem

    def load(self, seed: int):
        if self.synth is not None:
            return synthesize(self.synth, self.duration_s, seed)
        try:
            return cloudlets_from_jobs(parse_swf_file(self.swf))
        except FileNotFoundError:
            raise WorkloadError(f"workload file not found: {self.swf}") from None
        except SwfParseError as exc:
            raise WorkloadError(f"{self.swf}: {exc}") from None
        except OSError as exc:
            raise WorkloadError(f"cannot read {self.swf}: {exc}") from None


@dataclass(frozen=True)
class ExperimentSpec:
    workloads: tuple
    algorithms: tuple
    seeds: tuple
    base: SimConfig
    out_dir: Path

    def __post_init__(self):
        if not self.algorithms:
            raise ConfigError("at least one algorithm is required")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if not self.workloads:
            raise ConfigError("a workload source is required")


def threads_from_env() -> int:
    raw = os.environ.get(THREADS_ENV, "")
    if not raw:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be >= 1")
    return n


def base_config(args) -> SimConfig:
    config = load_config(args.config) if args.config else SimConfig()
    if args.steps is not None:
        config = config.with_overrides(max_steps=args.steps)
    return config


def write_run(result, config: SimConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "ledger.json").write_text(result.ledger.to_json() + "\n")
    result.ledger.write_csv(out_dir / "steps.csv")
    (out_dir / "config.json").write_text(json.dumps(config.to_dict(), sort_keys=True, indent=1) + "\n")


def summarize(ledger) -> dict:
    agg = ledger.aggregate()
    return {
        "energy_kwh": agg["energy_kwh"],
        "carbon_kg": agg["carbon_kg"],
        "cost_usd": agg["cost_usd"],
        "migrations": agg["migrations"],
        "sla_pct": agg["sla_violation_pct"],
    }


def _one_run(job):
    """Worker body; returns (key, summary or None, error text or None)."""
    key, source, config, ledger_path = job
    try:
        workload = source.load(config.seed)
        result = run_simulation(config, workload)
    except Exception as exc:  # reported as a failure marker, not raised
        return key, None, f"{type(exc).__name__}: {exc}"
    if ledger_path is not None:
        ledger_path.parent.mkdir(parents=True, exist_ok=True)
        ledger_path.write_text(result.ledger.to_json() + "\n")
    return key, summarize(result.ledger), None


def run_jobs(jobs, threads: int) -> dict:
    if threads <= 1 or len(jobs) <= 1:
        outcomes = [_one_run(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as pool:
            outcomes = list(pool.map(_one_run, jobs))
    return {key: (summary, error) for key, summary, error in outcomes}


def compare_rows(spec: ExperimentSpec, outcomes: dict) -> list[dict]:
    rows = []
    for source in spec.workloads:
        for algo in spec.algorithms:
            runs = [outcomes[(source.label, algo, seed)] for seed in spec.seeds]
            ok = [summary for summary, error in runs if error is None]
            row = {"workload": source.label, "algorithm": algo, "n_runs": len(ok),
                   "failures": len(runs) - len(ok)}
            for m in METRICS:
                values = [s[m] for s in ok]
                row[f"{m}_mean"] = statistics.fmean(values) if values else float("nan")
                row[f"{m}_std"] = statistics.pstdev(values) if values else float("nan")
            rows.append(row)
    return rows


def format_table(rows: list[dict]) -> str:
    header = ["workload", "algorithm", "runs"] + list(METRICS)
    body = []
    for row in rows:
        cells = [row["workload"], row["algorithm"], str(row["n_runs"])]
        if row["failures"]:
            cells[2] += f" ({row['failures']} FAILED)"
        for m in METRICS:
            if row["n_runs"]:
                cells.append(f"{row[f'{m}_mean']:.3f} ± {row[f'{m}_std']:.3f}")
            else:
                cells.append("FAILED")
        body.append(cells)
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) if i < 3 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
             for r in [header] + body]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _csv_value(v):
    return repr(v) if isinstance(v, float) else v


def write_compare(spec: ExperimentSpec, rows: list[dict], errors: dict) -> None:
    out = spec.out_dir
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "compare.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(COMPARE_COLUMNS)
        for row in rows:
            writer.writerow([_csv_value(row[c]) for c in COMPARE_COLUMNS])
    provenance = {
        "version": __version__,
        "algorithms": list(spec.algorithms),
        "seeds": list(spec.seeds),
        "workloads": [{"label": w.label, "synth": w.synth, "swf": w.swf, "duration_s": w.duration_s}
                      for w in spec.workloads],
        "config": spec.base.to_dict(),
    }
    report = {"provenance": provenance, "rows": rows,
              "failures": [{"workload": k[0], "algorithm": k[1], "seed": k[2], "error": e}
                           for k, e in sorted(errors.items())]}
    (out / "compare.json").write_text(json.dumps(report, sort_keys=True, indent=1) + "\n")
    seeds = ",".join(str(s) for s in spec.seeds)
    text = f"# greenplace {__version__}  seeds: {seeds}  config: compare.json\n" + format_table(rows)
    (out / "compare.txt").write_text(text)


def run_compare(spec: ExperimentSpec, threads: int = 1) -> tuple[list[dict], dict]:
    jobs = []
    for source in spec.workloads:
        for algo in spec.algorithms:
            for seed in spec.seeds:
                config = spec.base.with_overrides(algorithm=algo, seed=seed)
                path = spec.out_dir / "runs" / source.label / f"{algo}-seed{seed}.json"
                jobs.append(((source.label, algo, seed), source, config, path))
    outcomes = run_jobs(jobs, threads)
    errors = {k: e for k, (_, e) in outcomes.items() if e is not None}
    rows = compare_rows(spec, outcomes)
    write_compare(spec, rows, errors)
    return rows, errors


# ---------------------------------------------------------------------------
# argparse plumbing
# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser, many_workloads: bool) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    if many_workloads:
        src.add_argument("--synth", type=int, action="append", metavar="N",
                         help="synthetic workload of N VMs (repeatable)")
    else:
        src.add_argument("--synth", type=int, metavar="N", help="synthetic workload of N VMs")
    src.add_argument("--swf", metavar="PATH", help="SWF trace file")
    p.add_argument("--seed", type=int, action="append", metavar="S", help="seed (repeatable, default 0)")
    p.add_argument("--config", metavar="PATH", help="JSON config file")
    p.add_argument("--out", metavar="DIR", default="greenplace-out", help="output directory")
    p.add_argument("--steps", type=int, metavar="N", help="stop after N monitoring steps")
    p.add_argument("--duration", type=float, default=86_400.0, metavar="S",
                   help="arrival horizon of synthetic workloads in seconds")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="greenplace", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate one algorithm")
    run.add_argument("--algo", choices=ALGORITHMS, default="hapso")
    _add_common(run, many_workloads=False)

    cmp_ = sub.add_parser("compare", help="compare algorithms over seeds and workload sizes")
    cmp_.add_argument("--algo", choices=ALGORITHMS, action="append",
                      help="algorithm (repeatable, default all)")
    _add_common(cmp_, many_workloads=True)
    return parser


def cmd_run(args) -> int:
    try:
        config = base_config(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    source = WorkloadSource(synth=args.synth, swf=args.swf, duration_s=args.duration)
    seeds = args.seed or [config.seed]
    out = Path(args.out)
    for seed in seeds:
        try:
            cfg = config.with_overrides(algorithm=args.algo, seed=seed)
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        try:
            workload = source.load(seed)
        except WorkloadError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_WORKLOAD
        result = run_simulation(cfg, workload)
        target = out if len(seeds) == 1 else out / f"seed{seed}"
        write_run(result, cfg, target)
        agg = result.ledger.aggregate()
        print(f"{args.algo} seed={seed}: energy={agg['energy_kwh']:.3f} kWh "
              f"carbon={agg['carbon_kg']:.3f} kg cost={agg['cost_usd']:.3f} USD "
              f"migrations={agg['migrations']} sla={agg['sla_violation_pct']:.3f}% -> {target}")
    return EXIT_OK


def cmd_compare(args) -> int:
    try:
        config = base_config(args)
        algorithms = tuple(args.algo or ALGORITHMS)
        if len(algorithms) < 2:
            raise ConfigError("compare needs at least two algorithms")
        sizes = args.synth or [None]
        workloads = tuple(WorkloadSource(synth=n, swf=args.swf, duration_s=args.duration) for n in sizes)
        spec = ExperimentSpec(workloads, algorithms, tuple(args.seed or [config.seed]), config,
                              Path(args.out))
        threads = threads_from_env()
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.swf:
        try:
            workloads[0].load(0)
        except WorkloadError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_WORKLOAD
    rows, errors = run_compare(spec, threads)
    sys.stdout.write(format_table(rows))
    for (label, algo, seed), error in sorted(errors.items()):
        print(f"FAILED {label} {algo} seed={seed}: {error}", file=sys.stderr)
    return EXIT_RUN_FAILED if errors else EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        return cmd_run(args)
    return cmd_compare(args)


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``skdv2 {simulate, ensemble, sweep, verify}``.

Exit codes: 0 success, 1 verification or numerical failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .config import SimConfig, config_comment_block, load_config
from .diagnostics import COL, DiagnosticsRecord, SnapshotDiagnostics
from .ensemble import EnsembleConfig, run_ensemble, sweep_epsilon
from .errors import ConfigError, SKdVError
from .field import Field, write_snapshot
from .integrator import Engine
from .noise import NoiseStream
from .plotting import plot_series, plot_sweep, write_xy_csv
from .verify import SUITES, report_json, run_suite

logger = logging.getLogger("skdv2")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2

NORM_COLUMNS = ("l2", "h1", "h2", "h1_win", "F")


def _out_dir(args, sim: SimConfig) -> Path:
    out = Path(args.out or sim["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(sim.to_text())
    return out


def _norm_csvs(out: Path, times, table, sim: SimConfig, prefix: str = "") -> None:
    header = config_comment_block(sim)
    for name in NORM_COLUMNS:
        write_xy_csv(out / f"{prefix}{name}.csv", times, table[:, COL[name]], "t", name, header)


def cmd_simulate(args, sim: SimConfig) -> int:
    sim.validate()
    g = sim.grid()
    spec = sim.drift_spec()
    noise = sim.noise_model(g)
    cfg = sim.stepper()
    weight = sim.weight(g)
    diag = SnapshotDiagnostics(g, spec, noise, weight, sim.window())
    u0 = sim.initial_field(g)
    out = _out_dir(args, sim)
    eng = Engine(g, spec, noise, cfg)
    res = eng.run(u0.values[None, :], [NoiseStream(sim["seed"], 0, noise.modes)],
                  diagnostics=diag, keep_fields=True)
    rows = res.records[0]
    if res.blown[0]:
        last = int(np.argmax(rows[:, COL["blowup"]] > 0))
        rows = rows[: last + 1]
    text = sim.to_text()
    with (out / "diagnostics.jsonl").open("w") as fh:
        fh.write(json.dumps({"config": text}) + "\n")
        for row in rows:
            fh.write(DiagnosticsRecord.from_row(row).to_json() + "\n")
    snap_dir = out / "snapshots"
    snap_dir.mkdir(exist_ok=True)
    for i, t in enumerate(res.times[: len(rows)]):
        vals = res.fields[0, i]
        if np.all(np.isfinite(vals)):
            write_snapshot(snap_dir / f"u_{i:05d}.skdv", Field(g, vals), t)
    times = res.times[: len(rows)]
    _norm_csvs(out, times, rows, sim)
    plot_series(out / "norms.png", times, {k: rows[:, COL[k]] for k in NORM_COLUMNS},
                title="single path", config_text=text)
    mass0 = g.spacing * float(np.sum(u0.values))
    print(f"simulated t_end={cfg.t_end} steps={cfg.n_steps} records={len(rows)} -> {out}")
    if res.blown[0]:
        print(f"blow-up at t={res.blowup_time[0]:.6g}", file=sys.stderr)
        return EXIT_FAILURE
    mass1 = g.spacing * float(np.sum(res.final_values[0]))
    print(f"mass: initial={mass0:.12g} final={mass1:.12g}")
    return EXIT_OK


def _ensemble_config(args, sim: SimConfig) -> EnsembleConfig:
    paths = args.paths if args.paths is not None else sim["ensemble.paths"]
    workers = args.workers if args.workers is not None else sim["ensemble.workers"]
    return EnsembleConfig.from_sim(sim, int(paths), int(workers))


def cmd_ensemble(args, sim: SimConfig) -> int:
    ens = _ensemble_config(args, sim)
    sim.validate()
    stats = run_ensemble(ens)
    out = _out_dir(args, sim)
    (out / "ensemble_stats.json").write_text(stats.to_json())
    _norm_csvs(out, stats.times, stats.mean, sim, prefix="mean_")
    se = stats.se
    plot_series(out / "ensemble_means.png", stats.times, {k: stats.column_mean(k) for k in NORM_COLUMNS},
                bands=None if se is None else {k: se[:, COL[k]] for k in NORM_COLUMNS},
                title=f"ensemble mean, {stats.paths} paths", config_text=stats.config_text)
    if args.per_path:
        with (out / "per_path.jsonl").open("w") as fh:
            fh.write(json.dumps({"config": stats.config_text}) + "\n")
            for p, rec in enumerate(stats.records):
                for row in rec:
                    d = {"path": p}
                    d.update(DiagnosticsRecord.from_row(row).to_dict())
                    fh.write(json.dumps(d) + "\n")
    print(f"ensemble paths={stats.paths} blowup_fraction={stats.blowup_fraction:.4g} -> {out}")
    if stats.moments is not None:
        m = stats.moments
        print(f"est_4a={m.est_4a:.6g} est_4c={m.est_4c:.6g}")
    return EXIT_OK


def cmd_sweep(args, sim: SimConfig) -> int:
    ens = _ensemble_config(args, sim)
    eps = sim["sweep.epsilons"]
    for e in eps:
        sim.replace(**{"drift.epsilon": e}).validate()
    res = sweep_epsilon(ens, eps)
    out = _out_dir(args, sim)
    (out / "sweep.csv").write_text(res.to_csv(config_comment_block(sim)))
    (out / "sweep.json").write_text(json.dumps(res.to_dict(), indent=1, allow_nan=False) + "\n")
    plot_sweep(out / "sweep.png", [r.epsilon for r in res.rows], [r.est_4a for r in res.rows],
               [r.est_4a_se for r in res.rows], [r.est_4c for r in res.rows],
               [r.est_4c_se for r in res.rows], config_text=sim.to_text())
    sys.stdout.write(res.to_csv())
    return EXIT_OK


def cmd_verify(args, sim: SimConfig) -> int:
    if args.suite not in SUITES:
        raise ConfigError(f"unknown verification suite '{args.suite}'; expected one of {SUITES}")
    workers = args.workers if args.workers is not None else None
    reports = run_suite(args.suite, sim, args.paths, workers)
    out = _out_dir(args, sim)
    (out / "verify_report.json").write_text(report_json(reports, sim.to_text()))
    for r in reports:
        for line in r.lines():
            print(line)
    failed = [r for r in reports if not r.passed]
    if failed:
        ff = failed[0].first_failure
        print(f"verification failed: first failing check {failed[0].suite}.{ff.name} "
              f"(measured {ff.measured:.6g}, tolerance {ff.tolerance:.6g})", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
    common.add_argument("--out", help="output directory (default: output_dir key)")
    common.add_argument("--workers", type=int, help="worker processes for ensembles")
    common.add_argument("--paths", type=int, help="number of ensemble paths")
    parser = argparse.ArgumentParser(prog="skdv2", description="Stochastic KdV2 simulator and verification harness")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="run one path")
    p = sub.add_parser("ensemble", parents=[common], help="run an ensemble and write statistics")
    p.add_argument("--per-path", action="store_true", help="also write per-path records")
    sub.add_parser("sweep", parents=[common], help="epsilon sweep on common random numbers")
    p = sub.add_parser("verify", parents=[common], help="run a verification suite")
    p.add_argument("suite", help=f"one of {', '.join(SUITES)}")
    return parser


COMMANDS = {"simulate": cmd_simulate, "ensemble": cmd_ensemble, "sweep": cmd_sweep, "verify": cmd_verify}


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        sim = load_config(args.config, args.override)
        return COMMANDS[args.command](args, sim)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SKdVError as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())

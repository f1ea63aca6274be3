"""Experiment runner CLI.

Subcommands: run, gradcheck, sweep, partition-report. Exit codes: 0 success,
2 configuration error, 3 runtime error, 4 gradient-check failure. All output
files are UTF-8 with newline line endings; reruns of an identical config are
byte-identical regardless of --threads.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from . import gradcheck as gc
from .config import ConfigError, ExperimentConfig, build_experiment_data, parse_config
from .federation import run_training
from .metrics import (
    MetricsTable,
    classifier_spectrum,
    evaluate_accuracy,
    write_metrics_csv,
    write_spectrum_csv,
)
from .model import serialize_params

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_GRADCHECK = 4


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def _load_config(args) -> ExperimentConfig:
    if not args.config:
        raise ConfigError("--config is required for this command")
    cfg = parse_config(args.config)
    if args.out:
        cfg.out_dir = args.out
        cfg.raw["out_dir"] = args.out
    if args.seed:
        try:
            seeds = [int(s) for s in args.seed.split(",") if s]
        except ValueError as exc:
            raise ConfigError(f"--seed: expected comma-separated integers: {exc}") from exc
        if not seeds:
            raise ConfigError("--seed: expected at least one integer")
        cfg.seeds = seeds
        cfg.raw["seeds"] = seeds
    return cfg


def _prepare_out_dir(cfg: ExperimentConfig, force: bool) -> Path:
    if not cfg.out_dir:
        raise ConfigError("missing required key out_dir (or pass --out)")
    out = Path(cfg.out_dir)
    if out.exists() and any(out.iterdir()) and not force:
        raise ConfigError(f"output directory {out} is not empty (use --force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _execute_single(cfg: ExperimentConfig, seed: int, run_dir: Path, threads: int) -> float:
    """One seeded run; writes metrics.csv, spectrum.csv, checkpoint.bin, manifest.json."""
    run_dir.mkdir(parents=True, exist_ok=True)
    data = build_experiment_data(cfg, seed)
    fed = cfg.fed_for_seed(seed, threads)
    label = f"{cfg.algorithm.kind}_seed{seed}"
    reports = []
    on_round = None
    if cfg.raw["fed"]["spectrum_per_round"]:
        on_round = lambda rnd, p: reports.append((f"{label}_r{rnd}", classifier_spectrum(p)))
    records, params = run_training(
        cfg.model, cfg.algorithm, fed, data.clients, data.test, evaluate_accuracy,
        on_round=on_round)
    table = MetricsTable(records, run_label=label, seed=seed,
                         algorithm=cfg.algorithm.kind, config_digest=cfg.digest())
    write_metrics_csv(table, run_dir / "metrics.csv")
    if not reports:
        reports = [(label, classifier_spectrum(params))]
    write_spectrum_csv(reports, run_dir / "spectrum.csv")
    (run_dir / "checkpoint.bin").write_bytes(serialize_params(params))
    manifest = {
        "config": cfg.raw,
        "digest": cfg.digest(),
        "seed": seed,
        "data_provenance": data.train.provenance,
        "artifacts": ["metrics.csv", "spectrum.csv", "checkpoint.bin"],
        "status": "complete",
    }
    (run_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return table.final_accuracy()


def cmd_run(args) -> int:
    cfg = _load_config(args)
    out = _prepare_out_dir(cfg, args.force)
    finals = []
    status = {}
    for seed in cfg.seeds:
        final = _execute_single(cfg, seed, out / f"seed_{seed}", args.threads)
        finals.append(final)
        status[str(seed)] = "complete"
        print(f"seed {seed}: final accuracy {final:.4f}")
    mean = float(np.mean(finals))
    std = float(np.std(finals))  # population std over seeds
    (out / "summary.csv").write_text(
        "seeds,mean_final_accuracy,std_final_accuracy\n"
        + ";".join(str(s) for s in cfg.seeds) + f",{_fmt(mean)},{_fmt(std)}\n",
        encoding="utf-8",
    )
    manifest = {
        "config": cfg.raw,
        "digest": cfg.digest(),
        "seeds": status,
        "artifacts": {str(s): f"seed_{s}" for s in cfg.seeds} | {"summary": "summary.csv"},
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"final accuracy {mean:.4f} +- {std:.4f} over {len(finals)} seed(s)")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    seed = 0
    if args.seed:
        seed = int(args.seed.split(",")[0])
    results = gc.run_gradcheck(seed)
    failed = [t for t, err in results.items() if not err < gc.REL_TOL]
    for term in gc.TERMS:
        verdict = "FAIL" if term in failed else "ok"
        print(f"{term:10s} max rel err {results[term]:.3e}  {verdict}")
    if failed:
        print(f"gradcheck FAILED: {', '.join(failed)}")
        return EXIT_GRADCHECK
    print("gradcheck passed")
    return EXIT_OK


_SWEEP_AXES = ("alpha", "rho", "algorithm")


def _apply_axis(cfg: ExperimentConfig, axis: str, value: str) -> ExperimentConfig:
    raw = json.loads(json.dumps(cfg.raw))  # deep copy
    if axis == "alpha":
        raw["data"]["alpha"] = float(value)
    elif axis == "rho":
        raw["fed"]["rho"] = float(value)
    elif axis == "algorithm":
        raw["algo"]["kind"] = value
    return parse_config(yaml.safe_dump(raw))


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    if args.axis not in _SWEEP_AXES:
        raise ConfigError(f"--axis: expected one of {_SWEEP_AXES}, got {args.axis!r}")
    values = [v for v in args.values.split(",") if v]
    if not values:
        raise ConfigError("--values: expected a comma-separated list")
    out = _prepare_out_dir(cfg, args.force)
    rows = []
    summary = []
    for value in values:
        sub = _apply_axis(cfg, args.axis, value)
        sub.out_dir = str(out)
        finals = []
        for seed in cfg.seeds:
            run_dir = out / f"{args.axis}_{value}" / f"seed_{seed}"
            final = _execute_single(sub, seed, run_dir, args.threads)
            finals.append(final)
            rows.append(f"{args.axis},{value},{seed},{_fmt(final)}")
            print(f"{args.axis}={value} seed={seed}: final accuracy {final:.4f}")
        summary.append(
            f"{args.axis},{value},{_fmt(float(np.mean(finals)))},{_fmt(float(np.std(finals)))}")
    (out / "sweep.csv").write_text(
        "axis,value,seed,final_accuracy\n" + "\n".join(rows) + "\n", encoding="utf-8")
    (out / "sweep_summary.csv").write_text(
        "axis,value,mean_accuracy,std_accuracy\n" + "\n".join(summary) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_partition_report(args) -> int:
    cfg = _load_config(args)
    seed = cfg.seeds[0]
    data = build_experiment_data(cfg, seed)
    hist = data.histograms
    classes = hist.shape[1]
    print(f"partition report (seed {seed}, {cfg.raw['data']['partition']})")
    header = "client  n " + " ".join(f"c{c:<4d}" for c in range(classes))
    print(header)
    for k, row in enumerate(hist):
        cells = " ".join(f"{int(v):<5d}" for v in row)
        print(f"{k:<6d} {int(row.sum()):<3d}{cells}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="config file path or inline YAML")
        p.add_argument("--out", help="override out_dir")
        p.add_argument("--seed", help="comma-separated seed list override")
        p.add_argument("--force", action="store_true", help="allow writing into a non-empty out dir")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads for client training (speed only, never results)")

    common(sub.add_parser("run", help="execute the configured runs"))
    common(sub.add_parser("gradcheck", help="finite-difference check of all loss gradients"))
    sweep = sub.add_parser("sweep", help="cross-product of an axis against all seeds")
    common(sweep)
    sweep.add_argument("--axis", required=True, help="alpha | rho | algorithm")
    sweep.add_argument("--values", required=True, help="comma-separated axis values")
    common(sub.add_parser("partition-report", help="print per-client class histograms"))
    return parser


_COMMANDS = {
    "run": cmd_run,
    "gradcheck": cmd_gradcheck,
    "sweep": cmd_sweep,
    "partition-report": cmd_partition_report,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - runtime failures map to one exit code
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

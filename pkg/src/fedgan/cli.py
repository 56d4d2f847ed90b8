"""Command-line front end.

    fedgan run      --config cfg.json --out DIR [--seed N]
    fedgan compare  --config cfg.json --aggregators fedavg,fedcar --seeds 1,2,3 --out DIR
    fedgan validate --config cfg.json

``FEDGAN_THREADS`` sets the thread count for per-round client training,
``FEDGAN_JOBS`` the number of worker processes for compare cells.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .aggregation import AGGREGATORS
from .codec import model_to_flat, save_checkpoint
from .config import config_from_dict, config_to_dict, load_config, with_seed
from .errors import ConfigError, FedGanError
from .federation import (FederationConfig, ExperimentResult, run_centralized, run_experiment, run_individual,
                         write_history)
from .scenarios import build_scenario, dump_scenario

log = logging.getLogger("fedgan")

JOBS_ENV = "FEDGAN_JOBS"
BASELINES = ("individual", "centralized")


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_run_artifacts(out: Path, result: ExperimentResult) -> None:
    write_history(result.history, out / "rounds.jsonl")
    alpha_rows, eval_rows = [], []
    for rec in result.history:
        if rec.alphas is not None and rec.totals is not None:
            for cid, (a, f) in enumerate(zip(rec.alphas, rec.totals)):
                alpha_rows.append([rec.round, cid, _fmt(a), _fmt(f)])
        for cid, fd in enumerate(rec.eval_fd):
            eval_rows.append([rec.round, cid, _fmt(fd)])
    _write_csv(out / "alpha_trace.csv", ["round", "client_id", "alpha", "F_n"], alpha_rows)
    _write_csv(out / "eval.csv", ["round", "client_id", "eval_fd"], eval_rows)
    (out / "summary.json").write_text(json.dumps(result.summary(), indent=2, sort_keys=True) + "\n")
    save_checkpoint(out / "global_final.ckpt", model_to_flat(result.global_model, result.codec), result.codec,
                    len(result.history) - 1)
    timing = {"round_wall_time_s": [rec.wall_time for rec in result.history]}
    (out / "timing.json").write_text(json.dumps(timing, indent=2) + "\n")


def _manifest(cfg: FederationConfig, out: Path, artifacts: list[str]) -> dict:
    return {"config": config_to_dict(cfg), "master_seed": cfg.master_seed, "code_version": __version__,
            "artifacts": {name: str(out / name) for name in artifacts}}


def cmd_run(config_path, out_dir, seed=None) -> int:
    cfg = load_config(config_path)
    if seed is not None:
        cfg = with_seed(cfg, seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    artifacts = ["rounds.jsonl", "alpha_trace.csv", "eval.csv", "summary.json", "scenario.jsonl",
                 "global_final.ckpt", "timing.json"]
    (out / "manifest.json").write_text(json.dumps(_manifest(cfg, out, artifacts), indent=2, sort_keys=True) + "\n")
    scenario = build_scenario(cfg.scenario)
    dump_scenario(scenario, out / "scenario.jsonl")
    result = run_experiment(cfg, scenario)
    write_run_artifacts(out, result)
    print(f"{cfg.aggregator}: {len(result.history)} rounds, avg eval FD {result.avg_fd:.4f} -> {out}")
    return 0


def _run_cell(cfg_dict: dict, method: str, seed: int):
    """One (method, seed) cell of a comparison; returns (row, history json lines)."""
    cfg = with_seed(config_from_dict(cfg_dict), seed)
    scenario = build_scenario(cfg.scenario)
    if method == "individual":
        results = run_individual(cfg, scenario)
        fds = [r.final_fd[0] for r in results]
        history = [json.dumps({"client_id": i, **rec.to_json()}, sort_keys=True)
                   for i, r in enumerate(results) for rec in r.history]
    else:
        if method == "centralized":
            result = run_centralized(cfg, scenario)
        else:
            cfg.aggregator = method
            result = run_experiment(cfg, scenario)
        fds = list(result.final_fd)
        history = [json.dumps(rec.to_json(), sort_keys=True) for rec in result.history]
    return [method, seed, *fds, float(np.mean(fds))], history


def _jobs() -> int:
    try:
        return max(1, int(os.environ.get(JOBS_ENV, "1")))
    except ValueError:
        return 1


def cmd_compare(config_path, aggregators, seeds, out_dir) -> int:
    cfg = load_config(config_path)
    unknown = [a for a in aggregators if a not in AGGREGATORS]
    if unknown:
        raise ConfigError([f"unknown aggregator {a!r}; choose from {', '.join(AGGREGATORS)}" for a in unknown])
    if not aggregators or not seeds:
        raise ConfigError(["compare needs at least one aggregator and one seed"])
    out = Path(out_dir)
    (out / "cells").mkdir(parents=True, exist_ok=True)
    methods = list(aggregators) + list(BASELINES)
    manifest = _manifest(cfg, out, ["summary.csv", "median.csv", "cells/"])
    manifest.update(aggregators=list(aggregators), seeds=list(seeds))
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    cfg_dict = config_to_dict(cfg)
    cells = [(m, s) for s in seeds for m in methods]
    if _jobs() > 1:
        with ProcessPoolExecutor(max_workers=_jobs()) as pool:
            results = list(pool.map(_run_cell, [cfg_dict] * len(cells), *zip(*cells)))
    else:
        results = [_run_cell(cfg_dict, m, s) for m, s in cells]

    n_clients = len(results[0][0]) - 3
    header = ["method", "seed", *[f"fd_client_{i}" for i in range(n_clients)], "avg"]
    rows = []
    for (method, seed), (row, history) in zip(cells, results):
        rows.append([row[0], row[1], *[_fmt(v) for v in row[2:]]])
        (out / "cells" / f"{method}_seed{seed}.jsonl").write_text("".join(h + "\n" for h in history))
    _write_csv(out / "summary.csv", header, rows)

    median_rows = []
    for method in methods:
        vals = np.array([row[2:] for row, _ in results if row[0] == method], dtype=float)
        median_rows.append([method, len(vals), *[_fmt(v) for v in np.median(vals, axis=0)]])
    _write_csv(out / "median.csv", ["method", "n_seeds", *header[2:]], median_rows)
    for row in median_rows:
        print(f"{row[0]:>12}  median avg FD {float(row[-1]):.4f}")
    return 0


def cmd_validate(config_path) -> int:
    cfg = load_config(config_path)
    print(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True))
    return 0


def _csv_list(text: str, conv=str):
    return [conv(x.strip()) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedgan", description="Federated GAN aggregation simulator")
    p.add_argument("-v", "--verbose", action="store_true", help="log every round")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one federated experiment")
    run.add_argument("--config", required=True)
    run.add_argument("--out", required=True)
    run.add_argument("--seed", type=int, default=None, help="override master and scenario seed")

    cmp_ = sub.add_parser("compare", help="compare aggregators and baselines over seeds")
    cmp_.add_argument("--config", required=True)
    cmp_.add_argument("--aggregators", required=True, help="comma-separated, e.g. fedavg,fedadam,fedcar")
    cmp_.add_argument("--seeds", required=True, help="comma-separated integers")
    cmp_.add_argument("--out", required=True)

    val = sub.add_parser("validate", help="check a config without running it")
    val.add_argument("--config", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        if args.command == "run":
            return cmd_run(args.config, args.out, args.seed)
        if args.command == "compare":
            try:
                seeds = _csv_list(args.seeds, int)
            except ValueError:
                raise ConfigError([f"--seeds must be comma-separated integers, got {args.seeds!r}"])
            return cmd_compare(args.config, _csv_list(args.aggregators), seeds, args.out)
        return cmd_validate(args.config)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"error: {problem}", file=sys.stderr)
        return 2
    except (OSError, FedGanError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

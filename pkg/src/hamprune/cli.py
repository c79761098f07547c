"""Command line entry point: ``hamprune {run,curve,oracle,preprocess}``.

Log verbosity is read from the ``HAMPRUNE_LOG`` environment variable
(``DEBUG``, ``INFO``, ``WARNING``; default ``WARNING``).
"""
from __future__ import annotations

import argparse
import csv
import glob
import json
import logging
import os
import sys
import time
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import data as data_mod
from .config import ConfigError, ExperimentConfig, load_config, load_data, model_dims
from .masks import MaskState
from .models import CTRModel, build_model
from .oracle import enumerate_best_mask
from .search import ALL_STRATEGIES, build_report, pretrain, report_mask, retrain, search_stage, uniform_mask

log = logging.getLogger("hamprune")

STAGES = ("pretrain", "search", "retrain", "all")


def _setup_logging():
    level = os.environ.get("HAMPRUNE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _stem(cfg: ExperimentConfig, seed: int) -> str:
    return f"{cfg.strategy}_{cfg.model['kind']}_s{cfg.search.target_size}_seed{seed}"


def _load_experiment(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if getattr(args, "strategy", None):
        cfg.strategy = args.strategy
        cfg.search = cfg.search.replace(strategy=args.strategy)
    if getattr(args, "seed", None) is not None:
        cfg.seeds = [args.seed]
    if getattr(args, "out", None):
        cfg.output = args.out
    return cfg


def run_seed(cfg: ExperimentConfig, seed: int, splits, stage="all") -> Path | None:
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    train, val, test = splits
    conf = cfg.search.replace(seed=seed, strategy=cfg.strategy)
    stem = _stem(cfg, seed)
    pre_path = out / f"pretrain_{cfg.model['kind']}_seed{seed}.npz"
    search_path = out / f"search_{stem}.npz"
    mask_path = out / f"mask_{stem}.json"
    times, history = {}, []

    if stage in ("pretrain", "all"):
        t = time.perf_counter()
        cards = train.schema.cardinalities
        model = build_model(cfg.model["kind"], cards, model_dims(cfg, cards), seed=seed,
                            **(cfg.model.get("options") or {}))
        history += pretrain(model, train, val, conf)
        model.save(pre_path)
        times["pretrain"] = time.perf_counter() - t
        if stage == "pretrain":
            return pre_path

    if stage in ("search", "all"):
        if not pre_path.exists():
            raise FileNotFoundError(f"missing pretrained checkpoint {pre_path}; run --stage pretrain first")
        t = time.perf_counter()
        model = CTRModel.load(pre_path)
        if cfg.strategy == "uniform":
            mask, snap, stopped = uniform_mask(model.embeddings, conf.target_size), None, False
        else:
            res = search_stage(model, train, val, conf)
            mask, snap, stopped = res.mask, res.state.snapshot(), res.stopped_early
            history += res.history
        model.save(search_path)
        mask_path.write_text(json.dumps({"mask": [int(v) for v in mask], "snapshot": snap,
                                         "stopped_early": stopped}))
        times["search"] = time.perf_counter() - t
        if stage == "search":
            return mask_path

    if not (search_path.exists() and mask_path.exists()):
        raise FileNotFoundError(f"missing search outputs for {stem}; run --stage search first")
    t = time.perf_counter()
    model = CTRModel.load(search_path)
    saved = json.loads(mask_path.read_text())
    mask = np.asarray(saved["mask"], dtype=float)
    rr = retrain(model, mask, train, val, test, conf)
    history += rr.history
    rr.model.save(out / f"final_{stem}.npz")
    times["retrain"] = time.perf_counter() - t
    snap = saved["snapshot"]
    report = build_report(conf, model.kind, model, mask, rr, history,
                          alpha=None if snap is None else snap["alpha"],
                          stopped=saved["stopped_early"], times=times)
    report.config = {**cfg.resolved(), "search": conf.to_dict(), "seed": seed}
    report_path = out / f"report_{stem}.json"
    report_path.write_text(report.to_json())
    _write_metrics_csv(out / f"metrics_{stem}.csv", report.history)
    return report_path


def _write_metrics_csv(path, history):
    keys = ["stage", "epoch", "iteration", "train_loss", "val_logloss", "val_auc", "positive_alpha"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, extrasaction="ignore")
        w.writeheader()
        for row in history:
            w.writerow(row)


def cmd_run(args) -> int:
    cfg = _load_experiment(args)
    splits = load_data(cfg)
    for seed in cfg.seeds:
        path = run_seed(cfg, seed, splits, args.stage)
        print(path)
    return 0


def aggregate_reports(paths) -> list[dict]:
    groups = defaultdict(list)
    for p in paths:
        rep = json.loads(Path(p).read_text())
        groups[(rep["strategy"], rep["target_size"])].append(rep)
    rows = []
    for (strategy, s), reps in sorted(groups.items()):
        aucs = [r["test_auc"] for r in reps]
        rows.append({"strategy": strategy, "s": s, "n_runs": len(reps),
                     "mean_test_auc": float(np.mean(aucs)), "best_test_auc": float(np.max(aucs)),
                     "embedding_params": float(np.mean([r["embedding_params"] for r in reps])),
                     "total_params": float(np.mean([r["total_params"] for r in reps]))})
    return rows


def cmd_curve(args) -> int:
    paths = sorted(glob.glob(args.reports, recursive=True))
    if not paths:
        print(f"no reports match {args.reports!r}", file=sys.stderr)
        return 1
    rows = aggregate_reports(paths)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    finally:
        if args.out:
            fh.close()
    return 0


def cmd_oracle(args) -> int:
    cfg = _load_experiment(args)
    train, val, test = load_data(cfg)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    steps = int(cfg.oracle.get("retrain_steps", 50))
    for seed in cfg.seeds:
        conf = cfg.search.replace(seed=seed, strategy="ham")
        cards = train.schema.cardinalities
        model = build_model(cfg.model["kind"], cards, model_dims(cfg, cards), seed=seed,
                            **(cfg.model.get("options") or {}))
        pretrain(model, train, val, conf)
        enum = enumerate_best_mask(model, train, val, conf.target_size, steps, conf.lr, conf.batch_size, seed)
        res = search_stage(model.clone(), train, val, conf)
        ham = report_mask(res.state.values, conf.target_size)
        path = out / f"oracle_{cfg.model['kind']}_s{conf.target_size}_seed{seed}.csv"
        enum.to_csv(path)
        bits = "".join(str(int(v)) for v in ham)
        print(f"seed {seed}: HAM mask {bits} ranks {enum.rank_of(ham)} of {len(enum.ranking)} ({path})")
    return 0


def cmd_preprocess(args) -> int:
    cfg = _load_experiment(args)
    splits = load_data(cfg)
    prefix = Path(args.out or cfg.output) / "dataset"
    prefix.parent.mkdir(parents=True, exist_ok=True)
    for ds in splits:
        data_mod.save_cache(f"{prefix}.{ds.tag}.npz", ds)
    print(prefix)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hamprune", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="pretrain -> search -> retrain per seed")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int)
    run.add_argument("--out")
    run.add_argument("--stage", choices=STAGES, default="all")
    run.add_argument("--strategy", choices=ALL_STRATEGIES)
    run.set_defaults(func=cmd_run)

    curve = sub.add_parser("curve", help="aggregate reports into a test-AUC vs parameters table")
    curve.add_argument("reports", help="glob of report JSON files")
    curve.add_argument("--out")
    curve.set_defaults(func=cmd_curve)

    oracle = sub.add_parser("oracle", help="exhaustive mask enumeration on a tiny instance")
    oracle.add_argument("--config", required=True)
    oracle.add_argument("--seed", type=int)
    oracle.add_argument("--out")
    oracle.set_defaults(func=cmd_oracle)

    prep = sub.add_parser("preprocess", help="encode a dataset and write the indexed cache")
    prep.add_argument("--config", required=True)
    prep.add_argument("--out")
    prep.set_defaults(func=cmd_preprocess)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

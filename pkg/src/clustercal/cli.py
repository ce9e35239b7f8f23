"""Command-line front end.

Every subcommand replays the deterministic pipeline from the config up to
its stage and writes that stage's artifacts into the output directory, so
commands can run independently and repeated runs are byte-identical.

Exit codes: 0 success, 1 validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .data import DataError, SyntheticSpec, gen_synthetic_full, load_csv, split
from .harness import (
    ConfigError, ExperimentConfig, StageError,
    _cluster, _embed, _fit_model, _load_data, _write_csv, _write_json,
    rejection_selection, run_experiment, select_model,
)
from .representation import assign, diagnostics


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="clustercal",
        description="Clustered calibration experiments: train, cluster, calibrate, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("train", "fit or ingest the base model; write scores and splits"),
        ("embed", "build the sample embedding matrix"),
        ("cluster", "fit the cluster model and diagnostics"),
        ("calibrate", "fit unified and clustered calibrators"),
        ("evaluate", "produce the metric report"),
        ("select", "pick the best variant from the report"),
        ("reject", "rejection threshold sweep"),
        ("report", "run the full pipeline end to end"),
    ]:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
    return parser


def _prefix_state(cfg, upto: str):
    ds, synth_margins, _ = _load_data(cfg)
    splits = split(ds, cfg.split_ratios, cfg.seed, cfg.stratify)
    state = {"ds": ds, "splits": splits}
    if upto == "split":
        return state
    ens, scores = _fit_model(cfg, ds, splits.train, synth_margins)
    state.update(ens=ens, scores=scores)
    if upto == "model":
        return state
    E = _embed(cfg, ens, ds)
    state["E"] = E
    if upto == "embed":
        return state
    fit_idx = np.sort(np.concatenate([splits.train, splits.calibration]))
    cm, curve = _cluster(cfg, E, fit_idx)
    state.update(cm=cm, elbow_curve=curve, fit_idx=fit_idx)
    return state


def _cmd_train(cfg):
    st = _prefix_state(cfg, "model")
    os.makedirs(cfg.out, exist_ok=True)
    ds, splits, ens, scores = st["ds"], st["splits"], st["ens"], st["scores"]
    if ens is not None:
        _write_json(os.path.join(cfg.out, "ensemble.json"), ens.to_dict())
    _write_json(os.path.join(cfg.out, "splits.json"),
                {"train": splits.train.tolist(),
                 "calibration": splits.calibration.tolist(),
                 "test": splits.test.tolist(), "seed": splits.seed})
    _write_csv(os.path.join(cfg.out, "scores.csv"),
               ("sample_id", "margin", "probability"),
               [[sid, m, p] for sid, m, p in
                zip(ds.sample_ids, scores.margins, scores.probabilities)])


def _cmd_embed(cfg):
    st = _prefix_state(cfg, "embed")
    os.makedirs(cfg.out, exist_ok=True)
    E, ds = st["E"], st["ds"]
    _write_csv(os.path.join(cfg.out, "embedding.csv"),
               ("sample_id",) + tuple(f"e{j}" for j in range(E.m)),
               [[sid] + list(row) for sid, row in zip(ds.sample_ids, E.vectors)])


def _cmd_cluster(cfg):
    st = _prefix_state(cfg, "cluster")
    os.makedirs(cfg.out, exist_ok=True)
    cm, E, ds, fit_idx = st["cm"], st["E"], st["ds"], st["fit_idx"]
    _write_json(os.path.join(cfg.out, "clusters.json"), cm.to_dict())
    diag = diagnostics(cm, assign(cm, E.vectors[fit_idx]), ds.labels[fit_idx])
    _write_json(os.path.join(cfg.out, "diagnostics.json"),
                {"size_variance": diag.size_variance,
                 "label_rate_variance": diag.label_rate_variance,
                 "homogeneity_fraction": diag.homogeneity_fraction,
                 "elbow_curve": st["elbow_curve"],
                 "table": diag.table})
    _write_csv(os.path.join(cfg.out, "clusters.csv"),
               ("cluster_id", "size", "positive_rate", "centroid_norm"),
               [[r["cluster"], r["size"], r["positive_rate"],
                 float(np.linalg.norm(cm.centroids[r["cluster"]]))]
                for r in diag.table])


def _cmd_report(cfg):
    report = run_experiment(cfg)
    selection = select_model(report, "CECE")
    _write_json(os.path.join(cfg.out, "selection.json"), selection)
    return report


def _cmd_select(cfg):
    path = os.path.join(cfg.out, "eval_report.json")
    if not os.path.exists(path):
        report = run_experiment(cfg)
    else:
        from .harness import EvalReport
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        report = EvalReport(d["rows"], d["cluster_diagnostics"],
                            d["improved_fractions"], d["provenance"])
    selection = select_model(report)
    _write_json(os.path.join(cfg.out, "selection.json"), selection)
    print(json.dumps(selection["row"], sort_keys=True))


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = ExperimentConfig.from_json_file(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out is not None:
            cfg.out = args.out
        if cfg.out is None:
            raise ConfigError("an output directory is required (--out or config 'out')")
        cfg.validate()
    except (ConfigError, DataError, FileNotFoundError, json.JSONDecodeError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    try:
        if args.command == "train":
            _cmd_train(cfg)
        elif args.command == "embed":
            _cmd_embed(cfg)
        elif args.command == "cluster":
            _cmd_cluster(cfg)
        elif args.command in ("calibrate", "evaluate", "reject", "report"):
            _cmd_report(cfg)
        elif args.command == "select":
            _cmd_select(cfg)
        else:  # pragma: no cover
            raise AssertionError(args.command)
    except (ConfigError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end: dataset simulation, training, evaluation, reports.

Subcommands
-----------
simulate   generate a noisy train split and a clean test split plus manifest
train      run a training configuration against a dataset, emit artifacts
evaluate   score saved checkpoints on a dataset
report     tabulate finished run directories (text + CSV)

Configuration comes from an optional flat ``key = value`` text file (see
README for the schema); command-line flags override file values. Exit codes:
0 success, 1 runtime failure, 2 validation failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import reporting
from .data import NoiseSpec, generate_splits, load_dataset, save_dataset
from .errors import ConfigError, DatasetFormatError
from .model import MlpRegressor
from .pipeline import TrainConfig, evaluate, run

logger = logging.getLogger("gazepurify")

_BOOL_VALUES = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _parse_bool(text: str) -> bool:
    try:
        return _BOOL_VALUES[text.strip().lower()]
    except KeyError:
        raise ValueError(f"expected a boolean, got {text!r}") from None


def _parse_dims(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.replace(" ", "").split(",") if part)


# Every key accepted in a config file, with its parser. Commands read their
# own subset and ignore the rest, so one file can drive the whole flow.
CONFIG_KEYS = {
    # simulate
    "n_train": int,
    "n_test": int,
    "n_persons": int,
    "input_dim": int,
    "jitter_scale": float,
    "label_noise_fraction": float,
    "label_noise_min_deg": float,
    "label_noise_max_deg": float,
    "input_corrupt_fraction": float,
    "input_corrupt_scale": float,
    "noise_seed": int,
    # train
    "max_epochs": int,
    "warmup_epochs": int,
    "k_neighbors": int,
    "epsilon": float,
    "tau_label": float,
    "tau_image": float,
    "ridge_lambda": float,
    "mode": str,
    "no_neighboring": _parse_bool,
    "no_reconstruction_weighting": _parse_bool,
    "no_sample_weighting": _parse_bool,
    "no_label_correction": _parse_bool,
    "subset_label_composition": _parse_bool,
    "hidden_dims": _parse_dims,
    "feat_dim": int,
    "learning_rate": float,
    "batch_size": int,
    # shared
    "seed": int,
}


def parse_config_file(path) -> dict:
    """Parse a flat ``key = value`` file; '#' starts a comment."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}: line {lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key not in CONFIG_KEYS:
                raise ConfigError(f"{path}: line {lineno}: unknown key {key!r}")
            try:
                values[key] = CONFIG_KEYS[key](value)
            except ValueError as exc:
                raise ConfigError(f"{path}: line {lineno}: bad value for {key}: {exc}") from None
    return values


def _merged(config: dict, args: argparse.Namespace, key: str, default):
    cli_value = getattr(args, key, None)
    if cli_value is not None:
        return cli_value
    return config.get(key, default)


def cmd_simulate(args) -> int:
    config = parse_config_file(args.config) if args.config else {}
    get = lambda key, default: _merged(config, args, key, default)
    noise = NoiseSpec(
        label_noise_fraction=get("label_noise_fraction", 0.0),
        label_noise_min_deg=get("label_noise_min_deg", 0.0),
        label_noise_max_deg=get("label_noise_max_deg", 0.0),
        input_corrupt_fraction=get("input_corrupt_fraction", 0.0),
        input_corrupt_scale=get("input_corrupt_scale", 5.0),
        seed=get("noise_seed", 0),
    )
    noise.validate()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    train, test = generate_splits(
        n_train=get("n_train", 4000),
        n_test=get("n_test", 1000),
        n_persons=get("n_persons", 8),
        input_dim=get("input_dim", 32),
        noise=noise,
        seed=get("seed", 0),
        jitter_scale=get("jitter_scale", 0.02),
    )
    train_path = out_dir / "train.jsonl"
    test_path = out_dir / "test.jsonl"
    save_dataset(train, train_path)
    save_dataset(test, test_path)
    manifest = {
        "seed": get("seed", 0),
        "noise": vars(noise).copy(),
        "jitter_scale": get("jitter_scale", 0.02),
        "n_train": len(train),
        "n_test": len(test),
        "n_persons": get("n_persons", 8),
        "input_dim": train.input_dim,
        "label_corrupted": int(train.label_corrupted_mask().sum()),
        "input_corrupted": int(train.input_corrupted_mask().sum()),
        "files": {"train": train_path.name, "test": test_path.name},
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if args.self_check:
        for path in (train_path, test_path):
            load_dataset(path).validate()
        logger.info("self-check passed")
    logger.info(
        "wrote %s (%d samples, %d corrupted labels) and %s (%d samples)",
        train_path,
        len(train),
        manifest["label_corrupted"],
        test_path,
        len(test),
    )
    return 0


def _write_confidence_csvs(report, out_dir: Path) -> list[Path]:
    paths = []
    for block in report.confidence_history:
        path = out_dir / f"confidence_epoch{block['epoch']:03d}_net{block['network']}.csv"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sample_id", "tuple_md", "triple_md", "label_conf", "image_conf", "weight"])
            for row in zip(
                block["sample_id"],
                block["tuple_md"],
                block["triple_md"],
                block["label_conf"],
                block["image_conf"],
                block["weight"],
            ):
                writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
        paths.append(path)
    return paths


def cmd_train(args) -> int:
    if args.threads < 1:
        raise ConfigError(f"threads must be >= 1, got {args.threads}")
    config = parse_config_file(args.config) if args.config else {}
    get = lambda key, default: _merged(config, args, key, default)
    defaults = TrainConfig()
    cfg = TrainConfig(
        max_epochs=get("max_epochs", defaults.max_epochs),
        warmup_epochs=get("warmup_epochs", defaults.warmup_epochs),
        k_neighbors=get("k_neighbors", defaults.k_neighbors),
        epsilon=get("epsilon", defaults.epsilon),
        tau_label=get("tau_label", defaults.tau_label),
        tau_image=get("tau_image", defaults.tau_image),
        ridge_lambda=get("ridge_lambda", defaults.ridge_lambda),
        seed=get("seed", defaults.seed),
        mode=get("mode", defaults.mode),
        no_neighboring=get("no_neighboring", False),
        no_reconstruction_weighting=get("no_reconstruction_weighting", False),
        no_sample_weighting=get("no_sample_weighting", False),
        no_label_correction=get("no_label_correction", False),
        subset_label_composition=get("subset_label_composition", False),
        hidden_dims=get("hidden_dims", defaults.hidden_dims),
        feat_dim=get("feat_dim", defaults.feat_dim),
        learning_rate=get("learning_rate", defaults.learning_rate),
        batch_size=get("batch_size", defaults.batch_size),
    )
    cfg.validate()
    dataset = load_dataset(args.dataset)
    test_dataset = load_dataset(args.test_dataset) if args.test_dataset else None
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    # Linear-algebra thread count; 1 is the strict deterministic mode and
    # results are reproducible for any fixed value.
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=args.threads):
        report = run(dataset, cfg, test_dataset)
    report_path = out_dir / "report.json"
    report.save(report_path)
    csv_paths = _write_confidence_csvs(report, out_dir)
    for k, net in enumerate(report.nets, start=1):
        net.save(out_dir / f"net{k}.npz")
    if args.self_check:
        with open(report_path, "r", encoding="utf-8") as fh:
            json.load(fh)
        for path in csv_paths:
            with open(path, "r", encoding="utf-8", newline="") as fh:
                rows = list(csv.reader(fh))
            if len(rows) != len(dataset) + 1:
                raise RuntimeError(f"self-check failed: {path} has {len(rows) - 1} rows")
        for k in range(1, len(report.nets) + 1):
            MlpRegressor.load(out_dir / f"net{k}.npz")
        logger.info("self-check passed")
    if report.final.get("ensemble") is not None:
        logger.info("final test error (ensemble): %.4f deg", report.final["ensemble"])
    logger.info("run artifacts in %s", out_dir)
    return 0


def cmd_evaluate(args) -> int:
    dataset = load_dataset(args.dataset)
    nets = [MlpRegressor.load(p) for p in args.checkpoint]
    result = evaluate(nets, dataset)
    print(json.dumps(result, indent=2, sort_keys=True))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(result, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0


def cmd_report(args) -> int:
    rows = reporting.collect_run_rows(args.run_dir)
    if not rows:
        logger.error("no readable reports among the given directories")
        return 1
    table = reporting.render_table(rows)
    print(table)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "comparison.txt", "w", encoding="utf-8") as fh:
        fh.write(table + "\n")
    reporting.write_table_csv(rows, out_dir / "comparison.csv")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gazepurify",
        description="Noisy-label purification pipeline for gaze regression datasets.",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate synthetic train/test splits")
    p_sim.add_argument("--config", help="key = value config file")
    p_sim.add_argument("--out", required=True, help="output directory")
    p_sim.add_argument("--self-check", action="store_true")
    for key in ("n_train", "n_test", "n_persons", "input_dim", "noise_seed", "seed"):
        p_sim.add_argument(f"--{key.replace('_', '-')}", dest=key, type=int)
    for key in (
        "jitter_scale",
        "label_noise_fraction",
        "label_noise_min_deg",
        "label_noise_max_deg",
        "input_corrupt_fraction",
        "input_corrupt_scale",
    ):
        p_sim.add_argument(f"--{key.replace('_', '-')}", dest=key, type=float)
    p_sim.set_defaults(func=cmd_simulate)

    p_train = sub.add_parser("train", help="run a training configuration")
    p_train.add_argument("--config", help="key = value config file")
    p_train.add_argument("--dataset", required=True)
    p_train.add_argument("--test-dataset")
    p_train.add_argument("--out", required=True, help="run output directory")
    p_train.add_argument("--self-check", action="store_true")
    p_train.add_argument("--threads", type=int, default=1,
                         help="linear-algebra threads (1 = strict deterministic mode)")
    p_train.add_argument("--mode", choices=["suge_cotrain", "suge_selftrain", "baseline"])
    for key in ("max_epochs", "warmup_epochs", "k_neighbors", "feat_dim", "batch_size", "seed"):
        p_train.add_argument(f"--{key.replace('_', '-')}", dest=key, type=int)
    for key in ("epsilon", "tau_label", "tau_image", "ridge_lambda", "learning_rate"):
        p_train.add_argument(f"--{key.replace('_', '-')}", dest=key, type=float)
    for key in (
        "no_neighboring",
        "no_reconstruction_weighting",
        "no_sample_weighting",
        "no_label_correction",
        "subset_label_composition",
    ):
        p_train.add_argument(
            f"--{key.replace('_', '-')}", dest=key, action="store_const", const=True
        )
    p_train.add_argument("--hidden-dims", dest="hidden_dims", type=_parse_dims)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("evaluate", help="score checkpoints on a dataset")
    p_eval.add_argument("--dataset", required=True)
    p_eval.add_argument("--checkpoint", action="append", required=True)
    p_eval.add_argument("--out")
    p_eval.set_defaults(func=cmd_evaluate)

    p_rep = sub.add_parser("report", help="tabulate finished runs")
    p_rep.add_argument("run_dir", nargs="+")
    p_rep.add_argument("--out", default=".", help="directory for comparison.{txt,csv}")
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DatasetFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except np.linalg.LinAlgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

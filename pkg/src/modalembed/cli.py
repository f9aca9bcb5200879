"""Command-line front end.

Subcommands:

    generate           write the synthetic benchmark to a dataset file
    train              self-supervised training; writes run artifacts
    eval-knn           frozen-feature KNN on one held-out fold
    eval-probe         linear probe on one held-out fold
    cross-validate     full k-fold retrain-and-evaluate protocol
    export-embeddings  CSV of ids, labels, embeddings and 2-d PCA
    ttest              pooled two-sample t-test on two number lists

Every RunConfig key is exposed as a --key flag that overrides the
--config file; --seed must be given explicitly for train and
cross-validate.  Each command echoes its fully-resolved config to
stdout before doing any work.

Exit codes: 0 success, 2 configuration error, 3 I/O or file-format
error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

import numpy as np

from . import data, encoder, evaluation, runner
from .config import RunConfig, format_config, resolve_config
from .errors import (
    DegenerateCovariance,
    DegenerateTest,
    EngineError,
    FormatError,
    NumericalOverflow,
    SingleClass,
    ZeroVector,
)
from .linalg import seeded_rng

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

_NUMERIC_ERRORS = (
    ZeroVector,
    NumericalOverflow,
    DegenerateCovariance,
    DegenerateTest,
    SingleClass,
)


def _add_config_flags(parser: argparse.ArgumentParser, require_seed: bool) -> None:
    parser.add_argument("--config", default=None, help="key = value config file")
    for f in dataclasses.fields(RunConfig):
        if f.name == "seed":
            continue
        parser.add_argument(
            f"--{f.name.replace('_', '-')}",
            dest=f.name,
            default=argparse.SUPPRESS,
            metavar="VALUE",
        )
    parser.add_argument(
        "--seed",
        dest="seed",
        required=require_seed,
        default=argparse.SUPPRESS,
        metavar="INT",
    )


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    skip = {"config", "command", "out", "binary", "a", "b"}
    overrides = {
        k: v for k, v in vars(args).items() if k not in skip and v is not None
    }
    return resolve_config(args.config, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="modalembed",
        description="Self-supervised patient embeddings from paired-modality images.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write the synthetic benchmark dataset")
    _add_config_flags(p, require_seed=False)
    p.add_argument("--out", required=True, help="output dataset path")
    p.add_argument("--binary", action="store_true", help="write the binary layout")

    p = sub.add_parser("train", help="train the encoder")
    _add_config_flags(p, require_seed=True)

    p = sub.add_parser("eval-knn", help="KNN evaluation of a trained encoder")
    _add_config_flags(p, require_seed=False)

    p = sub.add_parser("eval-probe", help="linear-probe evaluation of a trained encoder")
    _add_config_flags(p, require_seed=False)

    p = sub.add_parser("cross-validate", help="k-fold retrain/evaluate protocol")
    _add_config_flags(p, require_seed=True)

    p = sub.add_parser("export-embeddings", help="dump embeddings + 2-d PCA to CSV")
    _add_config_flags(p, require_seed=False)
    p.add_argument("--out", required=True, help="output CSV path")

    p = sub.add_parser("ttest", help="pooled two-sample t-test")
    p.add_argument("--a", required=True, help="comma-separated sample A")
    p.add_argument("--b", required=True, help="comma-separated sample B")
    return parser


def _parse_sample(text: str, name: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",") if v.strip() != ""])
    except ValueError as exc:
        raise FormatError(f"sample {name}: {exc}") from exc


def _echo(cfg: RunConfig) -> None:
    print("# resolved configuration")
    print(format_config(cfg), end="")


def _require_params(cfg: RunConfig) -> encoder.EncoderParams:
    if not cfg.params:
        raise FormatError("this command needs --params pointing at an encoder file")
    return encoder.load_params(cfg.params)


def _eval_split(cfg: RunConfig):
    dataset = runner.load_or_generate(cfg)
    split = data.make_folds(dataset.ids(), cfg.folds, seeded_rng(cfg.seed, 3))
    return dataset, split


def _run(args: argparse.Namespace) -> int:
    command = args.command
    if command == "ttest":
        t, p = evaluation.t_test(_parse_sample(args.a, "a"), _parse_sample(args.b, "b"))
        print(f"t = {t:.17g}")
        print(f"p = {p:.17g}")
        return 0

    cfg = _config_from_args(args)
    _echo(cfg)

    if command == "generate":
        dataset = runner.load_or_generate(cfg)
        data.save_dataset(dataset, args.out, binary=args.binary)
        print(f"wrote {len(dataset)} patients to {args.out}")
        return 0

    if command == "train":
        result = runner.run_train(cfg)
        print(f"initial loss = {result.history[0]:.6f}")
        print(f"final loss = {result.history[-1]:.6f}")
        print(f"params -> {result.params_path}")
        print(f"loss log -> {result.loss_csv_path}")
        print(f"config echo -> {result.config_path}")
        return 0

    if command == "cross-validate":
        result = runner.run_cv(cfg)
        for fold, report in enumerate(result.fold_reports):
            print(f"fold {fold}: accuracy = {report.accuracy:.4f} auc = {report.auc:.4f}")
        for name in ("auc", "accuracy", "precision", "recall", "f1"):
            print(f"{name}: mean = {result.mean[name]:.4f} std = {result.std[name]:.4f}")
        print(f"report -> {result.report_path}")
        return 0

    if command == "eval-knn":
        params = _require_params(cfg)
        dataset, split = _eval_split(cfg)
        report = runner.knn_eval_fold(params, dataset, split, cfg.holdout_fold, cfg)
        print(evaluation.format_report(report))
        return 0

    if command == "eval-probe":
        params = _require_params(cfg)
        dataset, split = _eval_split(cfg)
        train_emb, train_labels, test_emb, test_labels = runner.split_embeddings(
            params, dataset, split, cfg.holdout_fold
        )
        report = evaluation.linear_probe(
            train_emb,
            train_labels,
            test_emb,
            test_labels,
            n_classes=dataset.n_classes,
            epochs=cfg.probe_epochs,
            lr=cfg.probe_lr,
        )
        print(evaluation.format_report(report))
        return 0

    if command == "export-embeddings":
        params = _require_params(cfg)
        runner.export_embeddings(cfg, params, args.out)
        print(f"embeddings -> {args.out}")
        return 0

    raise AssertionError(f"unhandled command {command!r}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _run(args)
    except _NUMERIC_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FormatError as exc:
        print(f"file format error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except EngineError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end.

Subcommands: ``synth-data``, ``labels-report``, ``train``, ``eval``,
``lr-plot``, ``bootstrap``.  Exit codes: 0 success, 1 usage/config/input
error, 2 runtime abort.  Every run directory receives a normalized JSON copy
of its effective configuration; re-running from that copy and the same seed
reproduces the run's report files byte for byte.
"""

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import kernels
from .config import RunConfig
from .data import (
    ImageStore,
    LabelVocabulary,
    apply_label_threshold,
    drop_undecodable,
    load_manifest,
    load_rater_file,
    load_vocabulary,
    save_vocabulary,
)
from .errors import (
    AlignmentError,
    CheckpointError,
    ConfigError,
    ContractError,
    EmptyVocabularyError,
    GraphError,
    ImageDecodeError,
    ManifestError,
    OptimError,
    OracleError,
    ProtocolError,
    ShapeError,
    TrainAbort,
    UndefinedAUCError,
    ValidationError,
)
from .evaluate import build_eval_report, rater_matrix
from .model import build_model, load_checkpoint
from .optim import ScheduleConfig, schedule_values
from .plot import write_line_svg
from .synth import generate_dataset
from .train import fit, predict_scores
from . import __version__

USAGE_EXIT = 1
RUNTIME_EXIT = 2

_USAGE_ERRORS = (
    ConfigError,
    ManifestError,
    ValidationError,
    EmptyVocabularyError,
    AlignmentError,
    FileNotFoundError,
)
_RUNTIME_ERRORS = (
    TrainAbort,
    ProtocolError,
    CheckpointError,
    OptimError,
    ImageDecodeError,
    OracleError,
    ShapeError,
    GraphError,
    ContractError,
    UndefinedAUCError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    p = _Parser(prog="contaminet", description="multi-label bin-photo contamination toolkit")
    p.add_argument("--version", action="version", version=f"contaminet {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth-data", help="generate the bundled shape dataset")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--train", type=int, default=2000)
    sp.add_argument("--valid", type=int, default=400)
    sp.add_argument("--test", type=int, default=200)
    sp.add_argument("--size", default="80x106", help="image HxW, e.g. 80x106")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--raters", type=int, default=4)
    sp.add_argument("--flip-prob", type=float, default=0.1)

    sp = sub.add_parser("labels-report", help="label counts and retention per frequency threshold")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--threshold", type=int, action="append", help="repeatable; default 0")
    sp.add_argument("--top", type=int, default=10)
    sp.add_argument("--bottom", type=int, default=5)
    sp.add_argument("--json", dest="json_out", help="also write the report as JSON")

    sp = sub.add_parser("train", help="fit a model from a run config")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", help="run directory (overrides config out_dir)")
    sp.add_argument("--seed", type=int, help="override config seed")
    sp.add_argument("--threshold", type=int, help="override label frequency threshold")

    sp = sub.add_parser("eval", help="TTA predictions, expert protocol, bootstrap CIs")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--raters", required=True)
    sp.add_argument("--config", help="run config for augment/eval settings")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, help="override config seed")
    sp.add_argument("--tta", type=int, help="override TTA view count")
    sp.add_argument("--resamples", type=int, help="override bootstrap resample count")
    sp.add_argument("--threshold", type=int, help="override label frequency threshold")

    sp = sub.add_parser("lr-plot", help="dump the one-cycle schedule as CSV and SVG")
    sp.add_argument("--max-lr", type=float, required=True)
    sp.add_argument("--iters", type=int, required=True)
    sp.add_argument("--warm-frac", type=float, default=0.3)
    sp.add_argument("--start-div", type=float, default=25.0)
    sp.add_argument("--final-div", type=float, default=2000.0)
    sp.add_argument("--literal-decay", action="store_true")
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("bootstrap", help="bootstrap CIs from a rater file (and optional scores)")
    sp.add_argument("--raters", required=True)
    sp.add_argument("--scores", help="scores CSV as written by eval")
    sp.add_argument("--vocab", help="vocabulary JSON fixing label order")
    sp.add_argument("--resamples", type=int, default=10000)
    sp.add_argument("--level", type=float, default=0.95)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--aggregation", choices=("macro", "micro"), default="macro")
    sp.add_argument("--out", required=True)
    return p


def _parse_size(text):
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"--size must look like 80x106, got {text!r}")
    if h < 8 or w < 8:
        raise UsageError(f"--size too small: {text}")
    return h, w


def cmd_synth_data(args):
    summary = generate_dataset(
        args.out,
        n_train=args.train,
        n_valid=args.valid,
        n_test=args.test,
        image_size=_parse_size(args.size),
        seed=args.seed,
        n_raters=args.raters,
        rater_flip_prob=args.flip_prob,
    )
    total = args.train + args.valid + args.test
    print(f"wrote {total} images and manifests to {args.out}")
    print(f"labels: {', '.join(summary['labels'])}")
    return 0


def _fmt_frac(x):
    return "n/a" if x is None else f"{100.0 * x:.1f}%"


def cmd_labels_report(args):
    records, vocab = load_manifest(args.manifest)
    thresholds = args.threshold if args.threshold else [0]
    entries = []
    for t in sorted(set(thresholds)):
        try:
            filtered, rep = apply_label_threshold(vocab, t, records)
            top = list(filtered.entries[: args.top])
            bottom = list(filtered.entries[-args.bottom :]) if len(filtered) > args.top else []
        except EmptyVocabularyError:
            filtered, top, bottom = None, [], []
            rep = None
        entries.append((t, rep, top, bottom))
        if rep is None:
            print(f"threshold >= {t}: removes every label")
            continue
        print(
            f"threshold >= {t}: {rep.labels_after} of {rep.labels_before} labels kept, "
            f"records retained {_fmt_frac(rep.retained_record_fraction)}, "
            f"label occurrences retained {_fmt_frac(rep.retained_occurrence_fraction)}"
        )
        print(f"  top {len(top)} labels by training frequency:")
        for name, freq in top:
            print(f"    {name:<40s} {freq:>8d}")
        if bottom:
            print(f"  bottom {len(bottom)}:")
            for name, freq in bottom:
                print(f"    {name:<40s} {freq:>8d}")
    if args.json_out:
        payload = [
            {
                "min_count": t,
                "report": rep.as_dict() if rep else None,
                "top": [[n, c] for n, c in top],
                "bottom": [[n, c] for n, c in bottom],
            }
            for t, rep, top, bottom in entries
        ]
        with open(args.json_out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
    return 0


def _effective_run_config(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if getattr(args, "threshold", None) is not None:
        cfg = dataclasses.replace(
            cfg, data=dataclasses.replace(cfg.data, label_min_count=args.threshold)
        )
    if getattr(args, "tta", None) is not None:
        cfg = dataclasses.replace(cfg, eval=dataclasses.replace(cfg.eval, tta=args.tta))
    if getattr(args, "resamples", None) is not None:
        cfg = dataclasses.replace(cfg, eval=dataclasses.replace(cfg.eval, resamples=args.resamples))
    return cfg


def _make_store(cfg, manifest_path):
    base = cfg.data.images_dir or os.path.dirname(os.path.abspath(manifest_path))
    return ImageStore(base, cache=cfg.data.cache_images)


def cmd_train(args):
    cfg = _effective_run_config(RunConfig.from_file(args.config), args)
    manifest_path = cfg.data.manifest or ""
    if not manifest_path:
        raise ConfigError("data.manifest is required for training")
    if not os.path.isabs(manifest_path):
        manifest_path = os.path.join(os.path.dirname(os.path.abspath(args.config)), manifest_path)
    # persist an absolute path so the run's config copy is rerunnable from anywhere
    cfg = dataclasses.replace(
        cfg, data=dataclasses.replace(cfg.data, manifest=os.path.abspath(manifest_path))
    )
    out_dir = args.out or cfg.out_dir
    if not out_dir:
        raise ConfigError("an output directory is required (--out or config out_dir)")

    # validate all inputs before touching the output directory
    records, master_vocab = load_manifest(manifest_path)
    vocab, threshold_report = apply_label_threshold(master_vocab, cfg.data.label_min_count, records)
    train_records = [r for r in records if r.split == "train"]
    valid_records = [r for r in records if r.split == "valid"]
    if not train_records or not valid_records:
        raise ValidationError(
            f"need non-empty train and valid splits, got {len(train_records)}/{len(valid_records)}"
        )
    store = _make_store(cfg, manifest_path)
    if cfg.data.skip_bad_images:
        train_records = drop_undecodable(train_records, store, log=lambda m: print(m, file=sys.stderr))
        valid_records = drop_undecodable(valid_records, store, log=lambda m: print(m, file=sys.stderr))

    policy = cfg.augment.to_policy()
    model_config = cfg.model.to_model_config(len(vocab), policy.crop_to)
    net = build_model(model_config, cfg.seed)
    train_cfg = cfg.train.to_train_config(cfg.seed)

    os.makedirs(out_dir, exist_ok=True)
    dataclasses.replace(cfg, out_dir=None).write_json(os.path.join(out_dir, "config.json"))
    save_vocabulary(vocab, os.path.join(out_dir, "vocabulary.json"))
    with open(os.path.join(out_dir, "threshold_report.json"), "w", encoding="utf-8") as fh:
        json.dump(threshold_report.as_dict(), fh, indent=2)
        fh.write("\n")

    print(
        f"training on {len(train_records)} records / validating on {len(valid_records)} "
        f"({len(vocab)} labels, backend={kernels.active_name()})"
    )
    report = fit(net, train_records, valid_records, vocab, policy, train_cfg, store, out_dir=out_dir)
    best = report.val_loss[report.best_epoch]
    print(
        f"done: {report.epochs_completed} epochs, {report.total_steps} steps; "
        f"final val loss {report.val_loss[-1]:.6f}, best {best:.6f} at epoch {report.best_epoch}"
    )
    print(f"artifacts in {out_dir}")
    return 0


def _write_scores_csv(path, image_paths, labels, scores):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("image_path," + ",".join(labels) + "\n")
        for p, row in zip(image_paths, scores):
            fh.write(p + "," + ",".join(repr(float(v)) for v in row) + "\n")


def _read_scores_csv(path):
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines:
        raise ManifestError(f"{path}: empty scores file")
    header = lines[0].split(",")
    if header[0] != "image_path" or len(header) < 2:
        raise ManifestError(f"{path}: header must be image_path,<label>,...")
    labels = header[1:]
    paths, rows = [], []
    for i, ln in enumerate(lines[1:], start=2):
        parts = ln.split(",")
        if len(parts) != len(header):
            raise ManifestError(f"{path}: line {i}: expected {len(header)} fields, got {len(parts)}")
        paths.append(parts[0])
        try:
            rows.append([float(v) for v in parts[1:]])
        except ValueError as exc:
            raise ManifestError(f"{path}: line {i}: {exc}")
    return paths, labels, np.asarray(rows)


def cmd_eval(args):
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    cfg = _effective_run_config(cfg, args)
    net, ckpt_vocab = load_checkpoint(args.checkpoint)
    records, master_vocab = load_manifest(args.manifest)
    if ckpt_vocab is not None:
        vocab = ckpt_vocab
        if args.threshold is not None:
            filtered, _ = apply_label_threshold(master_vocab, args.threshold, records)
            if filtered.names != vocab.names:
                raise ConfigError(
                    f"--threshold {args.threshold} yields {len(filtered)} labels that do not "
                    f"match the checkpoint's {len(vocab)}-label vocabulary"
                )
    else:
        vocab, _ = apply_label_threshold(master_vocab, cfg.data.label_min_count, records)
    if net.config.head_outputs != len(vocab):
        raise ConfigError(
            f"checkpoint head has {net.config.head_outputs} outputs but the active "
            f"vocabulary has {len(vocab)} labels"
        )
    test_records = [r for r in records if r.split == "test"]
    if not test_records:
        raise ValidationError("manifest has no test records")
    raters = rater_matrix(load_rater_file(args.raters), [r.image_path for r in test_records], vocab)

    policy = cfg.augment.to_policy().eval_only() if cfg.eval.tta < 1 else cfg.augment.to_policy()
    if policy.crop_to != tuple(net.config.input_shape[1:]):
        raise ConfigError(
            f"augment crop {policy.crop_to} does not match the checkpoint input "
            f"{tuple(net.config.input_shape[1:])}; pass the training config"
        )
    store = _make_store(cfg, args.manifest)
    print(
        f"scoring {len(test_records)} test images with TTA n={cfg.eval.tta} "
        f"(backend={kernels.active_name()})"
    )
    scores = predict_scores(net, test_records, vocab, policy, store, tta=cfg.eval.tta, seed=cfg.seed)
    report = build_eval_report(
        scores,
        raters,
        vocab.names,
        resamples=cfg.eval.resamples,
        level=cfg.eval.level,
        seed=cfg.seed,
        average=cfg.eval.aggregation,
    )
    os.makedirs(args.out, exist_ok=True)
    report.write_json(os.path.join(args.out, "eval_report.json"))
    report.write_csv(os.path.join(args.out, "eval_report.csv"))
    _write_scores_csv(
        os.path.join(args.out, "scores.csv"), [r.image_path for r in test_records], vocab.names, scores
    )
    effective = {
        "checkpoint": args.checkpoint,
        "manifest": args.manifest,
        "raters": args.raters,
        "seed": cfg.seed,
        "tta": cfg.eval.tta,
        "resamples": cfg.eval.resamples,
        "level": cfg.eval.level,
        "aggregation": cfg.eval.aggregation,
    }
    with open(os.path.join(args.out, "eval_config.json"), "w", encoding="utf-8") as fh:
        json.dump(effective, fh, indent=2)
        fh.write("\n")
    for row in report.rows:
        print(f"{row.name:<12s} AUC {row.auc:.4f}  CI [{row.ci_lower:.4f}, {row.ci_upper:.4f}]")
    print(f"report in {args.out}")
    return 0


def cmd_lr_plot(args):
    cfg = ScheduleConfig(
        max_lr=args.max_lr,
        total_steps=args.iters,
        warm_frac=args.warm_frac,
        start_div=args.start_div,
        final_div=args.final_div,
        literal_decay_segment=args.literal_decay,
    )
    values = schedule_values(cfg)
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "schedule.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("step,lr\n")
        for i, lr in enumerate(values):
            fh.write(f"{i},{float(lr)!r}\n")
    svg_path = os.path.join(args.out, "schedule.svg")
    write_line_svg(
        svg_path,
        list(range(len(values))),
        list(values),
        title="one-cycle learning rate",
        xlabel="step",
        ylabel="learning rate",
    )
    print(f"wrote {csv_path} and {svg_path}")
    return 0


def cmd_bootstrap(args):
    rater_records = load_rater_file(args.raters)
    scores = None
    if args.scores:
        paths, score_labels, scores = _read_scores_csv(args.scores)
    if args.vocab:
        vocab = load_vocabulary(args.vocab)
    elif args.scores:
        vocab = LabelVocabulary((name, 0) for name in score_labels)
    else:
        names = sorted({name for rec in rater_records for name in rec.labels})
        vocab = LabelVocabulary((name, 0) for name in names)
    if args.scores:
        if score_labels != list(vocab.names):
            raise AlignmentError(
                f"scores columns {score_labels} do not match vocabulary {list(vocab.names)}"
            )
        image_paths = paths
    else:
        image_paths = sorted({rec.image_path for rec in rater_records})
    raters = rater_matrix(rater_records, image_paths, vocab)
    report = build_eval_report(
        scores,
        raters,
        vocab.names,
        resamples=args.resamples,
        level=args.level,
        seed=args.seed,
        average=args.aggregation,
    )
    os.makedirs(args.out, exist_ok=True)
    report.write_json(os.path.join(args.out, "bootstrap_report.json"))
    report.write_csv(os.path.join(args.out, "bootstrap_report.csv"))
    for row in report.rows:
        print(f"{row.name:<12s} AUC {row.auc:.4f}  CI [{row.ci_lower:.4f}, {row.ci_upper:.4f}]")
    return 0


_COMMANDS = {
    "synth-data": cmd_synth_data,
    "labels-report": cmd_labels_report,
    "train": cmd_train,
    "eval": cmd_eval,
    "lr-plot": cmd_lr_plot,
    "bootstrap": cmd_bootstrap,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except _RUNTIME_ERRORS as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return RUNTIME_EXIT


if __name__ == "__main__":
    sys.exit(main())

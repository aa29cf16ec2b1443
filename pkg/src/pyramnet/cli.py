"""Command-line interface: ``pyramnet <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 failed check.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from . import export as export_mod
from . import gradcheck
from .data import Dataset, make_synthetic, read_dataset, read_pcld, split_dataset, write_dataset
from .data.io import convert
from .errors import CheckFailure, ConfigError, DataError, PyramNetError
from .gem import choose_k
from .model import CEIL_RULE, REFERENCE_SHAPES, TASKS, ModelConfig, PyramNet
from .train import RunConfig, check_compatible, evaluate, format_sweep, read_log, sweep_k, train

log = logging.getLogger("pyramnet")
DATA_ENV = "PYRAMNET_DATA_DIR"


# argument parsing -----------------------------------------------------------------

def _add_model_flags(p):
    p.add_argument("--task", choices=TASKS, default="classification")
    p.add_argument("--k", default="auto", help="GEM neighbour count: an integer or 'auto' for ceil(F/4)")
    p.add_argument("--no-gem", action="store_true", help="replace both GEMs with linear layers")
    p.add_argument("--no-pan", action="store_true", help="replace the pyramid branch with a linear layer")


def _add_run_flags(p):
    d = RunConfig()
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--lr", type=float, default=d.lr)
    p.add_argument("--beta1", type=float, default=d.beta1)
    p.add_argument("--beta2", type=float, default=d.beta2)
    p.add_argument("--bn-decay-start", type=float, default=d.bn_decay_start)
    p.add_argument("--bn-decay-max", type=float, default=d.bn_decay_max)
    p.add_argument("--bn-decay-halflife", type=float, default=d.bn_decay_halflife)
    p.add_argument("--dropout-keep", type=float, default=d.dropout_keep)
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--eval-every", type=int, default=d.eval_every)
    p.add_argument("--checkpoint-every", type=int, default=d.checkpoint_every)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--f64-check", action="store_true", help="run in 64-bit precision (bit-exact reproducibility)")
    p.add_argument("--bn-refresh", action="store_true", help="recompute BN running statistics on the training set before each evaluation")


def build_parser():
    parser = argparse.ArgumentParser(prog="pyramnet", description="PyramNet point-cloud networks on numpy.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    _add_model_flags(p)
    _add_run_flags(p)
    p.add_argument("--data", help=f"dataset root (default: ${DATA_ENV})")
    p.add_argument("--checkpoint", help="checkpoint path; the best model goes next to it as <stem>.best<suffix>")
    p.add_argument("--report", help="append per-epoch JSON lines to this log")
    p.add_argument("--resume", action="store_true", help="continue from --checkpoint if it exists")
    p.add_argument("--print-config", action="store_true", help="print the resolved configuration and exit")
    p.add_argument("--dump-trace", help="write a per-stage shape audit of one forward pass to this file")

    p = sub.add_parser("eval", help="evaluate a checkpoint in inference mode")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help=f"dataset root (default: ${DATA_ENV})")
    p.add_argument("--split", default="test")
    p.add_argument("--batch-size", type=int, default=RunConfig.batch_size)
    p.add_argument("--report", help="write the metric report as JSON")
    p.add_argument("--dump-trace")

    p = sub.add_parser("predict", help="label the clouds in .pcld files")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("inputs", nargs="+")
    p.add_argument("--output", help="write labels here instead of stdout")

    p = sub.add_parser("export", help="write a colored OBJ of per-point labels")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help=".pcld cloud")
    p.add_argument("--output", required=True)
    p.add_argument("--variant", choices=export_mod.VARIANTS, default="pred")

    p = sub.add_parser("convert", help="convert OFF/OBJ/TXT files into .pcld records")
    p.add_argument("src")
    p.add_argument("dst")
    p.add_argument("--format", choices=("off", "obj", "txt"))
    p.add_argument("--task", choices=TASKS, default="classification")
    p.add_argument("--points", type=int, default=1024)
    p.add_argument("--label", type=int)
    p.add_argument("--point-labels", action="store_true", help="last TXT column holds per-point labels")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    p.add_argument("--report", help="also write the report to this file")
    p.add_argument("--ops-only", action="store_true", help="skip the end-to-end model checks")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("sweep-k", help="train one classifier per GEM neighbour count")
    _add_model_flags(p)
    _add_run_flags(p)
    p.set_defaults(k="20,30,auto")
    p.add_argument("--data", help=f"dataset root (default: ${DATA_ENV})")
    p.add_argument("--report", help="write the rows as JSON")

    p = sub.add_parser("synth", help="write a synthetic dataset with train/test splits")
    p.add_argument("--task", choices=("classification", "part_seg"), default="classification")
    p.add_argument("--out", required=True)
    p.add_argument("--per-class", type=int, default=32)
    p.add_argument("--points", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("report", help="summarize a training log")
    p.add_argument("log")
    return parser


# helpers ----------------------------------------------------------------------------

def data_root(args):
    root = args.data or os.environ.get(DATA_ENV)
    if not root:
        raise DataError(f"no dataset given: pass --data or set {DATA_ENV}")
    return Path(root)


def load_splits(root):
    train_set = read_dataset(root, "train")
    test_set = read_dataset(root, "test") if (root / "test").is_dir() else None
    return train_set, test_set


def parse_k(text):
    if text in ("auto", CEIL_RULE, "ceil"):
        return CEIL_RULE
    try:
        k = int(text)
    except ValueError:
        raise ConfigError(f"--k expects an integer or 'auto', got {text!r}") from None
    return f"fixed:{k}"


def run_config(args):
    return RunConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        beta1=args.beta1,
        beta2=args.beta2,
        bn_decay_start=args.bn_decay_start,
        bn_decay_max=args.bn_decay_max,
        bn_decay_halflife=args.bn_decay_halflife,
        dropout_keep=args.dropout_keep,
        augment=not args.no_augment,
        eval_every=args.eval_every,
        checkpoint_every=args.checkpoint_every,
        seed=args.seed,
        f64=args.f64_check,
        bn_refresh=args.bn_refresh,
    )


def model_config(args, dataset: Dataset | None, k_rule=None):
    """Model settings for ``args``; N, F and P come from the dataset when one is given."""
    if dataset is None:
        n, f, p = REFERENCE_SHAPES[args.task]
    else:
        if dataset.task != args.task:
            raise ConfigError(f"dataset task {dataset.task!r} does not match --task {args.task}")
        n, f = dataset.clouds[0].points.shape
        p = dataset.num_classes
    ref = ModelConfig.reference(args.task)
    free = (n, f) != (ref.n_points, ref.in_channels) or (args.task == "scene_seg" and p != ref.num_classes)
    cfg = ModelConfig(
        task=args.task,
        n_points=n,
        in_channels=f,
        num_classes=p,
        enable_gem=not args.no_gem,
        enable_pan=not args.no_pan,
        k_rule=k_rule or parse_k(args.k),
        dropout_keep=args.dropout_keep,
        seed=args.seed,
        free_form=free,
    )
    return cfg.validate()


def dump_trace(path, model, points):
    with np.errstate(all="ignore"):
        trace = model.forward(points[:2], training=False)
    Path(path).write_text(trace.report())
    log.info("shape audit written to %s", path)


def _emit(text, path=None):
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


# commands ---------------------------------------------------------------------------

def cmd_train(args):
    run = run_config(args)
    if args.print_config:
        dataset = None
        if args.data or os.environ.get(DATA_ENV):
            dataset = read_dataset(data_root(args), "train")
        cfg = model_config(args, dataset)
        sys.stdout.write("[run]\n" + run.to_text() + "[model]\n" + cfg.to_text())
        return 0
    train_set, test_set = load_splits(data_root(args))
    cfg = model_config(args, train_set)
    if args.dump_trace:
        pts = np.stack([c.points for c in train_set.clouds[:2]]).astype(run.dtype)
        dump_trace(args.dump_trace, PyramNet(cfg, dtype=run.dtype), pts)

    def progress(record):
        parts = [f"epoch {record['epoch']:4d}", f"loss {record['loss']:.4f}"]
        for split in ("train", "test"):
            if split in record:
                parts.append(f"{split} acc {record[split]['overall_accuracy']:.4f} mIoU {record[split]['miou']:.4f}")
        print("  ".join(parts), flush=True)

    result = train(cfg, run, train_set, test_set, args.checkpoint, args.report, args.resume, on_epoch=progress)
    if result.final_train is not None:
        print("final train:", result.final_train.to_json())
    if result.final_test is not None:
        print("final test: ", result.final_test.to_json())
    print(f"best epoch {result.best_epoch} score {result.best_score:.4f}")
    return 0


def cmd_eval(args):
    model, _ = ckpt_io.load_model(args.checkpoint)
    dataset = read_dataset(data_root(args), args.split)
    check_compatible(model.config, dataset)
    if args.dump_trace:
        dump_trace(args.dump_trace, model, np.stack([c.points for c in dataset.clouds[:2]]).astype(model.dtype))
    report = evaluate(model, dataset, args.batch_size)
    sys.stdout.write(report.table())
    print(report.to_json())
    if args.report:
        Path(args.report).write_text(report.to_json() + "\n")
    return 0


def cmd_predict(args):
    model, _ = ckpt_io.load_model(args.checkpoint)
    lines = []
    for path in args.inputs:
        cloud, _ = read_pcld(path)
        if cloud.points.shape != (model.config.n_points, model.config.in_channels):
            raise ConfigError(
                f"{path}: cloud is {cloud.points.shape[0]} x {cloud.points.shape[1]}, model expects "
                f"{model.config.n_points} x {model.config.in_channels}"
            )
        pred = model.predict(cloud.points[None].astype(model.dtype))[0]
        lines.append(f"{path}\t" + " ".join(str(int(v)) for v in np.atleast_1d(pred)))
    _emit("\n".join(lines) + "\n", args.output)
    return 0


def cmd_export(args):
    model, _ = ckpt_io.load_model(args.checkpoint)
    if model.config.task == "classification":
        raise ConfigError("export needs a segmentation checkpoint")
    cloud, _ = read_pcld(args.input)
    if cloud.points.shape != (model.config.n_points, model.config.in_channels):
        raise ConfigError(f"{args.input}: cloud shape {cloud.points.shape} does not fit the model")
    pred = model.predict(cloud.points[None].astype(model.dtype))[0]
    colors = export_mod.label_colors(
        cloud.points, pred=pred, gt=cloud.point_labels, variant=args.variant, num_labels=model.config.num_classes
    )
    export_mod.write_obj(args.output, cloud.points, colors)
    print(f"wrote {len(cloud.points)} vertices to {args.output}")
    return 0


def cmd_convert(args):
    cloud = convert(args.src, args.dst, args.format, args.task, args.points, args.seed, args.label, args.point_labels)
    print(f"wrote {args.dst}: {cloud.points.shape[0]} points x {cloud.points.shape[1]} attributes")
    return 0


def cmd_gradcheck(args):
    results = gradcheck.run_all(seed=args.seed, include_models=not args.ops_only)
    text = gradcheck.format_report(results)
    sys.stdout.write(text)
    if args.report:
        Path(args.report).write_text(text)
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise CheckFailure(f"gradient check failed for: {', '.join(failed)}")
    return 0


def cmd_sweep_k(args):
    if args.task != "classification":
        raise ConfigError("sweep-k is defined for the classification task")
    train_set, test_set = load_splits(data_root(args))
    values = []
    for tok in str(args.k).split(","):
        tok = tok.strip()
        values.append("auto" if parse_k(tok) == CEIL_RULE else int(tok))
    cfg = model_config(args, train_set, k_rule=CEIL_RULE)
    rows = sweep_k(cfg, run_config(args), train_set, test_set, values)
    sys.stdout.write(format_sweep(rows))
    best_auto = choose_k(cfg.stem_widths[-1])
    print(f"ceil(F/4) resolves to k={best_auto} at the first GEM")
    if args.report:
        Path(args.report).write_text(json.dumps(rows, indent=1) + "\n")
    return 0


def cmd_synth(args):
    full = make_synthetic(args.task, per_class=args.per_class, n_points=args.points, seed=args.seed)
    train_set, test_set = split_dataset(full)
    write_dataset(args.out, train_set, "train")
    write_dataset(args.out, test_set, "test")
    print(f"wrote {len(train_set.clouds)} train and {len(test_set.clouds)} test clouds to {args.out}")
    return 0


def cmd_report(args):
    records = read_log(args.log)
    if not records:
        raise DataError(f"{args.log}: no readable records")
    print(f"{'epoch':>5} {'loss':>8} {'train acc':>10} {'test acc':>9} {'test mIoU':>10}")
    for r in records:
        tr, te = r.get("train") or {}, r.get("test") or {}
        print(
            f"{r['epoch']:>5} {r['loss']:>8.4f} {_cell(tr, 'overall_accuracy'):>10} "
            f"{_cell(te, 'overall_accuracy'):>9} {_cell(te, 'miou'):>10}"
        )
    return 0


def _cell(d, key):
    v = d.get(key)
    return "-" if v is None else f"{v:.4f}"


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "export": cmd_export,
    "convert": cmd_convert,
    "gradcheck": cmd_gradcheck,
    "sweep-k": cmd_sweep_k,
    "synth": cmd_synth,
    "report": cmd_report,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except PyramNetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())

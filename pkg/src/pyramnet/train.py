"""Training, evaluation and the k-sweep experiment."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from . import tensor as T
from .data.batching import batches
from .errors import ConfigError, DataError
from .metrics import MetricReport, metrics
from .model import CEIL_RULE, ModelConfig, PyramNet, loss

log = logging.getLogger(__name__)


@dataclass
class RunConfig:
    """Training-run settings. Defaults are the full-scale training protocol."""

    epochs: int = 300
    batch_size: int = 32
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    bn_decay_start: float = 0.5
    bn_decay_max: float = 0.999
    bn_decay_halflife: float = 20.0
    dropout_keep: float = 0.65
    augment: bool = True
    eval_every: int = 5
    checkpoint_every: int = 5
    seed: int = 0
    f64: bool = False
    bn_refresh: bool = False

    def to_text(self):
        return "".join(f"{k}={v}\n" for k, v in asdict(self).items())

    @property
    def dtype(self):
        return np.float64 if self.f64 else np.float32

    def bn_decay(self, epoch):
        return T.bn_decay_schedule(epoch, self.bn_decay_start, self.bn_decay_max, self.bn_decay_halflife)


@dataclass
class TrainResult:
    model: PyramNet
    adam: T.AdamState
    history: list = field(default_factory=list)
    final_train: MetricReport | None = None
    final_test: MetricReport | None = None
    best_epoch: int = -1
    best_score: float = float("-inf")


def headline(report):
    """Score used to pick the best checkpoint: accuracy or mIoU."""
    return report.overall_accuracy if report.task == "classification" else report.miou


def check_compatible(config, dataset):
    if dataset.task != config.task:
        raise ConfigError(f"dataset task {dataset.task!r} does not match model task {config.task!r}")
    if dataset.num_classes != config.num_classes:
        raise ConfigError(
            f"dataset has {dataset.num_classes} classes, model expects {config.num_classes}"
        )
    if dataset.clouds:
        n, f = dataset.clouds[0].points.shape
        if (n, f) != (config.n_points, config.in_channels):
            raise ConfigError(
                f"dataset clouds are {n} x {f}, model expects {config.n_points} x {config.in_channels}"
            )


def predict_dataset(model, dataset, batch_size=32):
    preds = []
    for pts, _ in batches(dataset, batch_size, dtype=model.dtype):
        preds.append(model.predict(pts))
    return np.concatenate(preds)


def evaluate(model, dataset, batch_size=32):
    """Inference-mode metrics over a whole dataset."""
    start = time.perf_counter()
    pred = predict_dataset(model, dataset, batch_size)
    if dataset.task == "classification":
        labels = np.array([c.cloud_label for c in dataset.clouds])
    else:
        labels = np.stack([c.point_labels for c in dataset.clouds])
    report = metrics(
        pred,
        labels,
        dataset.task,
        model.config.num_classes,
        categories=[c.cloud_label for c in dataset.clouds],
        category_parts=dataset.category_parts,
        class_names=dataset.class_names,
    )
    report.seconds = time.perf_counter() - start
    return report


def refresh_bn_stats(model, dataset, batch_size=32):
    """Recompute every running mean/variance as an equal-weight average over the dataset.

    Runs training-mode forward passes in dataset order without augmentation or
    dropout, so the stored statistics match the current weights. The scheduled
    decay of each layer is restored afterwards.
    """
    states = model.bn_states()
    decays = {n: s.decay for n, s in states.items()}
    keep = model.config.dropout_keep
    model.config.dropout_keep = 1.0
    try:
        i = 0
        for pts, _ in batches(dataset, batch_size, dtype=model.dtype):
            if len(pts) < 2 and model.config.task == "classification":
                continue
            for s in states.values():
                s.decay = i / (i + 1)
            model.forward(pts, training=True)
            i += 1
    finally:
        model.config.dropout_keep = keep
        for n, s in states.items():
            s.decay = decays[n]


def _append_line(path, record):
    path = Path(path)
    # a truncated previous write leaves no newline; isolate it so readers can skip it
    prefix = ""
    if path.exists() and path.stat().st_size:
        with open(path, "rb") as fh:
            fh.seek(-1, 2)
            if fh.read(1) != b"\n":
                prefix = "\n"
    with open(path, "a") as fh:
        fh.write(prefix + json.dumps(record, sort_keys=True) + "\n")


def read_log(path):
    """Parse a line-delimited training log, skipping malformed (e.g. truncated) lines."""
    records = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError:
            continue
    return records


def train(
    model_config,
    run,
    train_set,
    test_set=None,
    checkpoint_path=None,
    log_path=None,
    resume=False,
    on_epoch=None,
):
    """Train a PyramNet and return the final model plus its history."""
    check_compatible(model_config, train_set)
    if test_set is not None:
        check_compatible(model_config, test_set)
    if not train_set.clouds:
        raise DataError("training split is empty")
    model_config.dropout_keep = run.dropout_keep
    model = PyramNet(model_config, dtype=run.dtype)
    adam = T.AdamState(lr=run.lr, beta1=run.beta1, beta2=run.beta2, epsilon=run.epsilon)
    result = TrainResult(model, adam)
    start_epoch = 0
    if resume and checkpoint_path and Path(checkpoint_path).exists():
        ck = ckpt_io.load(checkpoint_path)
        ckpt_io.restore(model, ck, adam)
        start_epoch = int(ck.state.get("epoch", -1)) + 1
        result.best_epoch = int(ck.state.get("best_epoch", -1))
        result.best_score = float(ck.state.get("best_score", "-inf"))
        log.info("resumed from %s at epoch %d", checkpoint_path, start_epoch)

    params = model.parameters()
    for epoch in range(start_epoch, run.epochs):
        t0 = time.perf_counter()
        decay = run.bn_decay(epoch)
        model.set_bn_decay(decay)
        total, seen = 0.0, 0
        for step, (pts, labels) in enumerate(
            batches(train_set, run.batch_size, shuffle=True, seed=run.seed, epoch=epoch, augment=run.augment, dtype=run.dtype)
        ):
            if len(pts) < 2 and model_config.task == "classification":
                continue  # batch statistics of a single sample are undefined
            rng = np.random.default_rng([run.seed, epoch, step])
            trace = model.forward(pts, training=True, rng=rng)
            l = loss(trace.logits, labels, model_config.task)
            model.zero_grad()
            l.backward()
            T.adam_step(params, {n: p.grad for n, p in params.items()}, adam)
            total += float(l.data) * len(pts)
            seen += len(pts)
        record = {"epoch": epoch, "loss": total / max(seen, 1), "bn_decay": decay}
        last = epoch == run.epochs - 1
        evaluating = last or (run.eval_every > 0 and (epoch + 1) % run.eval_every == 0)
        saving = checkpoint_path and (last or (run.checkpoint_every > 0 and (epoch + 1) % run.checkpoint_every == 0))
        if run.bn_refresh and (evaluating or saving):
            refresh_bn_stats(model, train_set, run.batch_size)
        if evaluating:
            tr_rep = evaluate(model, train_set, run.batch_size)
            tr_rep.epoch = epoch
            record["train"] = tr_rep.to_dict()
            result.final_train = tr_rep
            score = headline(tr_rep)
            if test_set is not None and test_set.clouds:
                te_rep = evaluate(model, test_set, run.batch_size)
                te_rep.epoch = epoch
                record["test"] = te_rep.to_dict()
                result.final_test = te_rep
                score = headline(te_rep)
            if score > result.best_score:
                result.best_score, result.best_epoch = score, epoch
                if checkpoint_path:
                    ckpt_io.save(_best_path(checkpoint_path), model, adam, _state(run, epoch, result))
        record["seconds"] = time.perf_counter() - t0
        result.history.append(record)
        if log_path:
            _append_line(log_path, record)
        if saving:
            ckpt_io.save(checkpoint_path, model, adam, _state(run, epoch, result))
        log.info("epoch %d loss %.4f", epoch, record["loss"])
        if on_epoch is not None:
            on_epoch(record)
    return result


def _best_path(path):
    path = Path(path)
    return path.with_name(path.stem + ".best" + path.suffix)


def _state(run, epoch, result):
    return {
        "epoch": epoch,
        "seed": run.seed,
        "best_epoch": result.best_epoch,
        "best_score": repr(float(result.best_score)),
    }


def sweep_k(model_config, run, train_set, test_set=None, k_values=("auto",)):
    """Train one model per k value on shared data and seed; return (k, accuracy) rows.

    ``"auto"`` stands for the ceil(F/4) rule. Accuracy is measured on the
    held-out split when one is given.
    """
    if model_config.task != "classification":
        raise ConfigError("sweep-k is defined for the classification task")
    rows = []
    for k in k_values:
        if k != "auto" and int(k) >= model_config.n_points:
            raise ConfigError(f"k={k} must be smaller than N={model_config.n_points}")
    for k in k_values:
        cfg = ModelConfig.from_dict(_as_raw(model_config))
        cfg.k_rule = CEIL_RULE if k == "auto" else f"fixed:{int(k)}"
        res = train(cfg, run, train_set, test_set)
        rep = res.final_test or res.final_train
        label = "ceil(F/4)" if k == "auto" else str(int(k))
        rows.append({"k": label, "overall_accuracy": rep.overall_accuracy,
                     "train_accuracy": res.final_train.overall_accuracy})
    return rows


def _as_raw(cfg):
    raw = {}
    for line in cfg.to_text().splitlines():
        key, _, value = line.partition("=")
        raw[key] = value
    return raw


def format_sweep(rows):
    lines = [f"{'k':<10} {'Accuracy Overall':>16}"]
    lines += [f"{r['k']:<10} {100 * r['overall_accuracy']:>16.1f}" for r in rows]
    return "\n".join(lines) + "\n"


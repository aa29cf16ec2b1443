"""Finite-difference verification of every differentiable operator.

Each registered check builds small random float64 inputs, back-propagates
the scalar ``sum(out * R)`` for a fixed random ``R`` and compares the result
with central differences (step 1e-5). The error of one input is
``|analytic - numeric| / max(|analytic|, |numeric|, 1e-5)`` in the 2-norm,
and an op's score is the maximum over its inputs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .gem import covariance_matrix, gem_forward
from .model import ModelConfig, PyramNet, loss
from .pan import PanBranch, PyramidAttention, PyramidConfig, pan_collapse, pan_forward

STEP = 1e-5
# whole-model probes move thousands of ReLU inputs at once, so a stencil can
# straddle a kink; steps shrink until both one-sided differences agree
MODEL_STEPS = (1e-5, 1e-6, 1e-7)
OP_TOL = 1e-4
MODEL_TOL = 1e-3
FLOOR = 1e-5  # rounding noise of the central difference is ~1e-10


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    tolerance: float
    seconds: float = 0.0

    @property
    def passed(self):
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error < self.tolerance)


def rel_error(analytic, numeric):
    a, n = np.ravel(analytic), np.ravel(numeric)
    scale = max(np.linalg.norm(a), np.linalg.norm(n), FLOOR)
    return float(np.linalg.norm(a - n) / scale)


def check_function(fn, inputs, rng, entries=None):
    """Compare backward() with central differences for ``fn(*inputs)``.

    ``entries`` limits each input to that many sampled coordinates (the
    largest-gradient half plus a random half); None checks every coordinate.
    """
    out = fn(*inputs)
    weights = rng.standard_normal(out.shape)

    def scalar():
        return float(np.sum(fn(*inputs).data * weights))

    for x in inputs:
        x.grad = None
    T.sum_(T.mul(out, weights)).backward()
    worst = 0.0
    for x in inputs:
        analytic = np.zeros_like(x.data) if x.grad is None else x.grad
        flat = x.data.reshape(-1)
        if entries is None or entries >= flat.size:
            coords = np.arange(flat.size)
        else:
            top = np.argsort(-np.abs(analytic.reshape(-1)), kind="stable")[: entries // 2]
            extra = rng.choice(flat.size, size=entries - len(top), replace=False)
            coords = np.unique(np.concatenate([top, extra]))
        numeric = np.empty(len(coords))
        for j, c in enumerate(coords):
            keep = flat[c]
            flat[c] = keep + STEP
            up = scalar()
            flat[c] = keep - STEP
            down = scalar()
            flat[c] = keep
            numeric[j] = (up - down) / (2 * STEP)
        worst = max(worst, rel_error(analytic.reshape(-1)[coords], numeric))
    return worst


def _leaf(data):
    return T.Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


def _away_from_zero(rng, shape, gap=0.1):
    mag = rng.uniform(gap, 1.0, size=shape)
    return mag * rng.choice([-1.0, 1.0], size=shape)


# operator checks -----------------------------------------------------------------
# each returns (fn, inputs, entries)

def _op_add(rng):
    return T.add, [_leaf(rng.standard_normal((3, 4))), _leaf(rng.standard_normal(4))], None


def _op_mul(rng):
    return T.mul, [_leaf(rng.standard_normal((3, 4))), _leaf(rng.standard_normal((3, 1)))], None


def _op_div(rng):
    return T.div, [_leaf(rng.standard_normal((3, 4))), _leaf(rng.uniform(0.5, 2.0, (3, 4)))], None


def _op_sqrt(rng):
    return T.sqrt, [_leaf(rng.uniform(0.5, 2.0, (3, 4)))], None


def _op_matmul(rng):
    return T.matmul, [_leaf(rng.standard_normal((2, 3, 4))), _leaf(rng.standard_normal((4, 5)))], None


def _op_pointwise_linear(rng):
    x, w, b = rng.standard_normal((5, 3)), rng.standard_normal((3, 7)), rng.standard_normal(7)
    return T.pointwise_linear, [_leaf(x), _leaf(w), _leaf(b)], None


def _op_reshape_transpose(rng):
    return (lambda x: T.transpose(T.reshape(x, (3, 2, 4)), (2, 0, 1))), [_leaf(rng.standard_normal((6, 4)))], None


def _op_concat(rng):
    return (lambda a, b: T.concat([a, b], axis=1)), [
        _leaf(rng.standard_normal((3, 2))),
        _leaf(rng.standard_normal((3, 5))),
    ], None


def _op_sum_mean(rng):
    return (lambda x: T.add(T.sum_(x, axis=0), T.mean(x, axis=0))), [_leaf(rng.standard_normal((4, 3)))], None


def _op_relu(rng):
    return T.relu, [_leaf(_away_from_zero(rng, (4, 5)))], None


def _op_max_pool(rng):
    return (lambda x: T.max_pool_over_points(x, axis=1)), [_leaf(rng.standard_normal((2, 6, 3)))], None


def _op_global_avg_pool(rng):
    return (lambda x: T.global_avg_pool(x, axis=1)), [_leaf(rng.standard_normal((2, 5, 3)))], None


def _op_dropout(rng):
    seed = int(rng.integers(1 << 30))
    return (lambda x: T.dropout(x, 0.65, True, np.random.default_rng(seed))), [
        _leaf(rng.standard_normal((4, 6)))
    ], None


def _op_cross_entropy(rng):
    labels = rng.integers(0, 4, size=(3, 5))
    return (lambda z: T.softmax_cross_entropy(z, labels)), [_leaf(rng.standard_normal((3, 5, 4)))], None


def _op_batch_norm_train(rng):
    st = T.BatchNormState.create(3, np.float64)
    st.gamma = _leaf(rng.uniform(0.5, 1.5, 3))
    st.beta = _leaf(rng.standard_normal(3))
    return (lambda x, g, b: T.batch_norm(x, st, True)), [_leaf(rng.standard_normal((4, 3))), st.gamma, st.beta], None


def _op_batch_norm_eval(rng):
    st = T.BatchNormState.create(3, np.float64)
    st.running_mean = rng.standard_normal(3)
    st.running_var = rng.uniform(0.5, 2.0, 3)
    st.gamma = _leaf(rng.uniform(0.5, 1.5, 3))
    st.beta = _leaf(rng.standard_normal(3))
    return (lambda x, g, b: T.batch_norm(x, st, False)), [_leaf(rng.standard_normal((4, 3))), st.gamma, st.beta], None


def _op_conv2d(rng):
    return (lambda x, k: T.conv2d(x, k, (2, 2))), [
        _leaf(rng.standard_normal((8, 8, 2))),
        _leaf(rng.standard_normal((3, 3, 2, 4))),
    ], None


def _op_bilinear_resize(rng):
    return (lambda x: T.bilinear_resize(x, (7, 5))), [_leaf(rng.standard_normal((2, 3, 2, 3)))], None


def _op_gather_rows(rng):
    idx = rng.integers(0, 5, size=(2, 5, 3))
    return (lambda x: T.gather_rows(x, idx)), [_leaf(rng.standard_normal((2, 5, 4)))], None


def _op_neighbor_mean(rng):
    idx = np.stack([rng.permutation(5)[:3] for _ in range(10)]).reshape(2, 5, 3)
    return (lambda x: T.neighbor_mean(x, idx)), [_leaf(rng.standard_normal((2, 5, 4)))], None


def _op_covariance(rng):
    return covariance_matrix, [_leaf(rng.standard_normal((2, 6, 5)))], None


def _op_gem(rng):
    x = _leaf(rng.standard_normal((2, 7, 1, 8)))
    _, adj = gem_forward(x, return_adjacency=True)
    return (lambda t: gem_forward(t, adjacency=adj)), [x], None


def _op_pan_branch(rng):
    branch = PanBranch(3, 2, 4, rng, np.float64, std=0.5)
    branch.bias.data = rng.standard_normal(4) * 0.1
    return (lambda x, k, b: branch(x, True)), [_leaf(rng.standard_normal((2, 6, 8))), branch.kernel, branch.bias], None


def _op_pan_forward(rng):
    cfg = PyramidConfig(branch_strides=(1, 2, 3, 5))
    pan = PyramidAttention(cfg, rng, np.float64)
    for b in pan.branches:
        b.kernel.data *= 5.0
    return (lambda x: pan_forward(x, pan, True)), [_leaf(rng.standard_normal((2, 6, 8)))], None


def _op_pan_collapse(rng):
    return pan_collapse, [_leaf(rng.standard_normal((2, 6, 8, 4)))], None


OPS = {
    "add": _op_add,
    "mul": _op_mul,
    "div": _op_div,
    "sqrt": _op_sqrt,
    "matmul": _op_matmul,
    "pointwise_linear": _op_pointwise_linear,
    "reshape_transpose": _op_reshape_transpose,
    "concat": _op_concat,
    "sum_mean": _op_sum_mean,
    "relu": _op_relu,
    "max_pool_over_points": _op_max_pool,
    "global_avg_pool": _op_global_avg_pool,
    "dropout": _op_dropout,
    "softmax_cross_entropy": _op_cross_entropy,
    "batch_norm_train": _op_batch_norm_train,
    "batch_norm_eval": _op_batch_norm_eval,
    "conv2d": _op_conv2d,
    "bilinear_resize": _op_bilinear_resize,
    "gather_rows": _op_gather_rows,
    "neighbor_mean": _op_neighbor_mean,
    "covariance_matrix": _op_covariance,
    "gem_forward": _op_gem,
    "pan_branch": _op_pan_branch,
    "pan_forward": _op_pan_forward,
    "pan_collapse": _op_pan_collapse,
}


# end-to-end model checks ----------------------------------------------------------

def tiny_config(task="classification", n=8, f=3, p=3, **kw):
    kw.setdefault("k_rule", "fixed:3")
    return ModelConfig(task=task, n_points=n, in_channels=f, num_classes=p, free_form=True, **kw)


def check_model(config, batch, training, seed=0, entries=6):
    """Gradient check of the cross-entropy loss w.r.t. every parameter tensor.

    Each parameter tensor is probed at ``entries`` coordinates. GEM
    selections and the dropout mask are frozen after the first forward pass.
    Biases and batch-norm offsets start at random non-zero values: with zero
    offsets, exact zeros coming out of one ReLU land exactly on the kink of
    the next, where only one-sided derivatives exist.
    """
    rng = np.random.default_rng(seed)
    model = PyramNet(config, dtype=np.float64)
    for name, p in model.parameters().items():
        if name.endswith(("bias", ".b", "beta")):
            p.data = rng.uniform(0.05, 0.2, p.shape) * rng.choice([-1.0, 1.0], p.shape)
    pts = rng.uniform(-1, 1, (batch, config.n_points, config.in_channels))
    shape = (batch,) if config.task == "classification" else (batch, config.n_points)
    labels = rng.integers(0, config.num_classes, size=shape)
    selections = {}
    params = model.parameters()
    names = list(params)

    def f(*_):
        tr = model.forward(pts, training=training, rng=np.random.default_rng(seed), selections=selections)
        return loss(tr.logits, labels)

    f()  # populate the frozen selections
    worst = 0.0
    probe = np.random.default_rng(seed + 1)
    model.zero_grad()
    l = f()
    l.backward()
    analytic = {n: params[n].grad.copy() for n in names}
    for name in names:
        p = params[name]
        flat = p.data.reshape(-1)
        g = analytic[name].reshape(-1)
        k = min(entries, flat.size)
        top = np.argsort(-np.abs(g), kind="stable")[: k // 2]
        extra = probe.choice(flat.size, size=k - len(top), replace=False)
        coords = np.unique(np.concatenate([top, extra]))
        numeric = np.array([smooth_difference(f, flat, c) for c in coords])
        worst = max(worst, rel_error(g[coords], numeric))
    return worst


def smooth_difference(f, flat, c, agree=1e-3):
    """Central difference of ``f`` along ``flat[c]`` at the largest kink-free step.

    A step is accepted when the forward and backward one-sided differences
    agree to ``agree`` relative; otherwise the next smaller step is tried.
    """
    keep = flat[c]
    mid = float(f().data)
    for h in MODEL_STEPS:
        flat[c] = keep + h
        up = float(f().data)
        flat[c] = keep - h
        down = float(f().data)
        flat[c] = keep
        fwd, bwd = (up - mid) / h, (mid - down) / h
        if abs(fwd - bwd) <= agree * max(abs(fwd), abs(bwd), FLOOR):
            break
    return (up - down) / (2 * h)


MODELS = {
    "model_classification_b1": lambda seed: check_model(tiny_config(), 1, False, seed),
    "model_classification_b2_n16_train": lambda seed: check_model(tiny_config(n=16), 2, True, seed),
    "model_part_seg_b1_train": lambda seed: check_model(tiny_config("part_seg"), 1, True, seed),
}


def run_all(seed=0, include_models=True):
    """Run every registered check; returns a list of :class:`CheckResult`."""
    results = []
    with T.default_dtype(np.float64):
        for name, build in OPS.items():
            t0 = time.perf_counter()
            rng = np.random.default_rng([seed, len(results)])
            fn, inputs, entries = build(rng)
            err = check_function(fn, inputs, rng, entries)
            results.append(CheckResult(name, err, OP_TOL, time.perf_counter() - t0))
        if include_models:
            for name, fn in MODELS.items():
                t0 = time.perf_counter()
                results.append(CheckResult(name, fn(seed), MODEL_TOL, time.perf_counter() - t0))
    return results


def format_report(results):
    lines = [f"{'check':<32} {'max rel err':>12} {'tol':>8}  status"]
    for r in results:
        lines.append(
            f"{r.name:<32} {r.max_rel_error:>12.3e} {r.tolerance:>8.0e}  {'PASS' if r.passed else 'FAIL'}"
        )
    failed = [r.name for r in results if not r.passed]
    lines.append(f"{len(results) - len(failed)}/{len(results)} passed" + (f"; failed: {', '.join(failed)}" if failed else ""))
    return "\n".join(lines) + "\n"

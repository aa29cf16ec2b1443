"""End-to-end acceptance checks, one test per criterion.

Each test carries a ``criterion`` marker; the session ends with one
PASS/FAIL line per criterion (see ``conftest.py``). Runtime budgets are
asserted inside the tests.
"""

import json
import math
import time

import numpy as np
import pytest

from oracles import brute_gem
from pyramnet import checkpoint as ckpt_io
from pyramnet import gradcheck
from pyramnet import tensor as T
from pyramnet.cli import main
from pyramnet.data import make_synthetic, split_dataset
from pyramnet.gem import choose_k, gem_forward
from pyramnet.model import ModelConfig, PyramNet, loss
from pyramnet.train import RunConfig, train

# desk-scale training protocol shared by the two overfit experiments
OVERFIT_RUN = dict(batch_size=16, bn_refresh=True, eval_every=10)


def synthetic_classification():
    return split_dataset(make_synthetic("classification", per_class=32, n_points=256, seed=0))


def small_config(task="classification", n=256, p=4, **kw):
    return ModelConfig(task=task, n_points=n, in_channels=3, num_classes=p, free_form=True, **kw)


def reference_trace_shapes(task):
    n, f, p = {"classification": (1024, 3, 40), "part_seg": (2048, 3, 50), "scene_seg": (4096, 9, 13)}[task]
    head = 1088 + (256 if task == "classification" else 448)
    return {
        "input": (1, n, f),
        "post-mlp1": (1, n, 1, 32),
        "post-gem1": (1, n, 1, 64),
        "splice": (1, n, 64),
        "mlp-top": (1, n, 1, 512),
        "pan-out": (1, n, 64, 32),
        "pan-gap": (1, n, 1, 32),
        "concat": (1, n, 1, 544),
        "post-gem2": (1, n, 1, 1088),
        "head-in": (1, n, 1, head),
        "logits": (1, p) if task == "classification" else (1, n, p),
    }


@pytest.mark.criterion(1, "gradient suite", 120)
def test_criterion_1_gradient_suite(record_property):
    start = time.perf_counter()
    results = gradcheck.run_all(seed=0)
    elapsed = time.perf_counter() - start
    worst_op = max(r.max_rel_error for r in results if not r.name.startswith("model_"))
    worst_model = max(r.max_rel_error for r in results if r.name.startswith("model_"))
    record_property("detail", f"{len(results)} checks, worst op {worst_op:.1e}, worst model {worst_model:.1e}")
    assert all(r.passed for r in results), gradcheck.format_report(results)
    assert worst_op < 1e-4 and worst_model < 1e-3
    # the B=1, N=8, F=3, P=3 end-to-end model
    tiny = {r.name: r for r in results}["model_classification_b1"]
    assert tiny.max_rel_error < 1e-3
    assert elapsed < 120


@pytest.mark.criterion(2, "GEM oracle equivalence", 30)
def test_criterion_2_gem_oracle(record_property):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        x = rng.standard_normal((int(rng.integers(2, 7)), int(rng.integers(1, 6))))
        out, adj = gem_forward(T.Tensor(x, dtype=np.float64), return_adjacency=True)
        expected, idx = brute_gem(x)
        np.testing.assert_array_equal(adj.indices, idx)
        worst = max(worst, float(np.abs(out.data - expected).max()))
    record_property("detail", f"max abs deviation {worst:.1e}")
    assert worst <= 1e-6
    assert time.perf_counter() - start < 30


@pytest.mark.criterion(3, "shape-chain conformance", 60)
def test_criterion_3_shape_chain(record_property):
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    for task in ("classification", "part_seg", "scene_seg"):
        model = PyramNet(ModelConfig.reference(task))
        cfg = model.config
        trace = model.forward(rng.standard_normal((1, cfg.n_points, cfg.in_channels)).astype(np.float32))
        assert dict(trace.shapes()) == reference_trace_shapes(task), task
        assert trace["concat"].shape[-1] == 544 and trace["pan-out"].shape[-2:] == (64, 32)
    record_property("detail", "classification, part_seg, scene_seg")
    assert time.perf_counter() - start < 60


@pytest.mark.criterion(4, "permutation properties", 120)
def test_criterion_4_permutation(record_property):
    start = time.perf_counter()
    rng = np.random.default_rng(4)
    trials = 0
    while trials < 100:
        n, f = int(rng.integers(3, 12)), int(rng.integers(2, 9))
        x = rng.standard_normal((n, f))
        rows = np.sort(np.cov(x, bias=True)[~np.eye(n, dtype=bool)].reshape(n, n - 1), axis=1)
        if np.diff(rows, axis=1).min() < 1e-9:
            continue  # near-tie within a row: the selection is not well defined under rounding
        trials += 1
        perm = rng.permutation(n)
        out, adj = gem_forward(T.Tensor(x, dtype=np.float64), return_adjacency=True)
        pout, padj = gem_forward(T.Tensor(x[perm], dtype=np.float64), return_adjacency=True)
        assert np.abs(pout.data - out.data[perm]).max() <= 1e-9
        for new_i, old_i in enumerate(perm):
            assert {int(perm[j]) for j in padj.indices[new_i]} == {int(j) for j in adj.indices[old_i]}

    cfg = ModelConfig.reference("classification", enable_pan=False)
    model = PyramNet(cfg, dtype=np.float64)
    x = rng.standard_normal((1, 1024, 3))
    base = model.forward(x).logits.data
    for _ in range(3):
        out = model.forward(x[:, rng.permutation(1024)]).logits.data
        assert np.abs(out - base).max() <= 1e-9

    model = PyramNet(ModelConfig.reference("classification"), dtype=np.float64)
    base = model.forward(x).logits.data
    changed = max(np.abs(model.forward(x[:, rng.permutation(1024)]).logits.data - base).max() for _ in range(3))
    record_property("detail", f"100 GEM trials; PAN-on logit change {changed:.1e}")
    assert changed > 1e-9
    assert time.perf_counter() - start < 120


@pytest.mark.criterion(5, "synthetic classification overfit", 1800)
def test_criterion_5_classification_overfit(record_property):
    start = time.perf_counter()
    train_set, test_set = synthetic_classification()
    assert len(train_set) + len(test_set) == 128
    run = RunConfig(epochs=50, **OVERFIT_RUN)
    full = train(small_config(), run, train_set, test_set)
    base = train(small_config(enable_gem=False, enable_pan=False), run, train_set, test_set)
    tr, te = full.final_train.overall_accuracy, full.final_test.overall_accuracy
    btr = base.final_train.overall_accuracy
    record_property(
        "detail",
        f"full train {tr:.3f} held-out {te:.3f} (best epoch {full.best_epoch}); baseline train {btr:.3f}",
    )
    assert tr >= 0.95 and te >= 0.85
    assert btr >= 0.90
    assert time.perf_counter() - start < 1800


@pytest.mark.criterion(6, "synthetic part segmentation overfit", 1800)
def test_criterion_6_part_segmentation_overfit(record_property):
    start = time.perf_counter()
    data = make_synthetic("part_seg", per_class=16, n_points=512, seed=0)
    cfg = small_config(task="part_seg", n=512, p=data.num_classes)
    res = train(cfg, RunConfig(epochs=40, **OVERFIT_RUN), data)
    miou = res.final_train.miou
    record_property("detail", f"train mIoU {miou:.3f} over {len(data)} shapes")
    assert miou >= 0.90
    assert time.perf_counter() - start < 1800


@pytest.mark.criterion(7, "k-rule conformance and sweep", 2700)
def test_criterion_7_k_rule(tmp_path, capsys, record_property):
    start = time.perf_counter()
    assert (choose_k(32), choose_k(544), choose_k(4)) == (8, 136, 1)
    data = tmp_path / "synthetic"
    assert main(["synth", "--out", str(data), "--per-class", "32", "--points", "256"]) == 0
    report = tmp_path / "sweep.json"
    code = main(["sweep-k", "--data", str(data), "--k", "20,30,auto", "--epochs", "3", "--report", str(report)])
    assert code == 0
    rows = json.loads(report.read_text())
    assert [r["k"] for r in rows] == ["20", "30", "ceil(F/4)"]
    assert all(0.0 <= r["overall_accuracy"] <= 1.0 for r in rows)
    record_property("detail", ", ".join(f"k={r['k']}: {r['overall_accuracy']:.3f}" for r in rows))
    assert time.perf_counter() - start < 2700


@pytest.mark.criterion(8, "initialization sanity", 60)
def test_criterion_8_initial_loss(record_property):
    start = time.perf_counter()
    details = []
    for task, batch in (("classification", 4), ("part_seg", 1), ("scene_seg", 1)):
        values = []
        for seed in range(10):
            model = PyramNet(ModelConfig.reference(task, seed=seed))
            cfg = model.config
            rng = np.random.default_rng(seed)
            x = rng.standard_normal((batch, cfg.n_points, cfg.in_channels)).astype(np.float32)
            shape = (batch,) if task == "classification" else (batch, cfg.n_points)
            labels = rng.integers(0, cfg.num_classes, shape)
            values.append(float(loss(model.forward(x).logits, labels, task).data))
        gap = abs(np.mean(values) - math.log(cfg.num_classes))
        details.append(f"{task} {gap:.4f}")
        assert gap < 0.1, task
    record_property("detail", "gap to ln P: " + ", ".join(details))
    assert time.perf_counter() - start < 60


@pytest.mark.criterion(9, "reproducibility", 300)
def test_criterion_9_reproducibility(tmp_path, record_property):
    start = time.perf_counter()
    train_set, _ = synthetic_classification()
    run = RunConfig(epochs=1, f64=True, eval_every=0)
    a = train(small_config(), run, train_set, checkpoint_path=tmp_path / "a.pyrn")
    b = train(small_config(), run, train_set, checkpoint_path=tmp_path / "b.pyrn")
    assert a.history[0]["loss"] == b.history[0]["loss"]
    blob = (tmp_path / "a.pyrn").read_bytes()
    assert blob == (tmp_path / "b.pyrn").read_bytes()
    ckpt_io.load(tmp_path / "a.pyrn")
    record_property("detail", f"epoch-0 loss {a.history[0]['loss']!r}, checkpoint {len(blob)} bytes")
    assert time.perf_counter() - start < 300

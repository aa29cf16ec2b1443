from pathlib import Path

import numpy as np
import pytest

from pyramnet import checkpoint as ckpt_io
from pyramnet import tensor as T
from pyramnet.errors import CheckpointError
from pyramnet.model import ModelConfig, PyramNet, loss


def small(p=4, **kw):
    return ModelConfig(task="classification", n_points=16, in_channels=3, num_classes=p, free_form=True, **kw)


def trained_model(rng, dtype=np.float64):
    model = PyramNet(small(), dtype=dtype)
    adam = T.AdamState()
    params = model.parameters()
    for _ in range(2):
        trace = model.forward(rng.standard_normal((4, 16, 3)), training=True, rng=rng)
        model.zero_grad()
        loss(trace.logits, rng.integers(0, 4, 4)).backward()
        T.adam_step(params, {n: p.grad for n, p in params.items()}, adam)
    return model, adam


class TestRoundTrip:
    def test_eval_outputs_identical(self, tmp_path, rng):
        model, adam = trained_model(rng)
        x = rng.standard_normal((3, 16, 3))
        before = model.forward(x).logits.data
        ckpt_io.save(tmp_path / "m.pyrn", model, adam, {"epoch": 4})
        loaded, ck = ckpt_io.load_model(tmp_path / "m.pyrn")
        assert loaded.dtype == np.float64
        assert np.array_equal(loaded.forward(x).logits.data, before)
        assert ck.state["epoch"] == "4"

    def test_config_and_adam_restored(self, tmp_path, rng):
        model, adam = trained_model(rng)
        ckpt_io.save(tmp_path / "m.pyrn", model, adam)
        ck = ckpt_io.load(tmp_path / "m.pyrn")
        assert ck.config == model.config
        fresh = PyramNet(ck.config, dtype=np.float64)
        adam2 = T.AdamState()
        ckpt_io.restore(fresh, ck, adam2)
        assert adam2.t == adam.t == 2
        for name in adam.m:
            assert np.array_equal(adam2.m[name], adam.m[name])
            assert np.array_equal(adam2.v[name], adam.v[name])

    def test_bn_statistics_restored(self, tmp_path, rng):
        model, _ = trained_model(rng)
        ckpt_io.save(tmp_path / "m.pyrn", model)
        loaded, _ = ckpt_io.load_model(tmp_path / "m.pyrn")
        for name, st in model.bn_states().items():
            assert np.array_equal(loaded.bn_states()[name].running_var, st.running_var)

    def test_magic_and_version(self, tmp_path, rng):
        model, _ = trained_model(rng)
        blob = ckpt_io.save(tmp_path / "m.pyrn", model).read_bytes()
        assert blob[:4] == b"PYRN" and blob[4:8] == (1).to_bytes(4, "little")

    def test_same_model_same_bytes(self, tmp_path):
        a = ckpt_io.save(tmp_path / "a.pyrn", PyramNet(small(seed=3))).read_bytes()
        b = ckpt_io.save(tmp_path / "b.pyrn", PyramNet(small(seed=3))).read_bytes()
        assert a == b


class TestFailures:
    def test_shape_mismatch_names_parameter(self, tmp_path):
        ckpt_io.save(tmp_path / "p4.pyrn", PyramNet(small(p=4)))
        ck = ckpt_io.load(tmp_path / "p4.pyrn")
        with pytest.raises(CheckpointError, match="logits"):
            ckpt_io.restore(PyramNet(small(p=5)), ck)

    def test_missing_parameter(self, tmp_path):
        ckpt_io.save(tmp_path / "nopan.pyrn", PyramNet(small(enable_pan=False)))
        with pytest.raises(CheckpointError, match="missing"):
            ckpt_io.restore(PyramNet(small()), ckpt_io.load(tmp_path / "nopan.pyrn"))

    @pytest.mark.parametrize("keep", [3, 20, -10])
    def test_truncated_file(self, tmp_path, keep):
        blob = ckpt_io.save(tmp_path / "m.pyrn", PyramNet(small())).read_bytes()
        (tmp_path / "t.pyrn").write_bytes(blob[:keep])
        with pytest.raises(CheckpointError):
            ckpt_io.load(tmp_path / "t.pyrn")

    def test_trailing_bytes(self, tmp_path):
        blob = ckpt_io.save(tmp_path / "m.pyrn", PyramNet(small())).read_bytes()
        (tmp_path / "t.pyrn").write_bytes(blob + b"\0")
        with pytest.raises(CheckpointError, match="trailing"):
            ckpt_io.load(tmp_path / "t.pyrn")

    def test_wrong_magic(self, tmp_path):
        (tmp_path / "x.pyrn").write_bytes(b"NOPE" + bytes(20))
        with pytest.raises(CheckpointError):
            ckpt_io.load(tmp_path / "x.pyrn")

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError, match="not found"):
            ckpt_io.load(tmp_path / "absent.pyrn")

    def test_interrupted_save_keeps_previous_file(self, tmp_path, monkeypatch):
        path = tmp_path / "m.pyrn"
        ckpt_io.save(path, PyramNet(small(seed=1)))
        good = path.read_bytes()
        original = Path.write_bytes

        def crash(self, data):
            original(self, data[: len(data) // 2])
            raise OSError("disk full")

        monkeypatch.setattr(Path, "write_bytes", crash)
        with pytest.raises(OSError):
            ckpt_io.save(path, PyramNet(small(seed=2)))
        monkeypatch.undo()
        assert path.read_bytes() == good
        ckpt_io.load(path)

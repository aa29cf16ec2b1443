import numpy as np
import pytest

from pyramnet import gradcheck
from pyramnet import tensor as T


@pytest.fixture(scope="module")
def results():
    return gradcheck.run_all(seed=0)


class TestGradcheck:
    def test_every_check_passes(self, results):
        failed = [(r.name, r.max_rel_error) for r in results if not r.passed]
        assert not failed

    def test_one_row_per_check(self, results):
        assert len(results) == len(gradcheck.OPS) + len(gradcheck.MODELS)
        text = gradcheck.format_report(results)
        assert len(text.splitlines()) == len(results) + 2
        assert text.rstrip().endswith(f"{len(results)}/{len(results)} passed")

    def test_tolerances(self, results):
        for r in results:
            assert r.tolerance == (1e-3 if r.name.startswith("model_") else 1e-4)

    def test_relative_error_floor(self):
        assert gradcheck.rel_error(np.zeros(3), np.full(3, 1e-9)) < 1e-3
        assert gradcheck.rel_error(np.ones(3), 2 * np.ones(3)) == pytest.approx(0.5)

    def test_corrupted_relu_gradient_is_caught(self, monkeypatch):
        monkeypatch.setattr(T, "_relu_grad", lambda g, x: 0.5 * g * (x > 0))
        out = {r.name: r for r in gradcheck.run_all(seed=0, include_models=False)}
        assert not out["relu"].passed
        assert out["add"].passed
        text = gradcheck.format_report(list(out.values()))
        assert "failed: " in text and "relu" in text.splitlines()[-1]

    def test_other_seed(self):
        assert all(r.passed for r in gradcheck.run_all(seed=3, include_models=False))

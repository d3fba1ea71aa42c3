import math

import numpy as np
import pytest

from rramnet.data import Dataset
from rramnet.nn import ComplexTransfer, LinearTransfer, MlpModel, SinhTransfer, forward
from rramnet.trainer import (
    History,
    NumericalError,
    StaleTraceError,
    TrainConfig,
    backward,
    check_problem,
    grad_check,
    init_weights,
    new_model,
    sgd_step,
    train,
)

# (transfer, finite-difference step, tolerance)
CHECKS = [(LinearTransfer(), 1e-5, 1e-6), (SinhTransfer(4.0), 1e-6, 1e-4),
          (ComplexTransfer(), 1e-6, 1e-4)]


def toy_dataset(n=400, seed=0):
    # two blobs in 8 dims, easily separable
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, n)
    centers = np.array([np.r_[np.full(4, 0.8), np.full(4, 0.2)],
                        np.r_[np.full(4, 0.2), np.full(4, 0.8)]])
    x = np.clip(centers[labels] + rng.normal(0, 0.1, (n, 8)), 0, 1)
    return Dataset(x, labels, (8, 1, 1))


class TestGradients:
    @pytest.mark.parametrize("t, eps, tol", CHECKS, ids=["linear", "sinh", "complex"])
    def test_grad_check(self, t, eps, tol):
        for seed in range(5):
            model, x, y = check_problem(t, seed=seed)
            report = grad_check(model, x, y, eps=eps)
            assert report.passed(tol), str(report)

    def test_check_covers_all_small_matrices(self):
        model, x, y = check_problem(LinearTransfer())
        assert grad_check(model, x, y).checked == [80, 32]

    def test_single_layer_closed_form(self):
        # logits = x @ W, dL/dW = x^T (p - onehot) / n
        rng = np.random.default_rng(2)
        x = rng.uniform(0, 1, (3, 4))
        model = MlpModel([4, 3], [rng.normal(size=(4, 3))])
        logits, trace = forward(model, x)
        p = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        y = np.array([0, 2, 1])
        p[np.arange(3), y] -= 1
        np.testing.assert_allclose(backward(model, trace, y)[0], x.T @ p / 3, rtol=1e-12)

    def test_stale_trace(self):
        model = new_model([4, 3, 2])
        _, trace = forward(model, np.zeros((1, 4)))
        model.set_weights([w * 2 for w in model.weights])
        with pytest.raises(StaleTraceError):
            backward(model, trace, [0])


class TestSgd:
    def test_step(self):
        out = sgd_step([np.ones((2, 2))], [np.full((2, 2), 2.0)], 0.25)
        np.testing.assert_allclose(out[0], 0.5)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            sgd_step([np.ones((2, 2))], [np.ones((2, 3))], 0.1)

    def test_projection(self):
        t = ComplexTransfer()
        out = sgd_step([np.zeros((1, 2))], [np.array([[-10.0, 10.0]])], 1.0, t.project)
        np.testing.assert_allclose(out[0], [[t.w_limit, -t.w_limit]])


class TestConfig:
    def test_schedule(self):
        cfg = TrainConfig(lr_initial=0.1, lr_after_drop=0.01, drop_epoch=16)
        assert cfg.lr_at(15) == 0.1 and cfg.lr_at(16) == 0.01

    @pytest.mark.parametrize("kwargs", [dict(batch_size=0), dict(lr_initial=-1.0),
                                        dict(init="he"), dict(epochs=-1)])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)


class TestInit:
    def test_glorot_bound(self):
        ws = init_weights([100, 50], LinearTransfer(), np.random.default_rng(0))
        assert np.abs(ws[0]).max() <= math.sqrt(6 / 150)
        assert np.abs(ws[0]).max() > 0.9 * math.sqrt(6 / 150)

    def test_sinh_scaled(self):
        ws = init_weights([100, 50], SinhTransfer(4.0), np.random.default_rng(0))
        assert np.abs(ws[0]).max() <= math.sqrt(6 / 150) * 4 / math.sinh(4)

    def test_complex_within_limit(self):
        t = ComplexTransfer()
        ws = init_weights([30, 20], t, np.random.default_rng(0))
        assert np.abs(ws[0]).max() <= t.w_limit


class TestTrain:
    def test_learns_toy_problem(self):
        ds = toy_dataset()
        model = new_model([8, 6, 2], seed=1)
        cfg = TrainConfig(epochs=5, batch_size=20, lr_initial=0.5, lr_after_drop=0.1,
                          drop_epoch=3)
        _, hist = train(model, ds, ds, cfg)
        assert len(hist.records) == 5
        assert hist.test_accuracy[-1] >= 0.95
        assert hist.train_loss[-1] < hist.train_loss[0]
        assert [r.lr for r in hist.records] == [0.5, 0.5, 0.5, 0.1, 0.1]

    def test_deterministic(self):
        ds = toy_dataset()
        cfg = TrainConfig(epochs=2, batch_size=32, lr_initial=0.3, lr_after_drop=0.1)
        a, _ = train(new_model([8, 6, 2], seed=3), ds, None, cfg)
        b, _ = train(new_model([8, 6, 2], seed=3), ds, None, cfg)
        for wa, wb in zip(a.weights, b.weights):
            np.testing.assert_array_equal(wa, wb)

    def test_non_finite_loss(self):
        ds = toy_dataset(50)
        model = new_model([8, 6, 2])
        model.set_weights([np.full((8, 6), np.nan), np.zeros((6, 2))])
        with pytest.raises(NumericalError, match="epoch 0, batch 0"):
            train(model, ds, None, TrainConfig(epochs=1, batch_size=10))

    def test_checkpoints(self, tmp_path):
        ds = toy_dataset(40)
        cfg = TrainConfig(epochs=2, batch_size=10, checkpoint_every=1,
                          checkpoint_dir=str(tmp_path))
        train(new_model([8, 4, 2]), ds, None, cfg)
        assert sorted(p.name for p in tmp_path.iterdir()) == ["epoch001.npz", "epoch002.npz"]

    def test_history_csv(self, tmp_path):
        ds = toy_dataset(40)
        _, hist = train(new_model([8, 4, 2]), ds, ds, TrainConfig(epochs=2, batch_size=10,
                                                                   seed=7))
        text = hist.write_csv(tmp_path / "h.csv", {"transfer": "linear"}).read_text()
        lines = text.splitlines()
        assert lines[0] == "# seed=7" and lines[1] == "# transfer=linear"
        assert lines[2] == "epoch,train_loss,test_accuracy"
        assert len(lines) == 5

    def test_empty_history(self, tmp_path):
        text = History().write_csv(tmp_path / "e.csv").read_text()
        assert text.splitlines()[-1] == "epoch,train_loss,test_accuracy"

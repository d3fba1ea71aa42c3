"""Backpropagation, plain minibatch SGD and finite-difference gradient checks."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .nn import (
    ComplexTransfer,
    ForwardTrace,
    LinearTransfer,
    MlpModel,
    SinhTransfer,
    StaleTraceError,
    accuracy,
    clipped_relu_grad,
    forward,
    softmax_ce,
)

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 100
    lr_initial: float = 0.05
    lr_after_drop: float = 0.01
    drop_epoch: int = 16
    seed: int = 0
    # "scaled": Glorot-uniform divided by sinh(b)/b for sinh transfers; "glorot": plain
    init: str = "scaled"
    init_gain: float = 1.0
    checkpoint_every: int = 0
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size <= 0 or self.drop_epoch < 0:
            raise ValueError("epochs, batch_size and drop_epoch must be nonnegative/positive")
        if not (self.lr_initial > 0 and self.lr_after_drop > 0):
            raise ValueError("learning rates must be positive")
        if self.init not in ("scaled", "glorot"):
            raise ValueError(f"unknown init {self.init!r}")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 0-based ``epoch``; the drop applies from epoch index
        ``drop_epoch`` on, i.e. after ``drop_epoch`` full epochs."""
        return self.lr_initial if epoch < self.drop_epoch else self.lr_after_drop


def init_weights(layer_dims, transfer, rng: np.random.Generator, init: str = "scaled",
                 gain: float = 1.0):
    ws = []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        if isinstance(transfer, ComplexTransfer):
            lim = 0.5 * transfer.w_limit
        else:
            lim = gain * math.sqrt(6.0 / (fan_in + fan_out))
            if init == "scaled" and isinstance(transfer, SinhTransfer):
                lim *= transfer.b / math.sinh(transfer.b)
        ws.append(rng.uniform(-lim, lim, (fan_in, fan_out)))
    return ws


def new_model(layer_dims, transfer=None, seed: int = 0, init: str = "scaled",
              gain: float = 1.0) -> MlpModel:
    transfer = transfer or LinearTransfer()
    rng = np.random.default_rng(seed)
    return MlpModel(list(layer_dims), init_weights(layer_dims, transfer, rng, init, gain),
                    transfer)


def backward(model: MlpModel, trace: ForwardTrace, labels):
    """Gradients of the mean cross-entropy for each weight matrix."""
    if trace.version != model.version:
        raise StaleTraceError(
            f"trace from model version {trace.version}, model is at {model.version}")
    t = model.transfer
    _, delta = softmax_ce(trace.s[-1], labels)
    grads = [None] * model.n_layers
    for k in range(model.n_layers - 1, -1, -1):
        x, w = trace.y[k], model.weights[k]
        grads[k] = t.grad_weights(x, w, delta)
        if k > 0:
            delta = t.grad_inputs(x, w, delta) * clipped_relu_grad(trace.s[k - 1], model.v_read_max)
    return grads


def sgd_step(weights, grads, lr: float, project=None):
    out = []
    for w, g in zip(weights, grads):
        if w.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != weight shape {w.shape}")
        nw = w - lr * g
        out.append(project(nw) if project is not None else nw)
    return out


def _projector(model):
    return model.transfer.project if isinstance(model.transfer, ComplexTransfer) else None


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    test_accuracy: float
    lr: float


@dataclass
class History:
    records: list[EpochRecord] = field(default_factory=list)
    seed: int = 0

    @property
    def test_accuracy(self):
        return [r.test_accuracy for r in self.records]

    @property
    def train_loss(self):
        return [r.train_loss for r in self.records]

    def write_csv(self, path, meta: dict | None = None):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write(f"# seed={self.seed}\n")
            for k, v in (meta or {}).items():
                fh.write(f"# {k}={v}\n")
            wr = csv.writer(fh)
            wr.writerow(["epoch", "train_loss", "test_accuracy"])
            for r in self.records:
                wr.writerow([r.epoch, repr(r.train_loss), repr(r.test_accuracy)])
        return path


def train(model: MlpModel, train_set, test_set, config: TrainConfig, evaluate=None,
          progress=None):
    """Minibatch SGD with a seeded shuffle per epoch and a one-step lr drop.

    ``evaluate(model, test_set)`` defaults to ``nn.accuracy``. Returns
    (model, History); the model is updated in place.
    """
    from .nn import save_checkpoint

    evaluate = evaluate or accuracy
    rng = np.random.default_rng(config.seed)
    x_all, y_all = train_set.images, train_set.labels
    n = x_all.shape[0]
    project = _projector(model)
    hist = History(seed=config.seed)
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        order = rng.permutation(n)
        total, count = 0.0, 0
        for b, lo in enumerate(range(0, n, config.batch_size)):
            idx = order[lo:lo + config.batch_size]
            logits, trace = forward(model, x_all[idx])
            loss, _ = softmax_ce(logits, y_all[idx])
            if not math.isfinite(loss):
                bad = next((k for k, s in enumerate(trace.s) if not np.all(np.isfinite(s))),
                           model.n_layers - 1)
                raise NumericalError(
                    f"non-finite loss at epoch {epoch}, batch {b} (first bad layer {bad})")
            grads = backward(model, trace, y_all[idx])
            model.set_weights(sgd_step(model.weights, grads, lr, project))
            total += loss * len(idx)
            count += len(idx)
        acc = evaluate(model, test_set) if test_set is not None else float("nan")
        rec = EpochRecord(epoch + 1, total / max(count, 1), acc, lr)
        hist.records.append(rec)
        log.info("epoch %d lr=%g loss=%.5f test_acc=%.4f", rec.epoch, lr, rec.train_loss, acc)
        if progress:
            progress(rec)
        if config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
            save_checkpoint(model, Path(config.checkpoint_dir or ".") / f"epoch{epoch + 1:03d}.npz")
    return model, hist


# ---------------------------------------------------------- gradient check

@dataclass
class GradCheckReport:
    max_rel_error: list[float]
    mean_rel_error: list[float]
    eps: float
    checked: list[int]

    @property
    def worst(self) -> float:
        return max(self.max_rel_error)

    def passed(self, tol: float) -> bool:
        return self.worst <= tol

    def __str__(self):
        rows = [f"W{k}: max_rel={mx:.3e} mean_rel={mn:.3e} n={c}"
                for k, (mx, mn, c) in enumerate(zip(self.max_rel_error, self.mean_rel_error,
                                                     self.checked))]
        return "\n".join(rows + [f"eps={self.eps:g}"])


def batch_loss(model: MlpModel, x, labels) -> float:
    logits, _ = forward(model, x)
    return softmax_ce(logits, labels)[0]


def _extended_loss(model: MlpModel, weights, x, labels):
    """Mean cross-entropy evaluated in ``np.longdouble``.

    Central differences of a float64 loss bottom out near 1e-11 absolute,
    which swamps small gradient entries; the extra precision pushes that
    floor well below any tolerance we check.
    """
    a = np.asarray(x, dtype=np.longdouble)
    last = len(weights) - 1
    for k, w in enumerate(weights):
        s = model.transfer(a, np.asarray(w, dtype=np.longdouble))
        a = s if k == last else np.clip(s, 0, model.v_read_max)
    z = a - a.max(axis=1, keepdims=True)
    logz = np.log(np.exp(z).sum(axis=1))
    return np.mean(logz - z[np.arange(len(labels)), labels])


def grad_check(model: MlpModel, x, labels, eps: float = 1e-5, samples: int = 200,
               seed: int = 0) -> GradCheckReport:
    """Compare analytic gradients with central differences.

    The differenced losses are computed in extended precision. Up to ``samples`` weights per matrix are perturbed (all of them if the
    matrix is smaller). Relative error is |a - n| / max(|a|, |n|, 1e-12).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    rng = np.random.default_rng(seed)
    _, trace = forward(model, x)
    analytic = backward(model, trace, labels)
    labels = np.asarray(labels)
    weights = [np.asarray(w, dtype=np.longdouble) for w in model.weights]
    mx, mn, cnt = [], [], []
    for k, w in enumerate(weights):
        flat = np.arange(w.size)
        if w.size > samples:
            flat = rng.choice(w.size, samples, replace=False)
        errs = []
        for f in flat:
            i, j = np.unravel_index(f, w.shape)
            orig = w[i, j]
            w[i, j] = orig + eps
            up = _extended_loss(model, weights, x, labels)
            w[i, j] = orig - eps
            down = _extended_loss(model, weights, x, labels)
            w[i, j] = orig
            num = float((up - down) / (2 * eps))
            a = analytic[k][i, j]
            errs.append(abs(a - num) / max(abs(a), abs(num), 1e-12))
        mx.append(float(np.max(errs)))
        mn.append(float(np.mean(errs)))
        cnt.append(len(flat))
    return GradCheckReport(mx, mn, eps, cnt)


def check_problem(transfer, dims=(10, 8, 4), batch: int = 8, seed: int = 0,
                  margin: float = 1e-3, logit_bound: float = 4.0, max_tries: int = 5000):
    """A random model and batch whose hidden pre-activations keep clear of the
    clipped-ReLU kinks at 0 and 1, with at least a quarter of the units active
    and logits bounded by ``logit_bound``.

    Finite differences straddling a kink disagree with any one-sided
    derivative, so such draws are rejected and resampled.
    """
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        if isinstance(transfer, ComplexTransfer):
            ws = [rng.choice([-1.0, 1.0], (a, b)) * rng.uniform(0.002, 0.03, (a, b))
                  for a, b in zip(dims[:-1], dims[1:])]
            # the default gain puts ~55 units per cell at 1 V; keep voltages low
            x = rng.uniform(0.01, 0.25, (batch, dims[0]))
        else:
            ws = init_weights(dims, transfer, rng)
            x = rng.uniform(0.0, 1.0, (batch, dims[0]))
        model = MlpModel(list(dims), ws, transfer)
        _, trace = forward(model, x)
        hidden = trace.s[:-1]
        near = any(np.any((np.abs(s) < margin) | (np.abs(s - 1.0) < margin)) for s in hidden)
        active = all(np.mean((s > 0) & (s < 1)) >= 0.25 for s in hidden)
        # saturated softmax leaves gradients at roundoff level
        tame = np.abs(trace.s[-1]).max() <= logit_bound
        if not near and active and tame:
            labels = rng.integers(0, dims[-1], batch)
            return model, x, labels
    raise RuntimeError("could not draw a kink-free gradient-check problem")

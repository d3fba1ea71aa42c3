"""Multilayer perceptrons with device-shaped transfer functions.

A layer computes ``y = clipped_relu(f(x, W))``. The transfer ``f`` is either
the ordinary weighted sum, the sinh device law ``sinh(b x) @ W``, or the
element-wise complex device law evaluated on the sub-weight pair
(w+, w-). The final layer returns raw logits; softmax lives in the loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .device import ComplexDeviceModel, complex_current_array, complex_partials_array


class StaleTraceError(RuntimeError):
    """A forward trace was used after the model's weights changed."""


# --------------------------------------------------------------- transfers

class LinearTransfer:
    name = "linear"

    def __call__(self, x, w):
        return x @ w

    def grad_weights(self, x, w, delta):
        return x.T @ delta

    def grad_inputs(self, x, w, delta):
        return delta @ w.T

    def to_dict(self):
        return {"kind": self.name}

    def __eq__(self, other):
        return type(other) is type(self)

    def __repr__(self):
        return "LinearTransfer()"


class SinhTransfer:
    """``sinh(b x) @ W``: the column current of a crossbar of sinh devices."""

    name = "sinh"

    def __init__(self, b: float):
        if not b > 0:
            raise ValueError(f"sinh transfer needs b > 0, got {b}")
        self.b = float(b)

    def __call__(self, x, w):
        return np.sinh(self.b * x) @ w

    def grad_weights(self, x, w, delta):
        return np.sinh(self.b * x).T @ delta

    def grad_inputs(self, x, w, delta):
        return (delta @ w.T) * (self.b * np.cosh(self.b * x))

    def to_dict(self):
        return {"kind": self.name, "b": self.b}

    def __eq__(self, other):
        return type(other) is type(self) and other.b == self.b

    def __repr__(self):
        return f"SinhTransfer(b={self.b!r})"


class ComplexTransfer:
    """Differential current of the complex device law, times a fixed gain.

    For each cell the signed weight w is split into w+ = max(w, 0) and
    w- = max(-w, 0), each used directly as a device state, so that

        s_j = gain * sum_i [I(w+_ij, x_i) - I(w-_ij, x_i)]
            = gain * sum_i sign(w_ij) * [I(|w_ij|, x_i) - I(0, x_i)]

    The gain defaults to 1 / I(w_max / 2, v_read_max); raw currents are of
    order 1e-10 and would be flattened by the clipped ReLU otherwise.
    """

    name = "complex"
    # elements per (batch, in, out) block
    block = 1 << 22

    def __init__(self, model: ComplexDeviceModel | None = None, gain: float | None = None,
                 margin: float = 1e-4):
        self.model = model or ComplexDeviceModel()
        if gain is None:
            gain = 1.0 / float(complex_current_array(
                self.model, 0.5 * self.model.w_max, self.model.v_read_max))
        self.gain = float(gain)
        self.margin = float(margin)

    @property
    def w_limit(self) -> float:
        return self.model.w_max - self.margin

    def project(self, w):
        lim = self.w_limit
        return np.clip(w, -lim, lim)

    def _blocks(self, n_batch, w):
        step = max(1, self.block // max(1, w.size))
        for lo in range(0, n_batch, step):
            yield slice(lo, min(n_batch, lo + step))

    def __call__(self, x, w):
        m = self.model
        sign = np.sign(w)
        aw = np.abs(w)
        out = np.empty((x.shape[0], w.shape[1]), dtype=np.result_type(x, w))
        for sl in self._blocks(x.shape[0], w):
            xb = x[sl][:, :, None]
            cell = complex_current_array(m, aw[None], xb) - complex_current_array(m, 0.0, xb)
            out[sl] = np.einsum("bij,ij->bj", cell, sign)
        return self.gain * out

    def grad_weights(self, x, w, delta):
        # ds/dw = dI/dw(|w|, x) on both branches; w = 0 takes the w >= 0 branch
        aw = np.abs(w)
        g = np.zeros_like(w)
        for sl in self._blocks(x.shape[0], w):
            dw, _ = complex_partials_array(self.model, aw[None], x[sl][:, :, None])
            g += np.einsum("bij,bj->ij", dw, delta[sl])
        return self.gain * g

    def grad_inputs(self, x, w, delta):
        m = self.model
        sign = np.sign(w)
        aw = np.abs(w)
        out = np.empty_like(x)
        for sl in self._blocks(x.shape[0], w):
            xb = x[sl][:, :, None]
            _, dv = complex_partials_array(m, aw[None], xb)
            _, dv0 = complex_partials_array(m, 0.0, xb)
            out[sl] = np.einsum("bij,ij,bj->bi", dv - dv0, sign, delta[sl])
        return self.gain * out

    def to_dict(self):
        m = self.model
        return {"kind": self.name, "a": m.a, "b": m.b, "c": m.c, "d": m.d, "w_max": m.w_max,
                "v_read_max": m.v_read_max, "gain": self.gain, "margin": self.margin}

    def __eq__(self, other):
        return type(other) is type(self) and other.to_dict() == self.to_dict()

    def __repr__(self):
        return f"ComplexTransfer(model={self.model!r}, gain={self.gain!r})"


Transfer = LinearTransfer | SinhTransfer | ComplexTransfer


def transfer_from_dict(d) -> Transfer:
    d = dict(d)
    kind = d.pop("kind")
    if kind == "linear":
        return LinearTransfer()
    if kind == "sinh":
        return SinhTransfer(float(d["b"]))
    if kind == "complex":
        gain = d.pop("gain", None)
        margin = d.pop("margin", 1e-4)
        model = ComplexDeviceModel(**{k: float(v) for k, v in d.items()})
        return ComplexTransfer(model, gain=None if gain is None else float(gain),
                               margin=float(margin))
    raise ValueError(f"unknown transfer kind {kind!r}")


def transfer(kind: Transfer, x, w, v_read_max: float = 1.0):
    """Apply a transfer after checking ``x`` is a valid read-voltage vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.size and (x.min() < 0 or x.max() > v_read_max):
        raise ValueError(f"inputs must lie in [0, {v_read_max}], got [{x.min()}, {x.max()}]")
    squeeze = x.ndim == 1
    s = kind(np.atleast_2d(x), np.asarray(w, dtype=np.float64))
    return s[0] if squeeze else s


# ---------------------------------------------------- activation and loss

def clipped_relu(s, upper: float = 1.0):
    return np.clip(s, 0.0, upper)


def clipped_relu_grad(s, upper: float = 1.0):
    """1 on the closed interval [0, upper], 0 elsewhere."""
    return ((s >= 0.0) & (s <= upper)).astype(np.float64)


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_ce(logits, labels):
    """Mean cross-entropy and its gradient with respect to the logits.

    Accepts a single logit vector with an integer label, or a batch. The
    gradient is (softmax - onehot) / batch, so it already carries the
    batch-mean normalization.
    """
    logits = np.asarray(logits, dtype=np.float64)
    single = logits.ndim == 1
    logits = np.atleast_2d(logits)
    labels = np.atleast_1d(np.asarray(labels))
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(logz - z[rows, labels]))
    grad = np.exp(z - logz[:, None])
    grad[rows, labels] -= 1.0
    grad /= n
    return loss, (grad[0] if single else grad)


# -------------------------------------------------------------------- model

@dataclass
class MlpModel:
    layer_dims: list[int]
    weights: list[np.ndarray]
    transfer: Transfer = field(default_factory=LinearTransfer)
    v_read_max: float = 1.0
    # bumped on every weight update so stale traces can be detected
    version: int = 0

    def __post_init__(self):
        self.layer_dims = [int(d) for d in self.layer_dims]
        if any(d <= 0 for d in self.layer_dims):
            raise ValueError("layer dims must be positive")
        if len(self.weights) != len(self.layer_dims) - 1:
            raise ValueError("need one weight matrix per layer transition")
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        for k, w in enumerate(self.weights):
            want = (self.layer_dims[k], self.layer_dims[k + 1])
            if w.shape != want:
                raise ValueError(f"weight {k} has shape {w.shape}, expected {want}")

    @classmethod
    def zeros(cls, layer_dims, transfer=None, **kwargs):
        ws = [np.zeros((a, b)) for a, b in zip(layer_dims[:-1], layer_dims[1:])]
        return cls(list(layer_dims), ws, transfer or LinearTransfer(), **kwargs)

    @property
    def n_layers(self):
        return len(self.weights)

    def set_weights(self, weights):
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.version += 1

    def copy(self):
        return MlpModel(list(self.layer_dims), [w.copy() for w in self.weights],
                        self.transfer, self.v_read_max)


@dataclass
class ForwardTrace:
    """Per-layer inputs ``y[k]`` (``y[0]`` is the network input) and
    pre-activations ``s[k]`` produced from ``y[k]``."""

    y: list[np.ndarray]
    s: list[np.ndarray]
    version: int


def forward(model: MlpModel, x):
    """Run the network; returns (logits, trace)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != model.layer_dims[0]:
        raise ValueError(f"input dimension {x.shape[1]} != {model.layer_dims[0]}")
    if x.size and (x.min() < 0 or x.max() > model.v_read_max):
        raise ValueError(f"inputs must lie in [0, {model.v_read_max}]")
    ys, ss = [x], []
    a = x
    last = model.n_layers - 1
    for k, w in enumerate(model.weights):
        s = model.transfer(a, w)
        ss.append(s)
        if k < last:
            a = clipped_relu(s, model.v_read_max)
            # written so NaN passes through; the trainer reports it with context
            assert not ((a < 0).any() or (a > model.v_read_max).any())
            ys.append(a)
    logits = ss[-1]
    trace = ForwardTrace(ys, ss, model.version)
    return (logits[0] if single else logits), trace


def predict(model: MlpModel, x, batch_size: int = 1000):
    x = np.atleast_2d(x)
    out = np.empty(x.shape[0], dtype=np.int64)
    for lo in range(0, x.shape[0], batch_size):
        logits, _ = forward(model, x[lo:lo + batch_size])
        out[lo:lo + batch_size] = np.argmax(logits, axis=1)
    return out


def accuracy(model: MlpModel, dataset, predictor=None) -> float:
    """Fraction of samples whose argmax logit (lowest index on ties) hits the label."""
    images, labels = (dataset.images, dataset.labels) if hasattr(dataset, "images") else dataset
    if len(labels) == 0:
        raise ValueError("accuracy of an empty dataset is undefined")
    pred = (predictor or predict)(model, images)
    return float(np.mean(pred == np.asarray(labels)))


# -------------------------------------------------------------- checkpoints

CHECKPOINT_MAGIC = "RRAMNET-MLP"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(model: MlpModel, path) -> Path:
    """Write an ``.npz`` holding dims, transfer parameters and float64 weights."""
    import json

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {f"w{k}": np.ascontiguousarray(w, dtype=np.float64)
              for k, w in enumerate(model.weights)}
    meta = {"magic": CHECKPOINT_MAGIC, "version": CHECKPOINT_VERSION,
            "layer_dims": model.layer_dims, "transfer": model.transfer.to_dict(),
            "v_read_max": model.v_read_max}
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta)), **arrays)
    return path


def load_checkpoint(path) -> MlpModel:
    import json

    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            if meta.get("magic") != CHECKPOINT_MAGIC:
                raise CheckpointError(f"{path}: not a checkpoint (magic {meta.get('magic')!r})")
            if meta.get("version") != CHECKPOINT_VERSION:
                raise CheckpointError(f"{path}: unsupported version {meta.get('version')}")
            n = len(meta["layer_dims"]) - 1
            weights = [z[f"w{k}"] for k in range(n)]
    except (OSError, KeyError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from exc
    return MlpModel(meta["layer_dims"], weights, transfer_from_dict(meta["transfer"]),
                    meta["v_read_max"])

"""Experiment drivers: training runs, k-sweeps, histograms and the summary table.

Every command writes CSV with a header row, preceded by ``# key=value``
comment lines that always include the seed. Trained models are cached on
disk keyed by a hash of everything that influences training, so repeated
sweeps and table builds reuse earlier runs.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import data
from .crossbar import (
    crossbar_predict,
    ideal_vmm,
    naive_layer,
    naive_predict,
)
from .device import SinhDeviceModel, b_of_k
from .nn import (
    CheckpointError,
    ComplexTransfer,
    LinearTransfer,
    MlpModel,
    SinhTransfer,
    accuracy,
    clipped_relu,
    load_checkpoint,
    save_checkpoint,
)
from .trainer import TrainConfig, check_problem, grad_check, new_model, train

log = logging.getLogger(__name__)

PRESETS = {
    "shallow-mnist": {"paper": [784, 500, 250, 10], "desk": [784, 500, 250, 10]},
    "deep-mnist": {"paper": [784, 2500, 2000, 1500, 1000, 500, 10],
                   "desk": [784, 512, 512, 512, 256, 128, 10]},
    "shallow-cifar": {"paper": [2352, 4000, 1000, 4000, 10], "desk": [2352, 1000, 500, 10]},
}
DEFAULT_K_LIST = [2, 3, 4, 5, 6, 7.5, 10, 15, 20]
CIFAR_DESK_SUBSET = 5000
CIFAR_DESK_EPOCHS = 10
CIFAR_PAPER_EPOCHS = 100

# (initial lr, lr after the drop) per transfer kind; see ``default_schedule``
BASE_LR = {"linear": (0.05, 0.01), "sinh": (3e-4, 6e-5), "complex": (0.05, 0.01)}
# sinh gradients compound through depth and wide fan-in; those presets start
# sinh networks with smaller weights, and the deep one also learns slower
DEEP_SINH_LR = (1e-4, 2e-5)
SINH_INIT_GAIN = {"deep-mnist": 0.5, "shallow-cifar": 0.5}


def default_schedule(kind: str, b: float | None = None,
                     base: tuple[float, float] | None = None) -> tuple[float, float]:
    """Learning rates for a transfer kind.

    Sinh rates are tuned at b = 4. The gradient of a sinh layer grows
    roughly like sinh(b)^2 / b^2 relative to the weighted sum, so other b
    rescale the tuned value by that factor.
    """
    lr0, lr1 = base or BASE_LR[kind]
    if kind == "sinh" and b is not None:
        ref = (np.sinh(4.0) / 4.0) ** 2
        scale = ref / (np.sinh(b) / b) ** 2
        lr0, lr1 = lr0 * scale, lr1 * scale
    return float(lr0), float(lr1)


def make_transfer(kind: str, k: float | None = None):
    """Transfer for ``kind``; sinh is parameterized by its nonlinearity k.

    k = 2 means b = 0, where the sinh law degenerates to the weighted sum,
    so that case returns the linear transfer.
    """
    if kind == "linear":
        return LinearTransfer()
    if kind == "complex":
        return ComplexTransfer()
    if kind != "sinh":
        raise ValueError(f"unknown transfer {kind!r}")
    if k is None:
        raise ValueError("sinh transfer needs k")
    b = b_of_k(k)
    return LinearTransfer() if b == 0 else SinhTransfer(b)


@dataclass
class ExperimentConfig:
    preset: str = "shallow-mnist"
    scale: str = "desk"
    transfer: str = "linear"
    k: float = 7.5
    dims: list[int] | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    out_dir: str = "runs"
    data_dir: str | None = None
    cache_dir: str | None = None

    def __post_init__(self):
        if self.preset not in PRESETS and self.dims is None:
            raise ValueError(f"unknown preset {self.preset!r}; give dims for a custom network")
        if self.scale not in ("desk", "paper"):
            raise ValueError(f"scale must be desk or paper, got {self.scale!r}")

    @property
    def seed(self) -> int:
        return self.train.seed

    @property
    def layer_dims(self) -> list[int]:
        return list(self.dims) if self.dims else list(PRESETS[self.preset][self.scale])

    @property
    def dataset(self) -> str:
        return "cifar10" if "cifar" in self.preset else "mnist"

    def key(self) -> str:
        """Hash of every setting that changes the trained weights."""
        blob = {"dims": self.layer_dims, "transfer": make_transfer(self.transfer, self.k).to_dict(),
                "train": {k: v for k, v in asdict(self.train).items()
                          if k not in ("checkpoint_every", "checkpoint_dir")},
                "data": self.dataset, "scale": self.scale}
        return hashlib.sha256(json.dumps(blob, sort_keys=True).encode()).hexdigest()[:16]

    def meta(self) -> dict:
        m = {"seed": self.seed, "preset": self.preset, "scale": self.scale,
             "transfer": self.transfer, "dims": "-".join(map(str, self.layer_dims))}
        if self.transfer == "sinh":
            m["k"] = self.k
        if self.scale == "desk" and self.preset != "shallow-mnist":
            m["note"] = "desk-scale substitute"
        return m


def with_defaults(cfg: ExperimentConfig, **train_overrides) -> ExperimentConfig:
    """Fill unset schedule fields with the defaults for the config's transfer."""
    t = make_transfer(cfg.transfer, cfg.k)
    sinh = t.name == "sinh"
    deep_sinh = sinh and cfg.preset == "deep-mnist"
    lr0, lr1 = default_schedule(t.name, getattr(t, "b", None), DEEP_SINH_LR if deep_sinh else None)
    fields = {"lr_initial": lr0, "lr_after_drop": lr1}
    if sinh and cfg.preset in SINH_INIT_GAIN:
        fields["init_gain"] = SINH_INIT_GAIN[cfg.preset]
    if cfg.preset == "shallow-cifar":
        fields["epochs"] = CIFAR_DESK_EPOCHS if cfg.scale == "desk" else CIFAR_PAPER_EPOCHS
        fields["drop_epoch"] = fields["epochs"] * 16 // 30
    fields.update({k: v for k, v in train_overrides.items() if v is not None})
    return replace(cfg, train=replace(cfg.train, **fields))


# ------------------------------------------------------------------ data

def load_split(cfg: ExperimentConfig, split: str) -> data.Dataset:
    if cfg.dataset == "mnist":
        return data.load_mnist(split, cfg.data_dir and Path(cfg.data_dir) / "mnist")
    ds = data.load_cifar10(split, cfg.data_dir and Path(cfg.data_dir) / "cifar10")
    if split == "train":
        if cfg.scale == "desk":
            ds = ds.head(CIFAR_DESK_SUBSET)
        return data.augment(ds, data.AugmentSpec(seed=cfg.seed))
    return data.center_crop(ds)


# ------------------------------------------------------------ CSV output

def write_csv(path, header, rows, meta: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        for k, v in meta.items():
            fh.write(f"# {k}={v}\n")
        wr = csv.writer(fh)
        wr.writerow(header)
        for row in rows:
            wr.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return path


def read_csv(path):
    """Rows of a CSV written by ``write_csv`` as dicts, skipping comment lines."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


# -------------------------------------------------------------- training

def _cache_root(cfg: ExperimentConfig) -> Path:
    if cfg.cache_dir:
        return Path(cfg.cache_dir)
    return data.data_root() / "runs"


def trained_model(cfg: ExperimentConfig, train_set=None, test_set=None, progress=None):
    """Train per ``cfg`` or load the cached result; returns (model, history rows)."""
    cdir = _cache_root(cfg) / cfg.key()
    ckpt, hist_path = cdir / "model.npz", cdir / "history.csv"
    if ckpt.exists() and hist_path.exists():
        try:
            model = load_checkpoint(ckpt)
            log.info("reusing cached run %s", cdir)
            return model, read_csv(hist_path)
        except CheckpointError as exc:
            log.warning("ignoring unreadable cache entry: %s", exc)
    train_set = train_set if train_set is not None else load_split(cfg, "train")
    test_set = test_set if test_set is not None else load_split(cfg, "test")
    transfer = make_transfer(cfg.transfer, cfg.k)
    model = new_model(cfg.layer_dims, transfer, seed=cfg.seed, init=cfg.train.init,
                      gain=cfg.train.init_gain)
    t0 = time.time()
    model, hist = train(model, train_set, test_set, cfg.train, progress=progress)
    log.info("trained %s in %.1f s", cfg.key(), time.time() - t0)
    hist.write_csv(hist_path, cfg.meta())
    save_checkpoint(model, ckpt)
    return model, read_csv(hist_path)


def hardware_accuracy(model: MlpModel, test_set) -> float:
    """Accuracy of a trained model evaluated the way it would run on crossbars.

    Sinh-transfer models go through map, readout and unmap; other models
    are evaluated analytically.
    """
    if isinstance(model.transfer, SinhTransfer):
        dev = SinhDeviceModel(b=model.transfer.b, v_read_max=model.v_read_max)
        return accuracy(model, test_set, crossbar_predict(dev))
    return accuracy(model, test_set)


def naive_accuracy(model: MlpModel, test_set, k: float) -> float:
    """Accuracy of a weighted-sum model deployed on devices with nonlinearity k."""
    b = b_of_k(k)
    if b == 0:
        return accuracy(model, test_set)
    dev = SinhDeviceModel(b=b, v_read_max=model.v_read_max)
    return accuracy(model, test_set, naive_predict(dev))


def cmd_train(cfg: ExperimentConfig, progress=None):
    """Train (or reuse) a model, copy checkpoint and history into ``out_dir``.

    Returns (model, final accuracy, output paths).
    """
    test_set = load_split(cfg, "test")
    model, rows = trained_model(cfg, test_set=test_set, progress=progress)
    out = Path(cfg.out_dir)
    ckpt = save_checkpoint(model, out / "model.npz")
    hist = write_csv(out / "history.csv", ["epoch", "train_loss", "test_accuracy"],
                     [[int(r["epoch"]), float(r["train_loss"]), float(r["test_accuracy"])]
                      for r in rows], cfg.meta())
    acc = hardware_accuracy(model, test_set)
    return model, acc, {"checkpoint": ckpt, "history": hist}


def cmd_sweep_naive(checkpoint, k_list, test_set, out_path, seed: int = 0, meta=None):
    """Naive-mapping accuracy of a weighted-sum checkpoint for each k.

    Rows are (k, accuracy, normalized_loss) where normalized_loss is the
    relative accuracy drop against the linear-device (k = 2) accuracy.
    """
    model = checkpoint if isinstance(checkpoint, MlpModel) else load_checkpoint(checkpoint)
    if not isinstance(model.transfer, LinearTransfer):
        raise ValueError("naive sweeps need a checkpoint trained with the linear transfer")
    base = accuracy(model, test_set)
    rows = []
    for k in sorted(k_list):
        acc = naive_accuracy(model, test_set, k)
        rows.append([float(k), acc, (base - acc) / base])
    m = {"seed": seed, **(meta or {}), "baseline_accuracy": base}
    write_csv(out_path, ["k", "accuracy", "normalized_loss"], rows, m)
    return rows


def cmd_sweep_proposed(cfg: ExperimentConfig, k_list, out_path, progress=None, lr_for_k=None):
    """Train one sinh-transfer network per k and evaluate it through crossbars.

    ``lr_for_k(k)`` may return an (initial, after-drop) pair to override the
    default schedule for that k. Rows are (k, b, accuracy, analytic_accuracy).
    """
    train_set, test_set = load_split(cfg, "train"), load_split(cfg, "test")
    rows = []
    for k in sorted(k_list):
        sub = with_defaults(replace(cfg, transfer="sinh", k=float(k)))
        if lr_for_k is not None and lr_for_k(k) is not None:
            lr0, lr1 = lr_for_k(k)
            sub = replace(sub, train=replace(sub.train, lr_initial=lr0, lr_after_drop=lr1))
        model, _ = trained_model(sub, train_set, test_set, progress)
        rows.append([float(k), b_of_k(k), hardware_accuracy(model, test_set),
                     accuracy(model, test_set)])
    write_csv(out_path, ["k", "b", "accuracy", "analytic_accuracy"], rows,
              {k: v for k, v in cfg.meta().items() if k not in ("transfer", "k")})
    return rows


# ----------------------------------------------------------- histograms

HIST_BINS = 50


def histogram(values, bins: int = HIST_BINS):
    """Counts over the observed range; a constant sample gets one bin."""
    values = np.asarray(values, dtype=np.float64).ravel()
    lo, hi = float(values.min()), float(values.max())
    if lo == hi:
        return np.array([values.size]), np.array([lo, hi])
    return np.histogram(values, bins=bins, range=(lo, hi))


def layer_inputs(model: MlpModel, layer: int, source: str, count: int, seed: int = 0,
                 test_set=None):
    """Inputs arriving at weight matrix ``layer`` (0-based).

    ``source`` is ``dataset`` (test images propagated through the earlier
    layers of the ideal network) or one of the synthetic kinds ``A``/``B``.
    """
    if not 0 <= layer < model.n_layers:
        raise IndexError(f"layer {layer} out of range for {model.n_layers} weight matrices")
    fan_in = model.layer_dims[layer]
    if source.upper() in data.SYNTH_SIGMA:
        return data.synth_distribution(source, count, seed=seed, dim=fan_in)
    if source != "dataset":
        raise ValueError(f"unknown input source {source!r}")
    if test_set is None:
        raise ValueError("dataset source needs test data")
    a = test_set.images[:count]
    for w in model.weights[:layer]:
        a = clipped_relu(ideal_vmm(a, w), model.v_read_max)
    return a


def cmd_hist(checkpoint, layer: int, source: str, out_dir, k: float = 7.5, count: int = 1000,
             seed: int = 0, test_set=None, inputs=None):
    """Compare a layer's ideal weighted sums with naive-device outputs.

    Writes ``hist.csv`` (series, bin_lo, bin_hi, count for inputs, ideal
    and device outputs) and ``outputs.csv`` (ideal, device pairs for the
    first sample). Returns the mean absolute deviation device vs ideal.
    """
    model = checkpoint if isinstance(checkpoint, MlpModel) else load_checkpoint(checkpoint)
    x = inputs if inputs is not None else layer_inputs(model, layer, source, count, seed,
                                                       test_set)
    if not 0 <= layer < model.n_layers:
        raise IndexError(f"layer {layer} out of range for {model.n_layers} weight matrices")
    w = model.weights[layer]
    ideal = ideal_vmm(x, w)
    b = b_of_k(k)
    if b == 0 or not np.any(w):
        device = ideal.copy()
    else:
        device = naive_layer(w, SinhDeviceModel(b=b, v_read_max=model.v_read_max), x)
    mad = float(np.mean(np.abs(device - ideal)))
    rows = []
    for name, vals in (("input", x), ("ideal", ideal), ("device", device)):
        counts, edges = histogram(vals)
        rows += [[name, float(edges[i]), float(edges[i + 1]), int(c)]
                 for i, c in enumerate(counts)]
    meta = {"seed": seed, "layer": layer, "source": source, "k": k, "mad": mad}
    out = Path(out_dir)
    write_csv(out / "hist.csv", ["series", "bin_lo", "bin_hi", "count"], rows, meta)
    write_csv(out / "outputs.csv", ["ideal", "device"],
              [[float(a), float(d)] for a, d in zip(ideal[0], device[0])], meta)
    return mad


# --------------------------------------------------------------- table

TABLE_ROWS = ["shallow-mnist", "deep-mnist", "shallow-cifar"]


def table_row(preset: str, scale: str, k: float = 7.5, seed: int = 0, data_dir=None,
              cache_dir=None, progress=None, **train_overrides):
    """(ideal, naive, proposed) accuracies for one preset."""
    base = ExperimentConfig(preset=preset, scale=scale, data_dir=data_dir, cache_dir=cache_dir,
                            train=TrainConfig(seed=seed))
    test_set = load_split(base, "test")
    train_set = load_split(base, "train")
    lin = with_defaults(replace(base, transfer="linear"), **train_overrides)
    ideal_model, _ = trained_model(lin, train_set, test_set, progress)
    prop = with_defaults(replace(base, transfer="sinh", k=k), **train_overrides)
    prop_model, _ = trained_model(prop, train_set, test_set, progress)
    return (accuracy(ideal_model, test_set), naive_accuracy(ideal_model, test_set, k),
            hardware_accuracy(prop_model, test_set))


def cmd_table1(out_path, scale: str = "desk", k: float = 7.5, seed: int = 0, data_dir=None,
               cache_dir=None, presets=TABLE_ROWS, progress=None):
    rows = []
    for preset in presets:
        ideal, naive, proposed = table_row(preset, scale, k, seed, data_dir, cache_dir, progress)
        dims = "-".join(map(str, PRESETS[preset][scale]))
        rows.append([preset, dims, 100 * ideal, 100 * naive, 100 * proposed])
    write_csv(out_path, ["network", "dims", "ideal", "naive", "proposed"], rows,
              {"seed": seed, "scale": scale, "k": k, "units": "percent"})
    return rows


# ------------------------------------------------------------ gradcheck

GRADCHECK_TOL = {"linear": 1e-6, "sinh": 1e-4, "complex": 1e-4}
# central-difference step; smaller steps for the curved transfers keep the
# truncation error below their tolerance
GRADCHECK_EPS = {"linear": 1e-5, "sinh": 1e-6, "complex": 1e-6}


def cmd_gradcheck(kind: str, seed: int = 0, b: float = 4.0):
    """Gradient check on a random 10-8-4 model; returns (report, passed)."""
    if kind == "sinh":
        t = SinhTransfer(b)
    else:
        t = make_transfer(kind)
    model, x, y = check_problem(t, seed=seed)
    report = grad_check(model, x, y, eps=GRADCHECK_EPS[kind], seed=seed)
    return report, report.passed(GRADCHECK_TOL[kind])

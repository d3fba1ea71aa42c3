"""Resistive crossbar simulation.

Signed weights are split over two adjacent columns (w+ and w-), programmed
as device states through an affine map, read out as column currents with a
device I-V law, and converted back to logical transfer values.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .device import (
    ComplexDeviceModel,
    DeviceDomainError,
    DeviceModel,
    SinhDeviceModel,
    complex_current_array,
)
from .nn import MlpModel, clipped_relu

log = logging.getLogger(__name__)


class DegenerateMapError(ValueError):
    """The weights span no range, so no affine map to device states exists."""


class UnsupportedOperation(TypeError):
    pass


@dataclass(frozen=True)
class AffineMap:
    slope: float
    intercept: float

    def __post_init__(self):
        if not self.slope > 0:
            raise DegenerateMapError(f"slope must be positive, got {self.slope}")

    def __call__(self, w):
        return np.asarray(w) * self.slope + self.intercept

    def inverse(self, g):
        return (np.asarray(g) - self.intercept) / self.slope


@dataclass(frozen=True)
class CrossbarPair:
    """Device states of a positive and a negative column array.

    Rows are inputs, columns are outputs; both arrays share one map.
    """

    g_plus: np.ndarray
    g_minus: np.ndarray
    map: AffineMap
    device: DeviceModel

    def __post_init__(self):
        if self.g_plus.shape != self.g_minus.shape or self.g_plus.ndim != 2:
            raise ValueError("g_plus and g_minus must be matrices of equal shape")
        for arr in (self.g_plus, self.g_minus):
            arr.setflags(write=False)

    @property
    def shape(self):
        return self.g_plus.shape

    def with_offset(self, c: float) -> "CrossbarPair":
        """Both arrays shifted by ``c`` (used to probe intercept cancellation)."""
        return CrossbarPair(self.g_plus + c, self.g_minus + c,
                            AffineMap(self.map.slope, self.map.intercept + c), self.device)

    def dump_csv(self, directory, prefix: str = "layer") -> list[Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        out = []
        for tag, arr in (("g_plus", self.g_plus), ("g_minus", self.g_minus)):
            p = d / f"{prefix}_{tag}.csv"
            np.savetxt(p, arr, delimiter=",", fmt="%.17g")
            out.append(p)
        return out


def decompose_weights(w):
    """Split signed weights into nonnegative (w+, w-) with w = w+ - w-."""
    w = np.asarray(w, dtype=np.float64)
    if not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite")
    w_plus = np.where(w >= 0, w, 0.0)
    w_minus = np.where(w < 0, -w, 0.0)
    return w_plus, w_minus


def state_range(device: DeviceModel, floor: float = 1e-4):
    if isinstance(device, SinhDeviceModel):
        return device.g_min, device.g_max
    return max(device.w_min, floor), device.w_max - floor


def map_subweights(w_plus, w_minus, device: DeviceModel) -> CrossbarPair:
    """Program sub-weights with one affine map shared by both arrays.

    The slope normalizes by the largest element over *both* arrays, so the
    largest sub-weight lands on the top of the state range and a zero
    sub-weight on the bottom.
    """
    w_plus = np.asarray(w_plus, dtype=np.float64)
    w_minus = np.asarray(w_minus, dtype=np.float64)
    if (w_plus < 0).any() or (w_minus < 0).any():
        raise ValueError("sub-weights must be nonnegative")
    top = max(w_plus.max(initial=0.0), w_minus.max(initial=0.0))
    if top <= 0:
        raise DegenerateMapError("all sub-weights are zero")
    g_lo, g_hi = state_range(device)
    amap = AffineMap((g_hi - g_lo) / top, g_lo)
    return CrossbarPair(amap(w_plus), amap(w_minus), amap, device)


def program_complex(w, device: ComplexDeviceModel, floor: float = 1e-4) -> CrossbarPair:
    """Store sub-weights of a complex-device network directly as states.

    Such networks are trained in device-state units, so the map is the
    identity; zero sub-weights sit at ``floor`` because the state interval
    is open at 0.
    """
    w_plus, w_minus = decompose_weights(w)
    lo, hi = state_range(device, floor)
    if max(w_plus.max(initial=0), w_minus.max(initial=0)) > hi:
        raise DeviceDomainError(f"sub-weights exceed the state ceiling {hi}")
    return CrossbarPair(np.maximum(w_plus, lo), np.maximum(w_minus, lo),
                        AffineMap(1.0, 0.0), device)


def map_naive_linear(w, g_min: float, g_max: float):
    """Affine map sending the smallest weight to g_min and the largest to g_max.

    Returns the state matrix and the map. One cell per weight; used by the
    single-column baseline.
    """
    w = np.asarray(w, dtype=np.float64)
    w_lo, w_hi = float(w.min()), float(w.max())
    if not w_hi > w_lo:
        raise DegenerateMapError("weight matrix has no spread (w_max == w_min)")
    slope = (g_max - g_min) / (w_hi - w_lo)
    amap = AffineMap(slope, g_min - w_lo * slope)
    return amap(w), amap


def _device_current(device: DeviceModel, g, x):
    """Column currents sum_i I(g_ij, x_bi) for a batch of input rows."""
    if isinstance(device, SinhDeviceModel):
        return np.sinh(device.b * x) @ g
    out = np.empty((x.shape[0], g.shape[1]))
    for j in range(g.shape[1]):
        out[:, j] = complex_current_array(device, g[None, :, j], x).sum(axis=1)
    return out


def readout_column(pair: CrossbarPair, x):
    """Differential column currents for input voltages ``x`` (vector or batch)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != pair.shape[0]:
        raise ValueError(f"{x.shape[1]} input voltages for {pair.shape[0]} rows")
    dev = pair.device
    lo = 0.0 if isinstance(dev, ComplexDeviceModel) else -dev.v_read_max
    bad = np.nonzero((x < lo) | (x > dev.v_read_max))
    if bad[0].size:
        row = int(bad[1][0])
        raise DeviceDomainError(
            f"voltage {x[bad[0][0], row]} on row {row} outside [{lo}, {dev.v_read_max}]")
    cur = _device_current(dev, pair.g_plus, x) - _device_current(dev, pair.g_minus, x)
    return cur[0] if single else cur


def unmap_output(pair: CrossbarPair, currents):
    """Logical transfer values from differential currents of a sinh crossbar.

    Column current is linear in state for the sinh law, and both columns
    share the map's intercept and the same row voltages, so the intercept
    cancels and only the slope has to be divided out.
    """
    if not isinstance(pair.device, SinhDeviceModel):
        raise UnsupportedOperation(
            "unmap is only defined for state-linear devices; "
            "evaluate complex-device layers with ComplexTransfer")
    return np.asarray(currents) / pair.map.slope


def ideal_vmm(x, w):
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"cannot multiply input of length {x.shape[-1]} by {w.shape}")
    return x @ w


def crossbar_transfer(w, device: SinhDeviceModel, x):
    """Hardware path for one sinh layer: decompose, map, read out, unmap."""
    pair = map_subweights(*decompose_weights(w), device)
    return unmap_output(pair, readout_column(pair, x))


def naive_layer(w, device: SinhDeviceModel, x):
    """Weighted sum as computed by a crossbar programmed for a linear device.

    The map assumes each cell conducts I = G * V with G calibrated from its
    current at the full read voltage, G = g * sinh(b v_max) / v_max. Reading
    back and dividing by that calibration yields
    sum_i w_ij * sinh(b x_i) * v_max / sinh(b v_max), which equals x @ w only
    at x in {0, v_max} or when b -> 0.
    """
    v = device.v_read_max
    calib = np.sinh(device.b * v) / v
    return crossbar_transfer(w, device, x) / calib


def simulate_naive_inference(mlp: MlpModel, device: SinhDeviceModel, x_batch,
                             batch_size: int = 1000):
    """Logits of a weighted-sum network deployed on nonlinear crossbars."""
    x = np.atleast_2d(np.asarray(x_batch, dtype=np.float64))
    v = device.v_read_max
    if x.min() < 0 or x.max() > v:
        log.warning("clipping inputs outside [0, %g] before naive readout", v)
        x = np.clip(x, 0.0, v)
    out = []
    last = mlp.n_layers - 1
    for lo in range(0, x.shape[0], batch_size):
        a = x[lo:lo + batch_size]
        for k, w in enumerate(mlp.weights):
            s = naive_layer(w, device, a)
            a = s if k == last else clipped_relu(s, v)
        out.append(a)
    return np.concatenate(out)


def simulate_crossbar_inference(mlp: MlpModel, device: SinhDeviceModel, x_batch,
                                batch_size: int = 1000):
    """Logits of a sinh-transfer network evaluated through programmed crossbars."""
    x = np.atleast_2d(np.asarray(x_batch, dtype=np.float64))
    pairs = [map_subweights(*decompose_weights(w), device) for w in mlp.weights]
    out = []
    last = mlp.n_layers - 1
    for lo in range(0, x.shape[0], batch_size):
        a = x[lo:lo + batch_size]
        for k, pair in enumerate(pairs):
            s = unmap_output(pair, readout_column(pair, a))
            a = s if k == last else clipped_relu(s, mlp.v_read_max)
        out.append(a)
    return np.concatenate(out)


def naive_predict(device: SinhDeviceModel):
    """Predictor for ``nn.accuracy`` that uses the naive crossbar pipeline."""
    def predictor(model, images):
        return np.argmax(simulate_naive_inference(model, device, images), axis=1)
    return predictor


def crossbar_predict(device: SinhDeviceModel):
    def predictor(model, images):
        return np.argmax(simulate_crossbar_inference(model, device, images), axis=1)
    return predictor

"""Empirical I-V models of resistive memory cells.

Two device laws are provided:

* ``SinhDeviceModel``: I = g * sinh(b * v), where g is the lumped state term
  (the exponential of the tunneling-gap ratio) and b sets the curvature.
* ``ComplexDeviceModel``: I = exp(a*w + b) * (exp(c * v**(w + d)) - 1), a
  fitted law in which state and voltage are entangled.

The scalar functions validate their arguments against the model's state range
and read-voltage bound. The underscored ``*_array`` helpers are the unchecked
vectorized kernels used by the network code.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import asdict, dataclass

import numpy as np


class DeviceDomainError(ValueError):
    """An argument lies outside the admissible range of a device model."""


@dataclass(frozen=True)
class SinhDeviceModel:
    b: float = 4.0
    g_min: float = math.exp(-14.0)
    g_max: float = math.exp(-8.0)
    v_read_max: float = 1.0

    kind = "sinh"

    def __post_init__(self):
        if not self.b > 0:
            raise DeviceDomainError(f"b must be positive, got {self.b}")
        if not 0 < self.g_min < self.g_max:
            raise DeviceDomainError(
                f"need 0 < g_min < g_max, got g_min={self.g_min}, g_max={self.g_max}")
        if not self.v_read_max > 0:
            raise DeviceDomainError(f"v_read_max must be positive, got {self.v_read_max}")

    @property
    def k(self) -> float:
        return k_of_b(self.b * self.v_read_max)

    @classmethod
    def from_k(cls, k: float, **kwargs) -> "SinhDeviceModel":
        """Build a model whose half-bias nonlinearity at 1 V equals ``k``."""
        return cls(b=b_of_k(k), **kwargs)


@dataclass(frozen=True)
class ComplexDeviceModel:
    a: float = -53.59
    b: float = -37.058
    c: float = 20.0
    d: float = 0.2
    w_min: float = 0.0
    w_max: float = 0.15
    v_read_max: float = 1.0

    kind = "complex"

    def __post_init__(self):
        if not self.w_min < self.w_max:
            raise DeviceDomainError(f"need w_min < w_max, got {self.w_min}, {self.w_max}")
        if not self.v_read_max > 0:
            raise DeviceDomainError(f"v_read_max must be positive, got {self.v_read_max}")
        if self.w_min + self.d <= 0:
            # v**(w+d) must vanish at v=0 for I(w, 0) = 0
            raise DeviceDomainError("w_min + d must be positive")


DeviceModel = SinhDeviceModel | ComplexDeviceModel


def _check_voltage(v, lo, hi):
    if not lo <= v <= hi:
        raise DeviceDomainError(f"voltage {v} outside [{lo}, {hi}]")


def _check_sinh(model: SinhDeviceModel, g, v):
    if not model.g_min <= g <= model.g_max:
        raise DeviceDomainError(f"state g={g} outside [g_min={model.g_min}, g_max={model.g_max}]")
    _check_voltage(v, -model.v_read_max, model.v_read_max)


def _check_complex(model: ComplexDeviceModel, w, v):
    if not model.w_min < w < model.w_max:
        raise DeviceDomainError(f"state w={w} outside open interval ({model.w_min}, {model.w_max})")
    if v < 0:
        raise DeviceDomainError(f"complex model is defined for v >= 0 only, got {v}")
    _check_voltage(v, 0.0, model.v_read_max)


def sinh_current(model: SinhDeviceModel, g: float, v: float) -> float:
    _check_sinh(model, g, v)
    return g * math.sinh(model.b * v)


def sinh_partials(model: SinhDeviceModel, g: float, v: float) -> tuple[float, float]:
    """Return (dI/dg, dI/dv) of the sinh law."""
    _check_sinh(model, g, v)
    bv = model.b * v
    return math.sinh(bv), g * model.b * math.cosh(bv)


def complex_current(model: ComplexDeviceModel, w: float, v: float) -> float:
    _check_complex(model, w, v)
    return float(complex_current_array(model, w, v))


def complex_partials(model: ComplexDeviceModel, w: float, v: float) -> tuple[float, float]:
    """Return (dI/dw, dI/dv) of the complex law; both are 0 at v = 0."""
    _check_complex(model, w, v)
    dw, dv = complex_partials_array(model, w, v)
    return float(dw), float(dv)


def _floats(*arrays):
    dtype = np.result_type(*arrays, np.float64)
    return [np.asarray(a, dtype=dtype) for a in arrays]


def complex_current_array(model: ComplexDeviceModel, w, v):
    w, v = _floats(w, v)
    return np.exp(model.a * w + model.b) * np.expm1(model.c * v ** (w + model.d))


def complex_partials_array(model: ComplexDeviceModel, w, v):
    """Element-wise (dI/dw, dI/dv), broadcasting ``w`` against ``v``.

    With p = w + d and u = c * v**p:
        dI/dw = e^{aw+b} * (a * (e^u - 1) + e^u * u * ln v)
        dI/dv = e^{aw+b} * e^u * c * p * v**(p - 1)
    Neither term exists at v = 0 (ln 0, and v**(p-1) with p < 1); both are
    replaced by 0 there.
    """
    w, v = np.broadcast_arrays(*_floats(w, v))
    pos = v > 0
    vs = np.where(pos, v, 1.0)
    p = w + model.d
    vp = vs ** p
    u = model.c * vp
    scale = np.exp(model.a * w + model.b)
    eu = np.exp(u)
    dw = scale * (model.a * np.expm1(u) + eu * u * np.log(vs))
    dv = scale * eu * model.c * p * vp / vs
    return np.where(pos, dw, 0.0), np.where(pos, dv, 0.0)


def k_of_b(b: float) -> float:
    """Half-bias nonlinearity I(1 V) / I(0.5 V) of the sinh law with parameter b."""
    if b < 0:
        raise DeviceDomainError(f"b must be nonnegative, got {b}")
    if b == 0:
        return 2.0
    # sinh(b) / sinh(b/2) = 2 cosh(b/2), which stays accurate as b -> 0
    return 2.0 * math.cosh(b / 2.0)


B_SEARCH_MAX = 50.0


def b_of_k(k: float, tol: float = 1e-12) -> float:
    """Invert ``k_of_b`` by bisection on [0, 50]."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    if k < 2:
        raise DeviceDomainError(f"k must be >= 2, got {k}")
    if k == 2:
        return 0.0
    if k > k_of_b(B_SEARCH_MAX):
        raise OverflowError(f"k={k} exceeds k_of_b({B_SEARCH_MAX})")
    lo, hi = 0.0, B_SEARCH_MAX
    while True:
        mid = 0.5 * (lo + hi)
        km = k_of_b(mid)
        if abs(km - k) <= tol or hi - lo <= 4 * np.finfo(float).eps * hi:
            return mid
        if km < k:
            lo = mid
        else:
            hi = mid


# config (de)serialization

_FLOAT_KEYS = {
    "sinh": ("b", "g_min", "g_max", "v_read_max"),
    "complex": ("a", "b", "c", "d", "w_min", "w_max", "v_read_max"),
}


def device_to_config(model: DeviceModel, section: str = "device") -> str:
    cfg = configparser.ConfigParser()
    cfg[section] = {"kind": model.kind, **{k: repr(v) for k, v in asdict(model).items()}}
    from io import StringIO
    buf = StringIO()
    cfg.write(buf)
    return buf.getvalue()


def device_from_mapping(values) -> DeviceModel:
    """Build a device model from a key/value mapping (e.g. a config section).

    The sinh model also accepts ``k`` in place of ``b``.
    """
    values = dict(values)
    kind = values.pop("kind", "sinh").strip().lower()
    if kind not in _FLOAT_KEYS:
        raise ValueError(f"unknown device kind {kind!r}")
    cls = SinhDeviceModel if kind == "sinh" else ComplexDeviceModel
    if kind == "sinh" and "k" in values:
        if "b" in values:
            raise ValueError("give either b or k, not both")
        values["b"] = b_of_k(float(values.pop("k")))
    unknown = set(values) - set(_FLOAT_KEYS[kind])
    if unknown:
        raise ValueError(f"unknown keys for {kind} device: {sorted(unknown)}")
    return cls(**{k: float(v) for k, v in values.items()})


def device_from_config(text: str, section: str = "device") -> DeviceModel:
    cfg = configparser.ConfigParser()
    cfg.read_string(text)
    if section not in cfg:
        raise ValueError(f"missing [{section}] section")
    return device_from_mapping(cfg[section])

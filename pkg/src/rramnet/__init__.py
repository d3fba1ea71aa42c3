"""Crossbar inference simulation and device-aware training for resistive-memory MLPs."""

from .device import ComplexDeviceModel, DeviceDomainError, SinhDeviceModel, b_of_k, k_of_b
from .nn import ComplexTransfer, LinearTransfer, MlpModel, SinhTransfer, forward

__all__ = [
    "ComplexDeviceModel",
    "ComplexTransfer",
    "DeviceDomainError",
    "LinearTransfer",
    "MlpModel",
    "SinhDeviceModel",
    "SinhTransfer",
    "b_of_k",
    "forward",
    "k_of_b",
]

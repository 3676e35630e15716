"""Hybrid quantum-classical recurrent networks on a dense statevector simulator."""

from .ansatz import CircuitLayout, GateOp, build_ansatz14, build_ry_layer
from .model import QRNN, QrnnConfig, TaskBatch

__all__ = ["CircuitLayout", "GateOp", "QRNN", "QrnnConfig", "TaskBatch", "build_ansatz14", "build_ry_layer"]
__version__ = "0.1.0"

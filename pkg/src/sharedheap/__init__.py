"""Distributed shared heap with transitive prefetching, on a virtual-time multicomputer."""
from .client import Handle, LocalObjectManager
from .errors import (AllocationError, ConfigurationError, DeadlockError, MetricsError,
                     NilReferenceError, ProtocolFault, SharedHeapError, UsageError)
from .experiment import ExperimentConfig, ExperimentResult, run_experiment
from .metrics import MetricsReport, compare
from .objects import NIL, HeapObject, ObjectId, make_object_id, new_object, owner_of
from .presets import PRESET_NAMES, PresetRunner, run_preset
from .server import ObjectServer, Priority
from .system import SharedHeap
from .transport import CostModel, Message, MessageKind, Simulator

__all__ = [
    "AllocationError", "ConfigurationError", "CostModel", "DeadlockError", "ExperimentConfig",
    "ExperimentResult", "Handle", "HeapObject", "LocalObjectManager", "Message", "MessageKind",
    "MetricsError", "MetricsReport", "NIL", "NilReferenceError", "ObjectId", "ObjectServer",
    "PRESET_NAMES", "PresetRunner", "Priority", "ProtocolFault", "SharedHeap", "SharedHeapError",
    "Simulator", "UsageError", "compare", "make_object_id", "new_object", "owner_of",
    "run_experiment", "run_preset",
]
__version__ = "0.1.0"

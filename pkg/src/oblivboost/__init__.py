"""Data-oblivious gradient boosted trees with a simulated enclave cluster.

The library trains and serves XGBoost-style histogram models such that the
modeled memory access trace depends only on public shapes, and implements
the multiparty protocol around it: per-row authenticated encryption, mock
attestation with key enrollment, and all-client signed-command consensus.
"""

from .inference import predict, predict_tree
from .oblivious import (
    oaccess_read,
    oaccess_write,
    oassign,
    ocompare,
    oequal,
    ogreater,
    oless,
    osort,
)
from .trace import AccessTrace, TracedArray, capture_trace
from .trainer import TrainParams, compute_gradients, train, train_partitions
from .tree import Model, Tree, deserialize_model, serialize_model

__version__ = "0.1.0"

__all__ = [
    "AccessTrace",
    "Model",
    "TracedArray",
    "TrainParams",
    "Tree",
    "capture_trace",
    "compute_gradients",
    "deserialize_model",
    "oaccess_read",
    "oaccess_write",
    "oassign",
    "ocompare",
    "oequal",
    "ogreater",
    "oless",
    "osort",
    "predict",
    "predict_tree",
    "serialize_model",
    "train",
    "train_partitions",
    "__version__",
]

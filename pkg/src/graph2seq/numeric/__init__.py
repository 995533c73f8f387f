from . import tensor as ops
from .checkpoint import CheckpointError, load_checkpoint, read_manifest, save_checkpoint
from .gradcheck import NondeterministicClosure, finite_difference_check
from .optim import AdamState, ParamStore, adam_step, clip_global_norm, global_norm, xavier_init
from .tensor import (
    GRADIENT_RULES,
    NonFiniteError,
    ShapeError,
    Tape,
    Tensor,
    backward,
    inject_bug,
    set_checked,
)

__all__ = [
    "AdamState",
    "CheckpointError",
    "GRADIENT_RULES",
    "NonFiniteError",
    "NondeterministicClosure",
    "ParamStore",
    "ShapeError",
    "Tape",
    "Tensor",
    "adam_step",
    "backward",
    "clip_global_norm",
    "finite_difference_check",
    "global_norm",
    "inject_bug",
    "load_checkpoint",
    "ops",
    "read_manifest",
    "save_checkpoint",
    "set_checked",
    "xavier_init",
]

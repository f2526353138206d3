from .checkpoint import load_tensors, save_tensors
from .optim import Adam, AdamState, adam_step
from .tensor import (
    Tape,
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    exp,
    gather_rows,
    leaky_relu,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    neg,
    record_kinks,
    relu,
    reshape,
    scale_rows,
    scatter_add_rows,
    segment_softmax,
    softmax,
    sub,
    sum_,
    transpose,
)

__all__ = [
    "Adam",
    "AdamState",
    "Tape",
    "Tensor",
    "adam_step",
    "add",
    "as_tensor",
    "backward",
    "concat",
    "exp",
    "gather_rows",
    "leaky_relu",
    "load_tensors",
    "log",
    "log_softmax",
    "matmul",
    "mean",
    "mul",
    "neg",
    "record_kinks",
    "relu",
    "reshape",
    "save_tensors",
    "scale_rows",
    "scatter_add_rows",
    "segment_softmax",
    "softmax",
    "sub",
    "sum_",
    "transpose",
]

from .core import (
    GradMap,
    ShapeError,
    Tape,
    TapeConsumedError,
    Tensor,
    add,
    add_bias,
    backward,
    bce_with_logits,
    clamp01,
    concat,
    matmul,
    mean,
    mul,
    relu,
    reshape,
    round_half_away,
    round_straight_through,
    scale,
    shift,
    sigmoid,
    sub,
    sum,
    tanh,
    tensor,
    transpose,
)
from .optim import OptimizerState, adamw, optimizer_step, sgd

__all__ = [
    "GradMap",
    "OptimizerState",
    "ShapeError",
    "Tape",
    "TapeConsumedError",
    "Tensor",
    "adamw",
    "add",
    "add_bias",
    "backward",
    "bce_with_logits",
    "clamp01",
    "concat",
    "matmul",
    "mean",
    "mul",
    "optimizer_step",
    "relu",
    "reshape",
    "round_half_away",
    "round_straight_through",
    "scale",
    "sgd",
    "shift",
    "sigmoid",
    "sub",
    "sum",
    "tanh",
    "tensor",
    "transpose",
]

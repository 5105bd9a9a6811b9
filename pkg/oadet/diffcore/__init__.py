from .ops import (
    add,
    concat,
    cross_entropy,
    elementwise,
    linear,
    log_softmax,
    mean_all,
    mean_rows,
    mix,
    mul,
    one_minus,
    scale,
    sigmoid,
    softmax,
    sub,
    tanh,
    total,
    weighted_mean,
)
from .optimizer import OptimizerState, clip_grad_norm, optimizer_step
from .tensor import Tape, Tensor, active_tape, backward, record

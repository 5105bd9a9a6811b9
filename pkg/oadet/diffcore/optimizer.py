from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from loguru import logger

from oadet.diffcore.tensor import Tensor
from oadet.errors import DimensionError, NonFiniteError

DEFAULT_LEARNING_RATE = 5e-4
DEFAULT_WEIGHT_DECAY = 1e-3


@dataclass
class OptimizerState:
    """Adaptive-moment state with decoupled weight decay."""

    learning_rate: float = DEFAULT_LEARNING_RATE
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moments: list[np.ndarray] = field(default_factory=list)
    second_moments: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_parameters(cls, params: Sequence[Tensor], **hyperparameters) -> "OptimizerState":
        return cls(
            first_moments=[np.zeros_like(p.values) for p in params],
            second_moments=[np.zeros_like(p.values) for p in params],
            **hyperparameters,
        )


def clip_grad_norm(params: Sequence[Tensor], max_norm: float | None) -> float:
    """
    Rescale gradients in place so their global L2 norm is at most ``max_norm``.

    :return: The norm before clipping.
    """
    squares = sum(float(np.sum(p.grad * p.grad)) for p in params if p.grad is not None)
    norm = float(np.sqrt(squares))
    if max_norm is not None and max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= factor
    return norm


def optimizer_step(params: Sequence[Tensor], state: OptimizerState) -> OptimizerState:
    """
    Apply one bias-corrected adaptive-moment update using each parameter's ``grad``.

    Parameters are updated in place. A non-finite gradient aborts the step
    before anything changes.

    :param params: Parameters in the order the state was created for.
    :param state: Moment accumulators; advanced by one step.
    :return: The same state object.
    """
    if len(params) != len(state.first_moments):
        raise DimensionError(
            f"optimizer holds {len(state.first_moments)} moments for {len(params)} parameters"
        )
    for index, p in enumerate(params):
        if state.first_moments[index].shape != p.values.shape:
            raise DimensionError(f"moment shape mismatch for parameter {p.name or index}")
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            logger.error(f"Non-finite gradient in {p.name or index}; optimizer step aborted")
            raise NonFiniteError(f"non-finite gradient in parameter {p.name or index}")

    state.step += 1
    correction1 = 1.0 - state.beta1**state.step
    correction2 = 1.0 - state.beta2**state.step
    for p, m, v in zip(params, state.first_moments, state.second_moments):
        if not p.requires_grad:
            continue
        grad = p.grad if p.grad is not None else np.zeros_like(p.values)
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        p.values *= 1.0 - state.learning_rate * state.weight_decay
        p.values -= state.learning_rate * (m / correction1) / (
            np.sqrt(v / correction2) + state.epsilon
        )
    return state

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from oadet.diffcore.tensor import Tape, Tensor

DEFAULT_STEP = 1e-4


@dataclass
class GradCheckResult:
    name: str
    analytic: np.ndarray
    numeric: np.ndarray
    max_abs_error: float
    passed: bool


def numerical_gradient(
    fn: Callable[[], Tensor], tensor: Tensor, step: float = DEFAULT_STEP
) -> np.ndarray:
    """Central finite differences of a scalar-valued ``fn`` w.r.t. ``tensor``."""
    grad = np.zeros(tensor.values.size)
    flat = tensor.values.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        plus = fn().item()
        flat[i] = original - step
        minus = fn().item()
        flat[i] = original
        grad[i] = (plus - minus) / (2.0 * step)
    return grad.reshape(tensor.shape)


def analytic_gradients(fn: Callable[[], Tensor], tensors: Sequence[Tensor]) -> list[np.ndarray]:
    for tensor in tensors:
        tensor.requires_grad = True
        tensor.zero_grad()
    with Tape() as tape:
        loss = fn()
    tape.backward(loss)
    return [tensor.grad.copy() for tensor in tensors]


def check_gradients(
    fn: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    step: float = DEFAULT_STEP,
    rtol: float = 1e-4,
    atol: float = 1e-8,
) -> list[GradCheckResult]:
    """
    Compare backward gradients of ``fn`` with central finite differences.

    ``fn`` must rebuild its computation from the current tensor values on
    every call and return a single-valued tensor.
    """
    analytic = analytic_gradients(fn, tensors)
    results = []
    for index, (tensor, grad) in enumerate(zip(tensors, analytic)):
        numeric = numerical_gradient(fn, tensor, step)
        error = np.abs(grad - numeric)
        results.append(
            GradCheckResult(
                name=tensor.name or f"tensor{index}",
                analytic=grad,
                numeric=numeric,
                max_abs_error=float(error.max(initial=0.0)),
                passed=bool(np.all(error <= atol + rtol * np.abs(numeric))),
            )
        )
    return results

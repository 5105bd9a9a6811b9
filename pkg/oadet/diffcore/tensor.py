from __future__ import annotations

from contextvars import ContextVar
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.typing import ArrayLike

from oadet.errors import ContractError, DimensionError

BackwardRule = Callable[[np.ndarray], Sequence[np.ndarray | None]]

_active_tape: ContextVar[Tape | None] = ContextVar("active_tape", default=None)


class Tensor:
    """A float64 array that can take part in reverse-mode differentiation."""

    __slots__ = ("values", "requires_grad", "grad", "name", "is_leaf", "tape")

    def __init__(
        self,
        values: ArrayLike,
        requires_grad: bool = False,
        name: str | None = None,
    ):
        array = np.array(values, dtype=np.float64)
        if any(extent <= 0 for extent in array.shape):
            raise DimensionError(f"Tensor extents must be positive, got {array.shape}")
        self.values = array
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = np.zeros_like(array) if requires_grad else None
        self.name = name
        self.is_leaf = True
        self.tape: Tape | None = None

    @classmethod
    def _wrap(cls, values: np.ndarray) -> Tensor:
        tensor = cls.__new__(cls)
        tensor.values = values
        tensor.requires_grad = False
        tensor.grad = None
        tensor.name = None
        tensor.is_leaf = True
        tensor.tape = None
        return tensor

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        if self.values.size != 1:
            raise ContractError(f"item() needs a single value, got shape {self.shape}")
        return float(self.values.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.values.copy()

    def detach(self) -> Tensor:
        return Tensor(self.values)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.values)

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"


@dataclass
class Record:
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: BackwardRule


class Tape:
    """
    Ordered record of differentiable operations.

    Operations executed inside ``with Tape():`` are appended in execution
    order, so every record's inputs were produced by earlier records (or are
    leaves). Backward replays the records in reverse.
    """

    def __init__(self) -> None:
        self.records: list[Record] = []
        self._tokens: list = []

    def __enter__(self) -> Tape:
        self._tokens.append(_active_tape.set(self))
        return self

    def __exit__(self, *exc_info) -> None:
        _active_tape.reset(self._tokens.pop())

    def __len__(self) -> int:
        return len(self.records)

    def clear(self) -> None:
        self.records.clear()

    def backward(self, loss: Tensor) -> None:
        """
        Accumulate d(loss)/d(leaf) into ``grad`` of every leaf that requires it.

        :param loss: A single-valued tensor recorded on this tape.
        """
        if loss.values.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.is_leaf:
            if loss.requires_grad:
                loss.grad = loss.grad + 1.0
            return
        if loss.tape is not self:
            raise ContractError("loss was recorded on a different tape")

        adjoints: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
        for record in reversed(self.records):
            upstream = adjoints.pop(id(record.output), None)
            if upstream is None:
                continue
            for tensor, grad in zip(record.inputs, record.backward(upstream)):
                if grad is None or not tensor.requires_grad:
                    continue
                if tensor.is_leaf:
                    if tensor.grad is None:
                        tensor.grad = np.array(grad, dtype=np.float64)
                    else:
                        tensor.grad += grad
                    continue
                key = id(tensor)
                previous = adjoints.get(key)
                adjoints[key] = grad if previous is None else previous + grad


def active_tape() -> Tape | None:
    return _active_tape.get()


def record(inputs: Sequence[Tensor], values: np.ndarray, rule: BackwardRule) -> Tensor:
    """
    Wrap an operation result and record it on the active tape.

    The output is only recorded (and only requires grad) when a tape is
    active and at least one input requires grad.

    :param inputs: The operation inputs, in the order ``rule`` returns gradients.
    :param values: The forward result.
    :param rule: Maps the upstream gradient to one gradient per input.
    :return: The output tensor.
    """
    output = Tensor._wrap(values)
    tape = active_tape()
    if tape is not None and any(tensor.requires_grad for tensor in inputs):
        output.requires_grad = True
        output.is_leaf = False
        output.tape = tape
        tape.records.append(Record(tuple(inputs), output, rule))
    return output


def backward(loss: Tensor) -> None:
    """
    Populate gradients for every leaf reachable from ``loss``.

    Gradients accumulate: calling this twice without zeroing doubles them.
    """
    if loss.values.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.tape is None:
        if loss.is_leaf and loss.requires_grad:
            loss.grad = loss.grad + 1.0
            return
        raise ContractError("loss was not produced by recorded operations")
    loss.tape.backward(loss)

"""
Differentiable operations over the last axis of a tensor.

Every operation accepts optional leading batch axes and treats them
independently, so a stream of shape ``(D,)`` and a batch of shape ``(B, D)``
go through the same code.
"""

from typing import Sequence

import numpy as np
from loguru import logger
from numpy.typing import ArrayLike

from oadet.constants import PROBABILITY_FLOOR
from oadet.diffcore.tensor import Tensor, record
from oadet.enums.elementwise_kind import ElementwiseKind
from oadet.errors import ContractError, DimensionError

PROBABILITY_SUM_TOLERANCE = 1e-6


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """
    Affine map ``x @ weight.T + bias`` over the last axis.

    :param x: Input of shape ``(..., D_in)``.
    :param weight: Matrix of shape ``(D_out, D_in)``.
    :param bias: Vector of shape ``(D_out,)``.
    :return: Output of shape ``(..., D_out)``.
    """
    if weight.values.ndim != 2:
        raise DimensionError(f"weight must be a matrix, got shape {weight.shape}")
    out_dim, in_dim = weight.shape
    if bias.shape != (out_dim,):
        raise DimensionError(f"bias shape {bias.shape} does not match {out_dim} outputs")
    if x.values.ndim == 0 or x.shape[-1] != in_dim:
        raise DimensionError(f"input shape {x.shape} does not match {in_dim} inputs")

    w = weight.values
    values = x.values @ w.T + bias.values

    def rule(grad: np.ndarray):
        flat_grad = grad.reshape(-1, out_dim)
        flat_x = x.values.reshape(-1, in_dim)
        return grad @ w, flat_grad.T @ flat_x, flat_grad.sum(axis=0)

    return record((x, weight, bias), values, rule)


def softmax(x: Tensor) -> Tensor:
    if x.values.ndim == 0 or x.shape[-1] == 0:
        raise DimensionError("softmax needs at least one entry on the last axis")
    shifted = x.values - x.values.max(axis=-1, keepdims=True)
    exps = np.exp(shifted)
    probs = exps / exps.sum(axis=-1, keepdims=True)

    def rule(grad: np.ndarray):
        return (probs * (grad - (grad * probs).sum(axis=-1, keepdims=True)),)

    return record((x,), probs, rule)


def log_softmax(x: Tensor) -> Tensor:
    if x.values.ndim == 0 or x.shape[-1] == 0:
        raise DimensionError("log_softmax needs at least one entry on the last axis")
    shifted = x.values - x.values.max(axis=-1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def rule(grad: np.ndarray):
        return (grad - np.exp(log_probs) * grad.sum(axis=-1, keepdims=True),)

    return record((x,), log_probs, rule)


def elementwise(kind: ElementwiseKind, x: Tensor, y: Tensor | None = None) -> Tensor:
    """Pointwise gate arithmetic; binary kinds need identically shaped operands."""
    if kind.is_binary:
        if y is None:
            raise ContractError(f"{kind.value} needs two operands")
        if x.shape != y.shape:
            raise DimensionError(f"{kind.value}: shapes {x.shape} and {y.shape} differ")
    elif y is not None:
        raise ContractError(f"{kind.value} takes a single operand")

    match kind:
        case ElementwiseKind.SIGMOID:
            out = 0.5 * (1.0 + np.tanh(0.5 * x.values))
            return record((x,), out, lambda g: (g * out * (1.0 - out),))
        case ElementwiseKind.TANH:
            out = np.tanh(x.values)
            return record((x,), out, lambda g: (g * (1.0 - out * out),))
        case ElementwiseKind.ONE_MINUS:
            return record((x,), 1.0 - x.values, lambda g: (-g,))
        case ElementwiseKind.MUL:
            a, b = x.values, y.values
            return record((x, y), a * b, lambda g: (g * b, g * a))
        case ElementwiseKind.ADD:
            return record((x, y), x.values + y.values, lambda g: (g, g))
        case ElementwiseKind.SUB:
            return record((x, y), x.values - y.values, lambda g: (g, -g))
        case _:
            raise ContractError(f"Unsupported elementwise kind: {kind}")


def sigmoid(x: Tensor) -> Tensor:
    return elementwise(ElementwiseKind.SIGMOID, x)


def tanh(x: Tensor) -> Tensor:
    return elementwise(ElementwiseKind.TANH, x)


def one_minus(x: Tensor) -> Tensor:
    return elementwise(ElementwiseKind.ONE_MINUS, x)


def mul(x: Tensor, y: Tensor) -> Tensor:
    return elementwise(ElementwiseKind.MUL, x, y)


def add(x: Tensor, y: Tensor) -> Tensor:
    return elementwise(ElementwiseKind.ADD, x, y)


def sub(x: Tensor, y: Tensor) -> Tensor:
    return elementwise(ElementwiseKind.SUB, x, y)


def scale(x: Tensor, factor: float) -> Tensor:
    return record((x,), x.values * factor, lambda g: (g * factor,))


def concat(xs: Sequence[Tensor]) -> Tensor:
    """Join tensors along the last axis, in order."""
    if not xs:
        raise DimensionError("concat needs at least one input")
    lead = xs[0].shape[:-1]
    for x in xs:
        if x.values.ndim == 0 or x.shape[:-1] != lead:
            raise DimensionError(f"concat: shape {x.shape} does not match {lead}")
    widths = [x.shape[-1] for x in xs]
    values = np.concatenate([x.values for x in xs], axis=-1)
    splits = np.cumsum(widths)[:-1]

    def rule(grad: np.ndarray):
        return np.split(grad, splits, axis=-1)

    return record(tuple(xs), values, rule)


def mean_rows(rows: Sequence[Tensor]) -> Tensor:
    """Arithmetic mean of K congruent tensors."""
    if not rows:
        raise DimensionError("mean_rows needs at least one row")
    shape = rows[0].shape
    total = rows[0].values.copy()
    for row in rows[1:]:
        if row.shape != shape:
            raise DimensionError(f"mean_rows: shape {row.shape} does not match {shape}")
        total += row.values
    count = len(rows)

    def rule(grad: np.ndarray):
        share = grad / count
        return [share] * count

    return record(tuple(rows), total / count, rule)


def mix(weights: Tensor, rows: Sequence[Tensor], row_weights: ArrayLike | None = None) -> Tensor:
    """
    Weighted sum ``sum_i weights[..., i] * rows[i]``.

    :param weights: Shape ``(..., P)``.
    :param rows: P tensors of shape ``(..., D)`` sharing the leading axes of ``weights``.
    :param row_weights: Constant weights used for the gradients of ``rows``
        in place of the forward weights, same shape as ``weights``.
    """
    if weights.values.ndim == 0 or weights.shape[-1] != len(rows) or not rows:
        raise DimensionError(f"mix: {len(rows)} rows for weights of shape {weights.shape}")
    lead = weights.shape[:-1]
    shape = rows[0].shape
    for row in rows:
        if row.shape != shape or row.shape[:-1] != lead:
            raise DimensionError(f"mix: row shape {row.shape} does not match {lead}")

    w = weights.values
    if row_weights is None:
        backward_weights = w
    else:
        backward_weights = np.asarray(row_weights, dtype=np.float64)
        if backward_weights.shape != w.shape:
            raise DimensionError(
                f"mix: row weights {backward_weights.shape} do not match weights {w.shape}"
            )
    total = w[..., 0:1] * rows[0].values
    for i, row in enumerate(rows[1:], start=1):
        total = total + w[..., i : i + 1] * row.values

    def rule(grad: np.ndarray):
        grad_weights = np.stack([(grad * row.values).sum(axis=-1) for row in rows], axis=-1)
        return [grad_weights] + [backward_weights[..., i : i + 1] * grad for i in range(len(rows))]

    return record((weights, *rows), total, rule)


def total(x: Tensor) -> Tensor:
    shape = x.shape
    return record((x,), np.asarray(x.values.sum()), lambda g: (np.full(shape, float(g)),))


def mean_all(x: Tensor) -> Tensor:
    shape, count = x.shape, x.size
    return record(
        (x,), np.asarray(x.values.sum() / count), lambda g: (np.full(shape, float(g) / count),)
    )


def weighted_mean(x: Tensor, weights: ArrayLike) -> Tensor:
    """Mean of ``x`` weighted by a constant non-negative mask of the same shape."""
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != x.shape:
        raise DimensionError(f"weights shape {w.shape} does not match {x.shape}")
    norm = w.sum()
    if norm <= 0:
        raise ContractError("weighted_mean needs at least one positive weight")
    return record(
        (x,), np.asarray((x.values * w).sum() / norm), lambda g: (float(g) * w / norm,)
    )


def cross_entropy(probabilities: Tensor, labels: ArrayLike) -> Tensor:
    """
    Negative log-probability of the labelled class, one value per row.

    Probabilities at or below 1e-12 are clamped to the floor; the clamped
    entries pass no gradient and are reported as a warning.

    :param probabilities: Shape ``(..., C)``, each row summing to 1.
    :param labels: Integer class indices of shape ``(...)``.
    :return: Losses of shape ``(...)``.
    """
    probs = probabilities.values
    if probs.ndim == 0:
        raise DimensionError("cross_entropy needs a class axis")
    index = np.asarray(labels)
    if index.shape != probs.shape[:-1]:
        raise DimensionError(f"labels shape {index.shape} does not match {probs.shape[:-1]}")
    if not np.issubdtype(index.dtype, np.integer):
        raise ContractError(f"labels must be integers, got {index.dtype}")
    num_classes = probs.shape[-1]
    if np.any(index < 0) or np.any(index >= num_classes):
        raise ContractError(f"labels must lie in [0, {num_classes})")
    if np.any(np.abs(probs.sum(axis=-1) - 1.0) > PROBABILITY_SUM_TOLERANCE):
        raise ContractError("probabilities must sum to 1")

    gather = index[..., None]
    picked = np.take_along_axis(probs, gather, axis=-1)[..., 0]
    clamped = picked <= PROBABILITY_FLOOR
    if np.any(clamped):
        logger.warning(
            f"cross_entropy clamped {int(clamped.sum())} probabilities at {PROBABILITY_FLOOR}"
        )
    safe = np.where(clamped, PROBABILITY_FLOOR, picked)
    values = -np.log(safe)

    def rule(grad: np.ndarray):
        local = np.where(clamped, 0.0, -grad / safe)
        grad_probs = np.zeros_like(probs)
        np.put_along_axis(grad_probs, gather, local[..., None], axis=-1)
        return (grad_probs,)

    return record((probabilities,), values, rule)

from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field, model_validator

from oadet.constants import UNLABELED
from oadet.diffcore import (
    Tensor,
    add,
    cross_entropy,
    mean_all,
    mean_rows,
    mul,
    scale,
    sub,
    weighted_mean,
)
from oadet.errors import ContractError, DimensionError

TOTAL_TOLERANCE = 1e-12


class LossReport(BaseModel):
    model_config = ConfigDict(extra="forbid")

    classification: float = Field(..., ge=0, description="L_cls")
    prediction: float = Field(..., ge=0, description="L_pre")
    balance: float = Field(..., ge=0, description="lambda")
    feature: float = Field(0.0, ge=0, description="Optional predicted-feature regression")
    feature_weight: float = Field(0.0, ge=0)
    total: float

    @model_validator(mode="after")
    def _check_total(self) -> "LossReport":
        expected = (
            self.classification + self.balance * self.prediction + self.feature_weight * self.feature
        )
        if abs(self.total - expected) > TOTAL_TOLERANCE * max(1.0, abs(expected)):
            raise ValueError(f"total {self.total} differs from the weighted sum {expected}")
        return self


def _masked_cross_entropy(probs: Tensor, labels: ArrayLike) -> Tensor:
    targets = np.asarray(labels)
    valid = targets != UNLABELED
    if not valid.any():
        return Tensor(0.0)
    per_row = cross_entropy(probs, np.where(valid, targets, 0))
    return weighted_mean(per_row, valid.astype(np.float64))


def loss_cls(probs: Tensor, labels: ArrayLike) -> Tensor:
    """Cross-entropy of the current-frame probabilities, averaged over labelled rows."""
    return _masked_cross_entropy(probs, labels)


def loss_pre(class_probs: Sequence[Tensor], labels: ArrayLike) -> Tensor:
    """
    Future-action cross-entropy averaged over the prediction steps.

    :param class_probs: l_d tensors of shape ``(..., C)``.
    :param labels: Ground truth of shape ``(l_d, ...)``.
    """
    targets = np.asarray(labels)
    if targets.ndim == 0 or targets.shape[0] != len(class_probs):
        raise DimensionError(f"{len(class_probs)} prediction steps but labels {targets.shape}")
    if not class_probs:
        raise DimensionError("loss_pre needs at least one prediction step")
    return mean_rows([_masked_cross_entropy(p, y) for p, y in zip(class_probs, targets)])


def feature_regression(features: Sequence[Tensor], targets: ArrayLike) -> Tensor:
    """Mean squared error between predicted and observed future features."""
    observed = np.asarray(targets, dtype=np.float64)
    if observed.ndim == 0 or observed.shape[0] != len(features) or not features:
        raise DimensionError(f"{len(features)} predicted frames but targets {observed.shape}")
    errors = []
    for predicted, target in zip(features, observed):
        diff = sub(predicted, Tensor(target))
        errors.append(mean_all(mul(diff, diff)))
    return mean_rows(errors)


def total_loss(
    classification: Tensor,
    prediction: Tensor,
    balance: float,
    feature: Tensor | None = None,
    feature_weight: float = 0.0,
) -> Tensor:
    """``L_cls + lambda * L_pre`` plus the optional weighted feature term."""
    if balance < 0 or feature_weight < 0:
        raise ContractError("loss weights must be non-negative")
    combined = add(classification, scale(prediction, balance))
    if feature is not None and feature_weight > 0:
        combined = add(combined, scale(feature, feature_weight))
    return combined

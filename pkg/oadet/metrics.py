import numpy as np
from loguru import logger
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field

from oadet.constants import BACKGROUND_CLASS, UNLABELED
from oadet.errors import DimensionError


class EvaluationTable(BaseModel):
    """Per-frame detection quality; means exclude the background class."""

    model_config = ConfigDict(extra="forbid")

    per_class_ap: dict[int, float] = Field(default_factory=dict)
    per_class_cap: dict[int, float] = Field(default_factory=dict)
    mean_ap: float | None = Field(None, description="mAP over action classes with positives")
    mean_cap: float | None = Field(None, description="mcAP over action classes")
    skipped_classes: list[int] = Field(default_factory=list)
    num_frames: int = 0
    unlabeled_frames: int = 0


def _ranking(scores: ArrayLike, positives: ArrayLike) -> tuple[np.ndarray, np.ndarray]:
    values = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(positives, dtype=bool)
    if values.ndim != 1 or values.shape != truth.shape:
        raise DimensionError(f"scores {values.shape} and positives {truth.shape} must be 1-D twins")
    order = np.argsort(-values, kind="stable")
    hits = truth[order]
    return hits, np.cumsum(hits)


def per_frame_ap(scores: ArrayLike, positives: ArrayLike) -> float | None:
    """
    Average precision of ranking frames by ``scores``.

    Ties keep the original frame order. Returns None when there are no
    positive frames.
    """
    hits, true_positives = _ranking(scores, positives)
    num_positive = int(hits.sum())
    if num_positive == 0:
        return None
    precision = true_positives / np.arange(1, hits.size + 1)
    return float(precision[hits].sum() / num_positive)


def calibrated_ap(scores: ArrayLike, positives: ArrayLike) -> float | None:
    """
    Average precision with precision calibrated by the negative/positive ratio.

    cPrec = TP / (TP + FP / w), w = negatives / positives. Returns None
    without both positives and negatives.
    """
    hits, true_positives = _ranking(scores, positives)
    num_positive = int(hits.sum())
    num_negative = hits.size - num_positive
    if num_positive == 0 or num_negative == 0:
        return None
    ratio = num_negative / num_positive
    false_positives = np.arange(1, hits.size + 1) - true_positives
    precision = true_positives / (true_positives + false_positives / ratio)
    return float(precision[hits].sum() / num_positive)


def evaluate_frames(probs: ArrayLike, labels: ArrayLike) -> EvaluationTable:
    """
    Per-class AP and calibrated AP over all frames.

    :param probs: Class probabilities of shape ``(N, C)``.
    :param labels: Frame labels of shape ``(N,)``; UNLABELED frames are ignored.
    """
    scores = np.asarray(probs, dtype=np.float64)
    targets = np.asarray(labels)
    if scores.ndim != 2 or targets.shape != scores.shape[:1]:
        raise DimensionError(f"probs {scores.shape} and labels {targets.shape} do not align")
    labeled = targets != UNLABELED
    unlabeled = int((~labeled).sum())
    if unlabeled:
        logger.warning(f"Excluding {unlabeled} unlabeled frames from evaluation")
    scores, targets = scores[labeled], targets[labeled]

    table = EvaluationTable(num_frames=int(targets.size), unlabeled_frames=unlabeled)
    for cls in range(scores.shape[1]):
        if cls == BACKGROUND_CLASS:
            continue
        positives = targets == cls
        ap = per_frame_ap(scores[:, cls], positives)
        cap = calibrated_ap(scores[:, cls], positives)
        if ap is None:
            table.skipped_classes.append(cls)
            continue
        table.per_class_ap[cls] = ap
        if cap is not None:
            table.per_class_cap[cls] = cap
    if table.per_class_ap:
        table.mean_ap = float(np.mean(list(table.per_class_ap.values())))
    if table.per_class_cap:
        table.mean_cap = float(np.mean(list(table.per_class_cap.values())))
    return table


def horizon_map(future_probs: ArrayLike, future_labels: ArrayLike) -> list[float | None]:
    """
    mAP of the predicted class distributions, one value per prediction step.

    :param future_probs: Shape ``(N, l_d, C)``.
    :param future_labels: Shape ``(N, l_d)``.
    """
    probs = np.asarray(future_probs, dtype=np.float64)
    labels = np.asarray(future_labels)
    if probs.ndim != 3 or labels.shape != probs.shape[:2]:
        raise DimensionError(f"future probs {probs.shape} and labels {labels.shape} do not align")
    return [evaluate_frames(probs[:, step], labels[:, step]).mean_ap for step in range(probs.shape[1])]


def prior_baseline_map(labels: ArrayLike, num_classes: int) -> float | None:
    """Expected mAP of a scorer that ranks frames at random: the mean class prior."""
    targets = np.asarray(labels)
    targets = targets[targets != UNLABELED]
    if targets.size == 0:
        return None
    priors = [
        float(np.mean(targets == cls))
        for cls in range(num_classes)
        if cls != BACKGROUND_CLASS and np.any(targets == cls)
    ]
    return float(np.mean(priors)) if priors else None

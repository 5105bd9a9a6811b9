from dataclasses import dataclass

import numpy as np
from loguru import logger

from oadet.data.sequence import FeatureSequence
from oadet.errors import ContractError


@dataclass(eq=False)
class TrainingSample:
    """
    ``sample_length`` consecutive frames cut from one sequence.

    ``future_labels[t]`` holds the labels of frames ``start + t`` to
    ``start + t + l_d - 1`` of the full sequence, clamped at its end;
    ``future_features`` holds the matching observed features.
    """

    name: str
    start: int
    features: np.ndarray
    labels: np.ndarray
    future_labels: np.ndarray
    future_features: np.ndarray

    @property
    def length(self) -> int:
        return self.features.shape[0]


def _future_indices(length: int, t: int, horizon: int) -> np.ndarray:
    if not 0 <= t < length:
        raise ContractError(f"time {t} outside sequence of {length} frames")
    if horizon < 1:
        raise ContractError(f"horizon must be positive, got {horizon}")
    return np.minimum(np.arange(t, t + horizon), length - 1)


def future_labels(sequence: FeatureSequence, t: int, horizon: int) -> np.ndarray:
    """Labels of frames ``t .. t + horizon - 1``; frames past the end repeat the last label."""
    return sequence.labels[_future_indices(sequence.length, t, horizon)]


def future_features(sequence: FeatureSequence, t: int, horizon: int) -> np.ndarray:
    return sequence.features[_future_indices(sequence.length, t, horizon)]


def draw_offset(sample_length: int, rng: np.random.Generator) -> int:
    """Frames chopped from the start of every sequence this epoch, in ``[1, l_e]``."""
    return int(rng.integers(1, sample_length + 1))


def chunk_training_samples(
    sequence: FeatureSequence,
    sample_length: int,
    offset: int,
    horizon: int,
) -> list[TrainingSample]:
    """
    Drop the first ``offset`` frames and cut the rest into non-overlapping samples.

    Yields ``floor((T - offset) / sample_length)`` samples; a trailing
    partial window is discarded.

    :param sequence: The sequence to cut.
    :param sample_length: l_e, frames per sample.
    :param offset: Delta, in ``[1, sample_length]``.
    :param horizon: l_d, future steps attached to every frame.
    """
    if sample_length < 1:
        raise ContractError(f"sample length must be positive, got {sample_length}")
    if not 1 <= offset <= sample_length:
        raise ContractError(f"offset {offset} outside [1, {sample_length}]")
    count = max(0, (sequence.length - offset) // sample_length)
    if count == 0:
        logger.warning(
            f"{sequence.name}: {sequence.length} frames too short for offset {offset} "
            f"and sample length {sample_length}"
        )
        return []

    steps = np.arange(horizon)
    samples = []
    for index in range(count):
        start = offset + index * sample_length
        frames = np.arange(start, start + sample_length)
        ahead = np.minimum(frames[:, None] + steps[None, :], sequence.length - 1)
        samples.append(
            TrainingSample(
                name=sequence.name,
                start=start,
                features=sequence.features[frames],
                labels=sequence.labels[frames],
                future_labels=sequence.labels[ahead],
                future_features=sequence.features[ahead],
            )
        )
    return samples

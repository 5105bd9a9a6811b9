from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike

from oadet.diffcore import Tensor
from oadet.errors import ConfigError, DimensionError


@dataclass(frozen=True)
class HistoryStack:
    """
    The last ``capacity`` observed features, oldest first.

    ``entries`` has shape ``(capacity, ..., D)``; the middle axes are the
    optional batch of independent streams.
    """

    entries: np.ndarray

    @classmethod
    def zeros(cls, capacity: int, dim: int, batch: int | None = None) -> "HistoryStack":
        if capacity < 1 or dim < 1:
            raise ConfigError(f"history needs positive capacity and dim, got {capacity}, {dim}")
        lead = () if batch is None else (batch,)
        return cls(entries=np.zeros((capacity, *lead, dim)))

    @property
    def capacity(self) -> int:
        return self.entries.shape[0]

    @property
    def frame_shape(self) -> tuple[int, ...]:
        return self.entries.shape[1:]

    def __len__(self) -> int:
        return self.capacity


@dataclass(frozen=True)
class FeaturePool:
    """History followed by predicted futures, chronological, ``2 * boundary`` frames."""

    frames: tuple[Tensor, ...]
    boundary: int

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def history(self) -> tuple[Tensor, ...]:
        return self.frames[: self.boundary]

    @property
    def futures(self) -> tuple[Tensor, ...]:
        return self.frames[self.boundary :]


def push_history(stack: HistoryStack, feature: ArrayLike) -> HistoryStack:
    """Drop the oldest entry and append ``feature``; the length is unchanged."""
    frame = np.asarray(feature, dtype=np.float64)
    if frame.shape != stack.frame_shape:
        raise DimensionError(f"feature shape {frame.shape} does not match {stack.frame_shape}")
    return HistoryStack(entries=np.concatenate([stack.entries[1:], frame[None]], axis=0))


def build_pool(history: HistoryStack, futures: Sequence[Tensor]) -> FeaturePool:
    if len(futures) != history.capacity:
        raise DimensionError(f"expected {history.capacity} predicted frames, got {len(futures)}")
    for future in futures:
        if future.shape != history.frame_shape:
            raise DimensionError(
                f"predicted frame shape {future.shape} does not match {history.frame_shape}"
            )
    observed = tuple(Tensor(entry) for entry in history.entries)
    return FeaturePool(frames=observed + tuple(futures), boundary=history.capacity)

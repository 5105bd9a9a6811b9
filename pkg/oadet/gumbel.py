import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field, model_validator

from oadet.constants import UNIFORM_CLAMP
from oadet.diffcore import Tensor, add, record, scale, softmax
from oadet.enums.mode import Mode
from oadet.errors import ConfigError, ContractError, DimensionError


class TemperatureSchedule(BaseModel):
    """Per-epoch exponential annealing of the relaxation temperature."""

    model_config = ConfigDict(extra="forbid")

    initial: float = Field(5.0, gt=0, description="Temperature at epoch 0")
    floor: float = Field(0.1, gt=0, description="Lowest temperature ever returned")
    decay_rate: float | None = Field(
        None, ge=0, description="Per-epoch decay; solved from the run length when unset"
    )

    @model_validator(mode="after")
    def _check_floor(self) -> "TemperatureSchedule":
        if self.floor > self.initial:
            raise ConfigError(f"temperature floor {self.floor} exceeds initial {self.initial}")
        return self

    def resolved(self, final_epoch: int) -> "TemperatureSchedule":
        """Return a copy whose decay reaches the floor exactly at ``final_epoch``."""
        if self.decay_rate is not None:
            return self
        rate = math.log(self.initial / self.floor) / final_epoch if final_epoch > 0 else 0.0
        return self.model_copy(update={"decay_rate": rate})


@dataclass
class ProgressionDistribution:
    """One step's progression estimate, its relaxation and its hard sample."""

    soft_estimate: np.ndarray
    relaxed: np.ndarray
    hard_sample: np.ndarray
    one_hot: np.ndarray
    temperature: float
    selection: Tensor


def temperature_at(schedule: TemperatureSchedule, epoch: int) -> float:
    if epoch < 0:
        raise ContractError(f"epoch must be non-negative, got {epoch}")
    rate = schedule.decay_rate or 0.0
    return max(schedule.floor, schedule.initial * math.exp(-rate * epoch))


def gumbel_from_uniform(uniform: ArrayLike) -> np.ndarray:
    """Map uniform draws to standard Gumbel noise ``-log(-log U)``."""
    clamped = np.clip(np.asarray(uniform, dtype=np.float64), UNIFORM_CLAMP, 1.0 - UNIFORM_CLAMP)
    return -np.log(-np.log(clamped))


def sample_gumbel(shape: int | tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    dims = (shape,) if isinstance(shape, int) else tuple(shape)
    if not dims or any(extent < 1 for extent in dims):
        raise ContractError(f"Gumbel sample shape must be positive, got {shape}")
    return gumbel_from_uniform(rng.random(dims))


def gumbel_max_select(log_probs: ArrayLike, noise: ArrayLike) -> np.ndarray:
    """Hard categorical sample ``argmax(log_probs + noise)``; ties go to the lowest index."""
    scores = np.asarray(log_probs, dtype=np.float64)
    perturbation = np.asarray(noise, dtype=np.float64)
    if scores.shape != perturbation.shape:
        raise DimensionError(f"noise shape {perturbation.shape} does not match {scores.shape}")
    if scores.ndim == 0 or scores.shape[-1] < 2:
        raise ContractError("Gumbel-Max selection needs at least two states")
    return np.argmax(scores + perturbation, axis=-1)


def gumbel_softmax_relax(log_probs: Tensor, noise: ArrayLike, temperature: float) -> Tensor:
    if temperature <= 0:
        raise ContractError(f"temperature must be positive, got {temperature}")
    perturbation = np.asarray(noise, dtype=np.float64)
    if perturbation.shape != log_probs.shape:
        raise DimensionError(f"noise shape {perturbation.shape} does not match {log_probs.shape}")
    return softmax(scale(add(log_probs, Tensor(perturbation)), 1.0 / temperature))


def one_hot(indices: ArrayLike, num_states: int) -> np.ndarray:
    return np.eye(num_states)[np.asarray(indices)]


def straight_through(hard_one_hot: ArrayLike, relaxed: Tensor) -> Tensor:
    """
    Forward the hard one-hot sample; backward through the relaxed vector.

    Equivalent to ``hard + (relaxed - stop_gradient(relaxed))``: the upstream
    gradient is handed to ``relaxed`` unchanged.
    """
    hard = np.asarray(hard_one_hot, dtype=np.float64)
    if hard.shape != relaxed.shape:
        raise DimensionError(f"one-hot shape {hard.shape} does not match {relaxed.shape}")
    if not (np.all((hard == 0.0) | (hard == 1.0)) and np.all(hard.sum(axis=-1) == 1.0)):
        raise ContractError("hard sample is not one-hot")
    chosen = np.take_along_axis(relaxed.values, hard.argmax(axis=-1)[..., None], axis=-1)[..., 0]
    if np.any(chosen < relaxed.values.max(axis=-1)):
        raise ContractError("relaxed argmax disagrees with the hard sample")
    return record((relaxed,), hard.copy(), lambda g: (g,))


def sample_progression(
    log_probs: Tensor,
    temperature: float,
    mode: Mode,
    rng: np.random.Generator | None = None,
) -> ProgressionDistribution:
    """
    Draw a progression state from estimated log-probabilities.

    Training perturbs the log-probabilities with Gumbel noise; evaluation is
    noise-free, so the hard sample is the plain argmax.

    :param log_probs: Log-probabilities of shape ``(..., P)``.
    :param temperature: Relaxation temperature.
    :param mode: Train or eval.
    :param rng: Noise source, required in training.
    :return: The distribution with a straight-through ``selection`` tensor.
    """
    if mode == Mode.TRAIN:
        if rng is None:
            raise ContractError("training-mode sampling needs a random generator")
        noise = sample_gumbel(log_probs.shape, rng)
    else:
        noise = np.zeros(log_probs.shape)
    hard = gumbel_max_select(log_probs.values, noise)
    relaxed = gumbel_softmax_relax(log_probs, noise, temperature)
    hard_one_hot = one_hot(hard, log_probs.shape[-1])
    return ProgressionDistribution(
        soft_estimate=np.exp(log_probs.values),
        relaxed=relaxed.values.copy(),
        hard_sample=hard,
        one_hot=hard_one_hot,
        temperature=temperature,
        selection=straight_through(hard_one_hot, relaxed),
    )

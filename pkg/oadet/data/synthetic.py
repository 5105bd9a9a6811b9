import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from oadet.data.sequence import FeatureSequence
from oadet.enums.random_stream import RandomStream
from oadet.utils.rng import derive_rng


class SyntheticConfig(BaseModel):
    """
    Desk-scale stand-in for extracted video features.

    Each class c has a prototype mu_c and a drift direction delta_c. Frame j
    of an action segment of length L is ``mu_c + (j / L) * delta_c + noise``,
    so what a frame looks like depends on how far the action has progressed.
    """

    model_config = ConfigDict(extra="forbid")

    num_actions: int = Field(5, ge=1, description="C: action classes besides background")
    feature_dim: int = Field(32, ge=1, description="D")
    num_sequences: int = Field(60, ge=1)
    length_range: tuple[int, int] = Field((96, 192), description="Frames per sequence")
    segment_range: tuple[int, int] = Field((8, 32), description="Frames per action segment")
    background_range: tuple[int, int] = Field((4, 24), description="Frames between segments")
    phases: int | None = Field(
        None, ge=1, description="Quantize the drift into this many stages; None keeps it linear"
    )
    drift_scale: float = Field(0.5, ge=0)
    noise_scale: float = Field(0.3, ge=0, description="sigma of the per-frame Gaussian noise")
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _check_ranges(self) -> "SyntheticConfig":
        for name in ("length_range", "segment_range", "background_range"):
            low, high = getattr(self, name)
            if low < 1 or low > high:
                raise ValueError(f"{name} must satisfy 1 <= low <= high, got {(low, high)}")
        if self.length_range[0] <= self.background_range[1]:
            raise ValueError("shortest sequence must outlast the longest leading background gap")
        return self


def synthetic_prototypes(config: SyntheticConfig) -> tuple[np.ndarray, np.ndarray]:
    """Class prototypes and drift directions, rows indexed by label (0 = background)."""
    rng = np.random.default_rng(config.seed)
    prototypes = rng.normal(0.0, 1.0, size=(config.num_actions + 1, config.feature_dim))
    drifts = rng.normal(0.0, config.drift_scale, size=(config.num_actions + 1, config.feature_dim))
    drifts[0] = 0.0
    return prototypes, drifts


def _progress(length: int, phases: int | None) -> np.ndarray:
    steps = np.arange(length)
    if phases is None:
        return steps / length
    return np.floor(steps * phases / length) / phases


def generate_synthetic(config: SyntheticConfig) -> list[FeatureSequence]:
    """
    Generate labelled sequences; a pure function of ``config``.

    Every sequence opens with background and contains at least one action
    segment.
    """
    prototypes, drifts = synthetic_prototypes(config)
    rng = derive_rng(config.seed, RandomStream.SYNTHETIC)

    def draw(bounds: tuple[int, int]) -> int:
        return int(rng.integers(bounds[0], bounds[1] + 1))

    sequences = []
    for index in range(config.num_sequences):
        length = draw(config.length_range)
        labels = np.zeros(length, dtype=np.int64)
        progress = np.zeros(length)
        cursor = draw(config.background_range)
        while cursor < length:
            segment = min(draw(config.segment_range), length - cursor)
            labels[cursor : cursor + segment] = rng.integers(1, config.num_actions + 1)
            progress[cursor : cursor + segment] = _progress(segment, config.phases)
            cursor += segment + draw(config.background_range)
        noise = config.noise_scale * rng.normal(size=(length, config.feature_dim))
        features = prototypes[labels] + progress[:, None] * drifts[labels] + noise
        sequences.append(
            FeatureSequence(
                name=f"synthetic_{index:04d}",
                features=features,
                labels=labels,
                num_actions=config.num_actions,
            )
        )
    return sequences

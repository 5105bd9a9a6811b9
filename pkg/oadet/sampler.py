import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from oadet.diffcore import Tensor, mean_rows, mix
from oadet.errors import ConfigError, ContractError, DimensionError
from oadet.gumbel import ProgressionDistribution, one_hot
from oadet.memory import FeaturePool


def compute_stride(history_size: int, window_size: int, num_states: int) -> int:
    """
    Offset between consecutive windows, ``floor((2 * l_d - K) / (P - 1))``.

    This tiles P windows of length K across the 2 * l_d pool with the last
    one ending at or before the pool end.
    """
    if num_states < 2:
        raise ConfigError(f"need at least two progression states, got {num_states}")
    if history_size < 1:
        raise ConfigError(f"history size must be positive, got {history_size}")
    if not 1 <= window_size <= 2 * history_size:
        raise ConfigError(f"window size {window_size} outside [1, {2 * history_size}]")
    return (2 * history_size - window_size) // (num_states - 1)


class SamplerConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    history_size: int = Field(8, ge=1, description="l_d: history and prediction depth")
    window_size: int = Field(7, ge=1, description="K: frames averaged per window")
    num_states: int = Field(4, ge=2, description="P: latent progression states")

    @model_validator(mode="after")
    def _check_geometry(self) -> "SamplerConfig":
        compute_stride(self.history_size, self.window_size, self.num_states)
        return self

    @property
    def stride(self) -> int:
        return compute_stride(self.history_size, self.window_size, self.num_states)

    @property
    def pool_size(self) -> int:
        return 2 * self.history_size


def window_indices(
    progression: int, stride: int, window_size: int, num_states: int | None = None
) -> range:
    """Pool indices ``[p * s, p * s + K)`` read for progression state ``p``."""
    if progression < 0 or (num_states is not None and progression >= num_states):
        raise ContractError(f"progression {progression} outside [0, {num_states})")
    start = progression * stride
    return range(start, start + window_size)


def aggregate_window(pool: FeaturePool, indices: range) -> Tensor:
    if len(indices) == 0 or indices.start < 0 or indices.stop > len(pool):
        raise ContractError(f"window {indices} outside pool of {len(pool)} frames")
    return mean_rows([pool.frames[i] for i in indices])


def window_means(pool: FeaturePool, config: SamplerConfig) -> list[Tensor]:
    if len(pool) != config.pool_size:
        raise DimensionError(f"pool has {len(pool)} frames, config expects {config.pool_size}")
    stride = config.stride
    return [
        aggregate_window(pool, window_indices(p, stride, config.window_size, config.num_states))
        for p in range(config.num_states)
    ]


def adaptive_supplementary(
    pool: FeaturePool, distribution: ProgressionDistribution, config: SamplerConfig
) -> Tensor:
    """
    Supplementary feature f_s: the mean of the window picked by the hard sample.

    The forward value is exactly the chosen window mean. The backward pass is
    that of the relaxed mixture ``sum_i relaxed_i * window_i``: the logits get
    it through the straight-through selection and every window, including the
    predicted-future frames it overlaps, gets its relaxed share.
    """
    selection = distribution.selection
    if selection.shape[-1] != config.num_states:
        raise DimensionError(
            f"selection over {selection.shape[-1]} states, config has {config.num_states}"
        )
    return mix(selection, window_means(pool, config), row_weights=distribution.relaxed)


def fixed_progression(
    progression: int,
    config: SamplerConfig,
    lead_shape: tuple[int, ...] = (),
    temperature: float = 1.0,
) -> ProgressionDistribution:
    """A constant selection of one window; no estimation, no sampling."""
    window_indices(progression, config.stride, config.window_size, config.num_states)
    hard = np.full(lead_shape, progression, dtype=np.int64)
    chosen = one_hot(hard, config.num_states)
    return ProgressionDistribution(
        soft_estimate=chosen,
        relaxed=chosen,
        hard_sample=hard,
        one_hot=chosen,
        temperature=temperature,
        selection=Tensor(chosen),
    )

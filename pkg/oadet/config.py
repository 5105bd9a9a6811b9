import os
from pathlib import Path
from typing import Any, Optional

import yaml
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from oadet.cells import DEFAULT_HIDDEN_SIZE, DetectorConfig
from oadet.data.synthetic import SyntheticConfig
from oadet.errors import ConfigError
from oadet.gumbel import TemperatureSchedule
from oadet.sampler import SamplerConfig, compute_stride


class RunConfig(BaseModel):
    """Every hyperparameter of a training, evaluation or ablation run."""

    model_config = ConfigDict(extra="forbid")

    sample_length: int = Field(64, ge=1, description="l_e: frames per training sample")
    history_size: int = Field(8, ge=1, description="l_d: history and prediction depth")
    num_states: int = Field(4, ge=2, description="P: progression states")
    window_size: int = Field(7, ge=1, description="K: frames averaged per window")
    hidden_size: int = Field(DEFAULT_HIDDEN_SIZE, ge=1)
    loss_balance: float = Field(1.0, ge=0, description="lambda weighting the prediction loss")
    feature_loss_weight: float = Field(0.0, ge=0)
    learning_rate: float = Field(5e-4, gt=0)
    weight_decay: float = Field(1e-3, ge=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    epsilon: float = Field(1e-8, gt=0)
    clip_norm: Optional[float] = Field(5.0, gt=0)
    batch_size: int = Field(16, ge=1)
    epochs: int = Field(30, ge=1)
    temperature: TemperatureSchedule = Field(default_factory=TemperatureSchedule)
    seed: int = Field(0, ge=0, lt=2**64)
    manifest: Optional[Path] = None
    synthetic: SyntheticConfig = Field(default_factory=SyntheticConfig)
    test_fraction: float = Field(0.25, ge=0, lt=1)
    output_dir: Path = Path("runs")
    adaptive_sampling: bool = True
    freeze_decoder: bool = False

    @model_validator(mode="after")
    def _check_geometry(self) -> "RunConfig":
        compute_stride(self.history_size, self.window_size, self.num_states)
        return self

    @property
    def sampler(self) -> SamplerConfig:
        return SamplerConfig(
            history_size=self.history_size,
            window_size=self.window_size,
            num_states=self.num_states,
        )

    @property
    def schedule(self) -> TemperatureSchedule:
        return self.temperature.resolved(self.epochs - 1)

    def detector_config(self, feature_dim: int, num_classes: int) -> DetectorConfig:
        return DetectorConfig(
            feature_dim=feature_dim,
            num_classes=num_classes,
            hidden_size=self.hidden_size,
            sampler=self.sampler,
            adaptive_sampling=self.adaptive_sampling,
        )

    def with_overrides(self, **updates: Any) -> "RunConfig":
        """Copy with the non-None ``updates`` applied and re-validated."""
        data = self.model_dump()
        data.update({key: value for key, value in updates.items() if value is not None})
        return RunConfig.model_validate(data)


CONFIG_PATH = Path(os.environ.get("OADET_CONFIG_PATH", "./oadet.json"))


def load_config(path: Path | None = None) -> RunConfig:
    """
    Load and validate a run configuration.

    JSON and YAML files are both accepted. Without an explicit path the
    ``OADET_CONFIG_PATH`` file is used if it exists, else the defaults.
    """
    if path is None:
        if not CONFIG_PATH.is_file():
            return RunConfig()
        path = CONFIG_PATH
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    with open(path, "r") as f:
        config_data = yaml.safe_load(f)
    if not config_data:
        return RunConfig()
    if not isinstance(config_data, dict):
        raise ConfigError(f"config file {path} must hold a mapping")
    try:
        return RunConfig(**config_data)
    except ValidationError as e:
        logger.error(f"Error validating {path}: {e}")
        raise

import numpy as np
import pytest
from loguru import logger

from oadet.cells import DetectorConfig, DetectorParameters
from oadet.config import RunConfig
from oadet.data import Dataset
from oadet.data.manifest import split_synthetic
from oadet.data.synthetic import SyntheticConfig
from oadet.sampler import SamplerConfig


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config() -> DetectorConfig:
    return DetectorConfig(
        feature_dim=4,
        num_classes=3,
        hidden_size=6,
        sampler=SamplerConfig(history_size=3, window_size=3, num_states=3),
    )


@pytest.fixture
def tiny_params(tiny_config: DetectorConfig) -> DetectorParameters:
    return DetectorParameters.initialize(tiny_config, np.random.default_rng(7))


@pytest.fixture
def tiny_synthetic() -> SyntheticConfig:
    return SyntheticConfig(
        num_actions=2,
        feature_dim=4,
        num_sequences=6,
        length_range=(24, 40),
        segment_range=(4, 8),
        background_range=(2, 6),
        seed=3,
    )


@pytest.fixture
def tiny_run(tiny_synthetic: SyntheticConfig) -> RunConfig:
    return RunConfig(
        sample_length=8,
        history_size=3,
        num_states=3,
        window_size=3,
        hidden_size=6,
        batch_size=4,
        epochs=4,
        synthetic=tiny_synthetic,
        test_fraction=0.34,
    )


@pytest.fixture
def tiny_dataset(tiny_run: RunConfig) -> Dataset:
    return split_synthetic(tiny_run.synthetic, tiny_run.test_fraction)


@pytest.fixture
def captured_logs():
    """Messages logged while the test runs."""
    messages: list[str] = []
    handler = logger.add(messages.append, level="DEBUG", format="{level} {message}")
    yield messages
    logger.remove(handler)

import json
from dataclasses import dataclass, field
from pathlib import Path

from loguru import logger
from pydantic import BaseModel, ConfigDict

from oadet.constants import TEST_SPLIT, TRAIN_SPLIT
from oadet.data.sequence import FeatureSequence, load_sequence, save_sequence
from oadet.data.synthetic import SyntheticConfig, generate_synthetic
from oadet.errors import ConfigError


class DatasetManifest(BaseModel):
    """Split name to LAPF files, paths relative to the manifest file."""

    model_config = ConfigDict(extra="forbid")

    splits: dict[str, list[Path]]

    @classmethod
    def load(cls, path: Path) -> "DatasetManifest":
        path = Path(path)
        manifest = cls.model_validate_json(path.read_text())
        root = path.parent
        return cls(
            splits={
                name: [p if p.is_absolute() else root / p for p in files]
                for name, files in manifest.splits.items()
            }
        )

    def save(self, path: Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.model_dump(mode="json"), indent=2))


@dataclass
class Dataset:
    train: list[FeatureSequence] = field(default_factory=list)
    test: list[FeatureSequence] = field(default_factory=list)


def load_split(manifest_path: Path, split: str) -> list[FeatureSequence]:
    manifest = DatasetManifest.load(manifest_path)
    if split not in manifest.splits:
        raise ConfigError(f"split {split!r} not in manifest {manifest_path}")
    return [load_sequence(p) for p in manifest.splits[split]]


def split_synthetic(config: SyntheticConfig, test_fraction: float) -> Dataset:
    sequences = generate_synthetic(config)
    held_out = int(round(len(sequences) * test_fraction))
    if held_out >= len(sequences):
        raise ConfigError(f"test fraction {test_fraction} leaves no training sequences")
    cut = len(sequences) - held_out
    return Dataset(train=sequences[:cut], test=sequences[cut:])


def load_dataset(
    manifest_path: Path | None, synthetic: SyntheticConfig, test_fraction: float
) -> Dataset:
    """Read the manifest splits, or generate a synthetic dataset when no manifest is given."""
    if manifest_path is None:
        dataset = split_synthetic(synthetic, test_fraction)
        logger.info(
            f"Generated synthetic dataset: {len(dataset.train)} train, {len(dataset.test)} test"
        )
        return dataset
    manifest = DatasetManifest.load(manifest_path)
    dataset = Dataset(
        train=[load_sequence(p) for p in manifest.splits.get(TRAIN_SPLIT, [])],
        test=[load_sequence(p) for p in manifest.splits.get(TEST_SPLIT, [])],
    )
    logger.info(f"Loaded {len(dataset.train)} train and {len(dataset.test)} test sequences")
    return dataset


def write_dataset(dataset: Dataset, directory: Path) -> Path:
    """Save every sequence as LAPF and write ``manifest.json`` next to them."""
    directory = Path(directory)
    splits: dict[str, list[Path]] = {}
    for split, sequences in ((TRAIN_SPLIT, dataset.train), (TEST_SPLIT, dataset.test)):
        splits[split] = []
        for sequence in sequences:
            relative = Path(split) / f"{sequence.name}.lapf"
            save_sequence(sequence, directory / relative)
            splits[split].append(relative)
    manifest_path = directory / "manifest.json"
    DatasetManifest(splits=splits).save(manifest_path)
    logger.info(f"Wrote manifest {manifest_path}")
    return manifest_path

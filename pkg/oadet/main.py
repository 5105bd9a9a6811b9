import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, List, Optional

import typer
from loguru import logger
from pydantic import ValidationError
from typer import Typer

from oadet.ablate import run_ablation
from oadet.checkpoint import load_checkpoint
from oadet.config import RunConfig, load_config
from oadet.constants import TEST_SPLIT, TRAIN_SPLIT
from oadet.data import Dataset, load_dataset, load_split, write_dataset
from oadet.data.manifest import split_synthetic
from oadet.enums.sweep_type import SweepType
from oadet.errors import ConfigError, OadetError
from oadet.evaluate import evaluate
from oadet.stream import open_frames, run_stream
from oadet.train import train as train_detector

app = Typer()

VALIDATION_EXIT = 1
RUNTIME_EXIT = 2

ConfigOption = typer.Option(None, "--config", help="JSON or YAML run configuration")
SeedOption = typer.Option(None, "--seed", help="Override the configured seed")
OutOption = typer.Option(None, "--out", help="Output directory")


@app.callback()
def configure_logging(
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Log per-batch detail"),
):
    """Online action detection with learned action progression."""
    logger.remove()
    logger.add(lambda message: sys.stderr.write(message), level="DEBUG" if verbose else "INFO")


@contextmanager
def exit_codes() -> Iterator[None]:
    """Map validation failures to exit code 1 and runtime failures to exit code 2."""
    try:
        yield
    except (ConfigError, ValidationError) as e:
        logger.error(f"Invalid configuration: {e}")
        raise typer.Exit(code=VALIDATION_EXIT)
    except (OadetError, OSError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        raise typer.Exit(code=RUNTIME_EXIT)


def resolve_config(config_path: Path | None, seed: int | None, out: Path | None) -> RunConfig:
    return load_config(config_path).with_overrides(seed=seed, output_dir=out)


def resolve_dataset(config: RunConfig) -> Dataset:
    return load_dataset(config.manifest, config.synthetic, config.test_fraction)


@app.command()
def train(
    config_path: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    out: Optional[Path] = OutOption,
    checkpoint: Optional[Path] = typer.Option(None, "--checkpoint", help="Resume from this checkpoint"),
):
    """
    Train the detector and write the training log and checkpoint.

    :param config_path: Run configuration file.
    :param seed: Seed override.
    :param out: Output directory override.
    :param checkpoint: Checkpoint to resume from; its stored configuration wins.
    """
    with exit_codes():
        if checkpoint is not None:
            resume = load_checkpoint(checkpoint)
            config = resume.config.with_overrides(output_dir=out)
            resume.config = config
        else:
            resume = None
            config = resolve_config(config_path, seed, out)
        result = train_detector(config, resolve_dataset(config), resume, config.output_dir)
        logger.info(f"Training finished after {result.checkpoint.epoch} epochs")


@app.command("eval")
def eval_command(
    checkpoint: Path = typer.Option(..., "--checkpoint", help="Trained checkpoint"),
    manifest: Optional[Path] = typer.Option(None, "--manifest", help="Dataset manifest"),
    split: str = typer.Option(TEST_SPLIT, "--split", help="Manifest split to evaluate"),
    out: Optional[Path] = OutOption,
):
    """
    Evaluate a checkpoint frame by frame and write metrics.json and frames.csv.

    Without a manifest the checkpoint's own dataset configuration is used.
    """
    with exit_codes():
        trained = load_checkpoint(checkpoint)
        if manifest is not None:
            sequences = load_split(manifest, split)
        elif split in (TRAIN_SPLIT, TEST_SPLIT):
            sequences = getattr(resolve_dataset(trained.config), split)
        else:
            raise ConfigError(f"unknown split {split!r}")
        report = evaluate(trained, sequences, out or trained.config.output_dir)
        print(report.table.model_dump_json(indent=2))


@app.command()
def stream(
    input_path: Path = typer.Argument(..., help="LAPF file or text file of comma-separated frames"),
    checkpoint: Path = typer.Option(..., "--checkpoint", help="Trained checkpoint"),
):
    """Classify frames as they are read and print one CSV line per frame."""
    with exit_codes():
        trained = load_checkpoint(checkpoint)
        frames = open_frames(input_path, trained.detector.feature_dim)
        run_stream(trained.params, trained.detector, frames, sys.stdout)


@app.command()
def ablate(
    sweep: SweepType,
    values: Optional[List[int]] = typer.Option(None, "--value", help="Swept K or P values"),
    seeds: List[int] = typer.Option([0, 1, 2], "--seed", help="Seeds shared by every variant"),
    config_path: Optional[Path] = ConfigOption,
    out: Optional[Path] = OutOption,
):
    """
    Train and evaluate each variant of a sweep over shared seeds.

    :param sweep: adaptive, window-size or num-states.
    :param values: Values for the window-size and num-states sweeps.
    :param seeds: Seeds run for every variant.
    """
    with exit_codes():
        config = resolve_config(config_path, None, out)
        table = run_ablation(
            config, resolve_dataset(config), sweep, values, seeds, config.output_dir
        )
        print(table)


@app.command()
def gen_data(
    config_path: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    out: Optional[Path] = OutOption,
):
    """Write the synthetic dataset as LAPF files plus manifest.json."""
    with exit_codes():
        config = load_config(config_path)
        synthetic = config.synthetic
        if seed is not None:
            synthetic = synthetic.model_validate({**synthetic.model_dump(), "seed": seed})
        dataset = split_synthetic(synthetic, config.test_fraction)
        manifest = write_dataset(dataset, out or config.output_dir / "data")
        print(manifest)


if __name__ == "__main__":
    app()

import csv
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from loguru import logger
from pydantic import BaseModel, Field

from oadet.config import RunConfig
from oadet.data import Dataset
from oadet.enums.sweep_type import SweepType
from oadet.errors import ConfigError
from oadet.evaluate import evaluate
from oadet.train import train

ABLATION_FILE = "ablation.csv"


class AblationVariant(BaseModel):
    name: str
    overrides: dict[str, Any] = Field(default_factory=dict)


class AblationRow(BaseModel):
    variant: str
    seed: int
    mean_ap: float | None
    mean_cap: float | None
    future_map: float | None = None


class AblationTable(BaseModel):
    sweep: SweepType
    rows: list[AblationRow] = Field(default_factory=list)

    def variant_means(self) -> dict[str, tuple[float | None, float | None, float | None]]:
        """Mean mAP, mcAP and future mAP per variant over its seeds, in sweep order."""
        means: dict[str, tuple[float | None, float | None, float | None]] = {}
        for name in dict.fromkeys(row.variant for row in self.rows):
            rows = [row for row in self.rows if row.variant == name]
            means[name] = (
                _mean([row.mean_ap for row in rows]),
                _mean([row.mean_cap for row in rows]),
                _mean([row.future_map for row in rows]),
            )
        return means

    def __str__(self) -> str:
        lines = [f"{'variant':<16}{'mAP':>10}{'mcAP':>10}{'future':>10}"]
        for name, (ap, cap, future) in self.variant_means().items():
            lines.append(f"{name:<16}{_percent(ap):>10}{_percent(cap):>10}{_percent(future):>10}")
        return "\n".join(lines)


def _mean(values: list[float | None]) -> float | None:
    defined = [value for value in values if value is not None]
    return float(np.mean(defined)) if defined else None


def _percent(value: float | None) -> str:
    return "-" if value is None else f"{100 * value:.1f}"


def sweep_variants(sweep: SweepType, values: Sequence[int] | None = None) -> list[AblationVariant]:
    """
    Variants compared by a sweep.

    The adaptive sweep compares progression-driven sampling against the
    fixed most-future window and ignores ``values``.
    """
    match sweep:
        case SweepType.ADAPTIVE:
            return [
                AblationVariant(name="adaptive", overrides={"adaptive_sampling": True}),
                AblationVariant(name="fixed-future", overrides={"adaptive_sampling": False}),
            ]
        case SweepType.WINDOW_SIZE:
            field = "window_size"
        case SweepType.NUM_STATES:
            field = "num_states"
    if not values:
        raise ConfigError(f"sweep {sweep.value} needs at least one value")
    return [AblationVariant(name=f"{field}={v}", overrides={field: v}) for v in values]


def run_ablation(
    config: RunConfig,
    dataset: Dataset,
    sweep: SweepType,
    values: Sequence[int] | None = None,
    seeds: Sequence[int] = (0, 1, 2),
    output_dir: Path | None = None,
) -> AblationTable:
    """
    Train and evaluate every variant of ``sweep`` once per seed.

    All variants share the dataset and the seed list. Variant configs are
    validated before any training starts.
    """
    variants = sweep_variants(sweep, values)
    configs = {
        (variant.name, seed): config.with_overrides(seed=seed, **variant.overrides)
        for variant in variants
        for seed in seeds
    }
    table = AblationTable(sweep=sweep)
    for (name, seed), variant_config in configs.items():
        logger.info(f"Ablation {sweep.value}: training {name} with seed {seed}")
        result = train(variant_config, dataset)
        report = evaluate(result.checkpoint, dataset.test)
        table.rows.append(
            AblationRow(
                variant=name,
                seed=seed,
                mean_ap=report.table.mean_ap,
                mean_cap=report.table.mean_cap,
                future_map=report.mean_horizon_map,
            )
        )
    logger.info(f"Ablation {sweep.value} finished:\n{table}")
    if output_dir is not None:
        write_ablation(table, Path(output_dir) / ABLATION_FILE)
    return table


def write_ablation(table: AblationTable, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["variant", "seed", "mAP", "mcAP", "future_mAP"])
        for row in table.rows:
            writer.writerow(
                [
                    row.variant,
                    row.seed,
                    _cell(row.mean_ap),
                    _cell(row.mean_cap),
                    _cell(row.future_map),
                ]
            )
        for name, means in table.variant_means().items():
            writer.writerow([name, "mean", *(_cell(value) for value in means)])
    logger.info(f"Wrote ablation table to {path}")


def _cell(value: float | None) -> str:
    return "" if value is None else repr(value)

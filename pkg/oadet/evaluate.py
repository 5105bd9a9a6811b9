import csv
import json
from pathlib import Path
from typing import Sequence

import numpy as np
from loguru import logger
from pydantic import BaseModel, Field

from oadet.checkpoint import Checkpoint
from oadet.data import FeatureSequence, future_labels
from oadet.errors import DimensionError
from oadet.metrics import EvaluationTable, evaluate_frames, horizon_map, prior_baseline_map
from oadet.stream import FrameDetection, stream_detections

METRICS_FILE = "metrics.json"
FRAMES_FILE = "frames.csv"


class EvaluationReport(BaseModel):
    """Everything ``metrics.json`` holds."""

    table: EvaluationTable
    horizon_map: list[float | None] = Field(
        default_factory=list, description="Future-step mAP, one value per prediction step"
    )
    mean_horizon_map: float | None = Field(
        None, description="Future-step mAP averaged over the defined steps"
    )
    prior_map: float | None = Field(None, description="mAP of a random-order scorer")
    num_sequences: int = 0


def detect_sequence(checkpoint: Checkpoint, sequence: FeatureSequence) -> list[FrameDetection]:
    """Stream one sequence through the detector; labels are never read."""
    detector = checkpoint.detector
    if sequence.feature_dim != detector.feature_dim:
        raise DimensionError(
            f"{sequence.name}: {sequence.feature_dim} features, checkpoint expects {detector.feature_dim}"
        )
    if sequence.num_classes != detector.num_classes:
        raise DimensionError(
            f"{sequence.name}: {sequence.num_classes} classes, checkpoint expects {detector.num_classes}"
        )
    return list(stream_detections(iter(sequence.features), checkpoint.params, detector))


def evaluate(
    checkpoint: Checkpoint,
    sequences: Sequence[FeatureSequence],
    output_dir: Path | None = None,
) -> EvaluationReport:
    """
    Evaluate a trained detector frame by frame over ``sequences``.

    :param checkpoint: Trained model.
    :param sequences: Labelled test sequences.
    :param output_dir: Where ``metrics.json`` and ``frames.csv`` go; None writes nothing.
    :return: Per-class metrics, horizon mAP and the random-scorer reference.
    """
    horizon = checkpoint.detector.sampler.history_size
    num_classes = checkpoint.detector.num_classes
    rows: list[tuple[str, FrameDetection, int]] = []
    probs, labels, ahead_probs, ahead_labels = [], [], [], []
    for sequence in sequences:
        detections = detect_sequence(checkpoint, sequence)
        for detection, label in zip(detections, sequence.labels):
            rows.append((sequence.name, detection, int(label)))
            probs.append(detection.probs)
            ahead_probs.append(detection.future_probs)
            ahead_labels.append(future_labels(sequence, detection.frame, horizon))
        labels.extend(sequence.labels.tolist())
        logger.debug(f"Evaluated {sequence.name}: {sequence.length} frames")

    if not rows:
        report = EvaluationReport(table=EvaluationTable())
    else:
        future_map = horizon_map(np.array(ahead_probs), np.array(ahead_labels))
        defined = [value for value in future_map if value is not None]
        report = EvaluationReport(
            table=evaluate_frames(np.array(probs), np.array(labels)),
            horizon_map=future_map,
            mean_horizon_map=float(np.mean(defined)) if defined else None,
            prior_map=prior_baseline_map(np.array(labels), num_classes),
            num_sequences=len(sequences),
        )
    logger.info(
        f"Evaluated {len(rows)} frames in {len(sequences)} sequences | "
        f"mAP {report.table.mean_ap} | mcAP {report.table.mean_cap} | "
        f"future mAP {report.mean_horizon_map}"
    )
    if output_dir is not None:
        write_report(report, rows, num_classes, Path(output_dir))
    return report


def write_report(
    report: EvaluationReport,
    rows: Sequence[tuple[str, FrameDetection, int]],
    num_classes: int,
    output_dir: Path,
) -> None:
    output_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = output_dir / METRICS_FILE
    metrics_path.write_text(json.dumps(report.model_dump(mode="json"), indent=2, sort_keys=True))

    frames_path = output_dir / FRAMES_FILE
    with open(frames_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["sequence", "frame", "label", *(f"p_{c}" for c in range(num_classes)), "progression"]
        )
        for name, detection, label in rows:
            writer.writerow(
                [
                    name,
                    detection.frame,
                    label,
                    *(repr(p) for p in detection.probs),
                    detection.progression,
                ]
            )
    logger.info(f"Wrote {metrics_path} and {frames_path}")

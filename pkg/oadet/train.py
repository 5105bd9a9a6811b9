import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from loguru import logger
from pydantic import BaseModel, Field

from oadet.cells import DetectorConfig, DetectorParameters, StreamState, detector_step
from oadet.checkpoint import Checkpoint, save_checkpoint
from oadet.config import RunConfig
from oadet.data import Dataset, TrainingSample, chunk_training_samples, draw_offset
from oadet.diffcore import OptimizerState, Tape, Tensor, clip_grad_norm, mean_rows, optimizer_step
from oadet.enums.mode import Mode
from oadet.enums.random_stream import RandomStream
from oadet.errors import ConfigError, DimensionError, NonFiniteError
from oadet.gumbel import temperature_at
from oadet.losses import LossReport, feature_regression, loss_cls, loss_pre, total_loss
from oadet.utils.rng import derive_rng

TRAIN_LOG_FILE = "train_log.csv"
CHECKPOINT_FILE = "checkpoint.lapc"
DIAGNOSTIC_FILE = "nonfinite_dump.json"
TRAIN_LOG_COLUMNS = ["epoch", "L_cls", "L_pre", "total", "tau", "wall_time"]


class EpochSummary(BaseModel):
    """Mean losses of one training epoch."""

    epoch: int = Field(..., ge=0)
    classification: float
    prediction: float
    feature: float = 0.0
    total: float
    temperature: float = Field(..., gt=0)
    wall_time: float = Field(..., ge=0)
    batches: int = Field(..., ge=0)

    def csv_row(self) -> list[str]:
        return [
            str(self.epoch),
            repr(self.classification),
            repr(self.prediction),
            repr(self.total),
            repr(self.temperature),
            f"{self.wall_time:.3f}",
        ]


@dataclass
class TrainingResult:
    checkpoint: Checkpoint
    history: list[EpochSummary] = field(default_factory=list)


def infer_shapes(dataset: Dataset) -> tuple[int, int]:
    """Feature width and model output width shared by every sequence."""
    sequences = [*dataset.train, *dataset.test]
    if not sequences:
        raise ConfigError("dataset holds no sequences")
    dims = {s.feature_dim for s in sequences}
    classes = {s.num_classes for s in sequences}
    if len(dims) != 1 or len(classes) != 1:
        raise DimensionError(f"sequences disagree on shape: dims {dims}, classes {classes}")
    return dims.pop(), classes.pop()


def initial_checkpoint(config: RunConfig, dataset: Dataset) -> Checkpoint:
    feature_dim, num_classes = infer_shapes(dataset)
    detector = config.detector_config(feature_dim, num_classes)
    params = DetectorParameters.initialize(detector, derive_rng(config.seed, RandomStream.INIT))
    optimizer = OptimizerState.for_parameters(
        params.parameters(),
        learning_rate=config.learning_rate,
        weight_decay=config.weight_decay,
        beta1=config.beta1,
        beta2=config.beta2,
        epsilon=config.epsilon,
    )
    return Checkpoint(params=params, optimizer=optimizer, epoch=0, config=config, detector=detector)


def epoch_batches(
    dataset: Dataset, config: RunConfig, epoch: int
) -> list[list[TrainingSample]]:
    """Chunk every training sequence with this epoch's offset and shuffle into batches."""
    offset = draw_offset(config.sample_length, derive_rng(config.seed, RandomStream.OFFSET, epoch))
    samples = [
        sample
        for sequence in dataset.train
        for sample in chunk_training_samples(
            sequence, config.sample_length, offset, config.history_size
        )
    ]
    order = derive_rng(config.seed, RandomStream.SHUFFLE, epoch).permutation(len(samples))
    shuffled = [samples[i] for i in order]
    logger.debug(f"Epoch {epoch}: offset {offset}, {len(samples)} samples")
    return [
        shuffled[start : start + config.batch_size]
        for start in range(0, len(shuffled), config.batch_size)
    ]


def batch_loss(
    batch: Sequence[TrainingSample],
    params: DetectorParameters,
    detector: DetectorConfig,
    config: RunConfig,
    temperature: float,
    rng: np.random.Generator,
) -> tuple[Tensor, LossReport]:
    """
    Run every sample of ``batch`` through the detector in lock step.

    Hidden state and history start from zero for every sample. The returned
    loss averages the per-frame objective over the sample length and must be
    called inside an active tape for gradients.
    """
    features = np.stack([s.features for s in batch])
    labels = np.stack([s.labels for s in batch])
    ahead_labels = np.stack([s.future_labels for s in batch])
    ahead_features = np.stack([s.future_features for s in batch])

    state = StreamState.initial(detector, len(batch), temperature, rng)
    frame_totals, cls_terms, pre_terms, feat_terms = [], [], [], []
    for t in range(features.shape[1]):
        output = detector_step(state, features[:, t], params, detector, Mode.TRAIN)
        classification = loss_cls(output.probs, labels[:, t])
        prediction = loss_pre(output.future.class_probs, ahead_labels[:, t].T)
        regression = None
        if config.feature_loss_weight > 0:
            regression = feature_regression(
                output.future.features, ahead_features[:, t].transpose(1, 0, 2)
            )
            feat_terms.append(regression.item())
        frame_totals.append(
            total_loss(
                classification,
                prediction,
                config.loss_balance,
                regression,
                config.feature_loss_weight,
            )
        )
        cls_terms.append(classification.item())
        pre_terms.append(prediction.item())

    loss = mean_rows(frame_totals)
    terms = {
        "classification": float(np.mean(cls_terms)),
        "prediction": float(np.mean(pre_terms)),
        "balance": config.loss_balance,
        "feature": float(np.mean(feat_terms)) if feat_terms else 0.0,
        "feature_weight": config.feature_loss_weight,
        "total": loss.item(),
    }
    if not all(np.isfinite(value) for value in terms.values()):
        # kept unvalidated for the diagnostic dump
        return loss, LossReport.model_construct(**terms)
    return loss, LossReport(**terms)


def _dump_nonfinite(
    output_dir: Path | None, epoch: int, batch_index: int, losses: LossReport, params: DetectorParameters
) -> None:
    if output_dir is None:
        return
    path = Path(output_dir) / DIAGNOSTIC_FILE
    path.parent.mkdir(parents=True, exist_ok=True)
    report = {
        "epoch": epoch,
        "batch": batch_index,
        "losses": {
            "L_cls": losses.classification,
            "L_pre": losses.prediction,
            "feature": losses.feature,
            "total": losses.total,
        },
        "parameters": {
            name: {
                "finite": bool(np.all(np.isfinite(p.values))),
                "max_abs": float(np.nanmax(np.abs(p.values))),
            }
            for name, p in params.named_parameters()
        },
    }
    path.write_text(json.dumps(report, indent=2, allow_nan=True))
    logger.error(f"Wrote diagnostic dump to {path}")


def train_epoch(
    checkpoint: Checkpoint, dataset: Dataset, output_dir: Path | None = None
) -> EpochSummary:
    """Advance ``checkpoint`` in place by one epoch."""
    config, params, detector = checkpoint.config, checkpoint.params, checkpoint.detector
    epoch = checkpoint.epoch
    temperature = temperature_at(config.schedule, epoch)
    started = time.perf_counter()
    batches = epoch_batches(dataset, config, epoch)
    if not batches:
        raise ConfigError(
            f"no training samples of length {config.sample_length} in {len(dataset.train)} sequences"
        )

    tracked = params.parameters()
    sums = np.zeros(4)
    for index, batch in enumerate(batches):
        params.zero_grad()
        with Tape() as tape:
            loss, losses = batch_loss(
                batch,
                params,
                detector,
                config,
                temperature,
                derive_rng(config.seed, RandomStream.NOISE, epoch, index),
            )
            if not np.isfinite(losses.total):
                logger.error(f"Non-finite loss {losses.total} in epoch {epoch}, batch {index}")
                _dump_nonfinite(output_dir, epoch, index, losses, params)
                raise NonFiniteError(f"non-finite loss in epoch {epoch}, batch {index}")
            tape.backward(loss)
        norm = clip_grad_norm(tracked, config.clip_norm)
        try:
            optimizer_step(tracked, checkpoint.optimizer)
        except NonFiniteError:
            _dump_nonfinite(output_dir, epoch, index, losses, params)
            raise
        sums += [losses.classification, losses.prediction, losses.feature, losses.total]
        logger.debug(f"Epoch {epoch} batch {index}: loss {losses.total:.6f}, grad norm {norm:.4f}")
    params.zero_grad()

    means = sums / len(batches)
    checkpoint.epoch = epoch + 1
    return EpochSummary(
        epoch=epoch,
        classification=float(means[0]),
        prediction=float(means[1]),
        feature=float(means[2]),
        total=float(means[3]),
        temperature=temperature,
        wall_time=time.perf_counter() - started,
        batches=len(batches),
    )


def _open_log(path: Path, append: bool):
    path.parent.mkdir(parents=True, exist_ok=True)
    fresh = not (append and path.is_file())
    handle = open(path, "w" if fresh else "a", newline="")
    writer = csv.writer(handle)
    if fresh:
        writer.writerow(TRAIN_LOG_COLUMNS)
    return handle, writer


def train(
    config: RunConfig,
    dataset: Dataset,
    resume: Checkpoint | None = None,
    output_dir: Path | None = None,
    stop_after: int | None = None,
) -> TrainingResult:
    """
    Train the detector for ``config.epochs`` epochs.

    :param config: Run configuration.
    :param dataset: Training sequences live in ``dataset.train``.
    :param resume: Continue from this checkpoint instead of fresh parameters.
    :param output_dir: Where ``train_log.csv`` and the checkpoint are written;
        nothing is written when None.
    :param stop_after: Stop once this many epochs are complete.
    :return: The final checkpoint and the summaries of the epochs run here.
    """
    if resume is None:
        checkpoint = initial_checkpoint(config, dataset)
    else:
        feature_dim, num_classes = infer_shapes(dataset)
        if (resume.detector.feature_dim, resume.detector.num_classes) != (feature_dim, num_classes):
            raise DimensionError(
                f"checkpoint expects D={resume.detector.feature_dim}, C={resume.detector.num_classes}; "
                f"data has D={feature_dim}, C={num_classes}"
            )
        checkpoint = resume
        config = resume.config
        logger.info(f"Resuming from epoch {resume.epoch}")
    if config.freeze_decoder:
        checkpoint.params.freeze_decoder()

    last_epoch = config.epochs if stop_after is None else min(stop_after, config.epochs)
    result = TrainingResult(checkpoint=checkpoint)
    handle, writer = None, None
    if output_dir is not None:
        handle, writer = _open_log(Path(output_dir) / TRAIN_LOG_FILE, append=resume is not None)
    try:
        while checkpoint.epoch < last_epoch:
            summary = train_epoch(checkpoint, dataset, output_dir)
            result.history.append(summary)
            logger.info(
                f"Epoch {summary.epoch + 1}/{config.epochs} | L_cls {summary.classification:.4f} | "
                f"L_pre {summary.prediction:.4f} | total {summary.total:.4f} | "
                f"tau {summary.temperature:.3f} | {summary.wall_time:.1f}s"
            )
            if writer is not None:
                writer.writerow(summary.csv_row())
                handle.flush()
                save_checkpoint(checkpoint, Path(output_dir) / CHECKPOINT_FILE)
    finally:
        if handle is not None:
            handle.close()
    return result

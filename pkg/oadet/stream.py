import sys
import zlib
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator, TextIO

import numpy as np
from loguru import logger
from numpy.typing import ArrayLike
from pydantic import BaseModel, Field

from oadet.cells import DetectorConfig, DetectorParameters, StreamState, detector_step
from oadet.constants import SEQUENCE_MAGIC, SEQUENCE_VERSION
from oadet.data.sequence import CHECKSUM, FEATURE_DTYPE, HEADER, LABEL_DTYPE
from oadet.enums.mode import Mode
from oadet.errors import DimensionError, FormatError


class FrameDetection(BaseModel):
    """Detector output for one streamed frame."""

    frame: int = Field(..., ge=0, description="Index of the frame in its stream")
    probs: list[float] = Field(..., description="Class probabilities, background first")
    future_probs: list[list[float]] = Field(
        default_factory=list, description="Predicted class probabilities per future step"
    )
    progression: int = Field(..., ge=0, description="Sampled progression state p_s")
    window_start: int = Field(..., ge=0, description="First pool slot of the selected window")

    def __str__(self) -> str:
        return (
            f"frame {self.frame} | class {self.predicted_class} "
            f"({self.probs[self.predicted_class]:.4f}) | progression {self.progression}"
        )

    @property
    def predicted_class(self) -> int:
        return int(np.argmax(self.probs))

    def csv_row(self) -> list[str]:
        return [
            str(self.frame),
            str(self.predicted_class),
            *(repr(p) for p in self.probs),
            str(self.progression),
        ]


def stream_header(num_classes: int) -> list[str]:
    return ["frame", "predicted", *(f"p_{c}" for c in range(num_classes)), "progression"]


def stream_detections(
    frames: Iterable[ArrayLike],
    params: DetectorParameters,
    config: DetectorConfig,
    log_updates: bool = False,
) -> Iterator[FrameDetection]:
    """
    Classify frames one at a time as they arrive.

    The next frame is only pulled from ``frames`` after the detection for
    the current one has been yielded.

    :param frames: Per-frame feature vectors of width D.
    :param params: Trained parameters.
    :param config: Model configuration.
    :param log_updates: Log every detection at debug level.
    :yield: One FrameDetection per frame, in arrival order.
    """
    state = StreamState.initial(config)
    for index, frame in enumerate(frames):
        output = detector_step(state, frame, params, config, Mode.EVAL)
        detection = FrameDetection(
            frame=index,
            probs=output.probs.values.tolist(),
            future_probs=[p.values.tolist() for p in output.future.class_probs],
            progression=int(output.progression.hard_sample),
            window_start=int(output.window_start),
        )
        if log_updates:
            logger.debug(str(detection))
        yield detection


def read_lapf_frames(handle: BinaryIO, name: str = "<stream>") -> Iterator[np.ndarray]:
    """
    Yield the feature rows of an LAPF stream one frame at a time.

    Labels are skipped. The checksum is verified after the last frame.
    """
    header = handle.read(HEADER.size)
    if len(header) < HEADER.size:
        raise FormatError("size", f"{name}: header truncated")
    magic, version, length, dim, _ = HEADER.unpack(header)
    if magic != SEQUENCE_MAGIC:
        raise FormatError("magic", f"{name}: expected {SEQUENCE_MAGIC!r}, got {magic!r}")
    if version != SEQUENCE_VERSION:
        raise FormatError("version", f"{name}: unsupported version {version}")
    crc = zlib.crc32(header)
    row_bytes = dim * FEATURE_DTYPE.itemsize
    for index in range(length):
        row = handle.read(row_bytes)
        if len(row) < row_bytes:
            raise FormatError("frame", f"{name}: frame {index} truncated")
        crc = zlib.crc32(row, crc)
        yield np.frombuffer(row, dtype=FEATURE_DTYPE).astype(np.float64)
    labels = handle.read(length * LABEL_DTYPE.itemsize)
    crc = zlib.crc32(labels, crc)
    stored = handle.read(CHECKSUM.size)
    if len(stored) < CHECKSUM.size or CHECKSUM.unpack(stored)[0] != crc:
        raise FormatError("checksum", f"{name}: CRC-32 mismatch")


def read_text_frames(handle: TextIO, feature_dim: int) -> Iterator[np.ndarray]:
    """Yield one comma-separated feature row per non-blank line."""
    for number, line in enumerate(handle, start=1):
        text = line.strip()
        if not text:
            continue
        try:
            row = np.array([float(v) for v in text.split(",")], dtype=np.float64)
        except ValueError as e:
            raise FormatError("frame", f"line {number}: {e}") from e
        if row.shape != (feature_dim,):
            raise FormatError("frame", f"line {number}: {row.size} values, expected {feature_dim}")
        if not np.all(np.isfinite(row)):
            raise FormatError("frame", f"line {number}: non-finite value")
        yield row


def open_frames(path: Path, feature_dim: int) -> Iterator[np.ndarray]:
    """Frames of an LAPF file or a text file of comma-separated rows, read lazily."""
    path = Path(path)
    with open(path, "rb") as f:
        is_lapf = f.read(len(SEQUENCE_MAGIC)) == SEQUENCE_MAGIC
    if is_lapf:
        with open(path, "rb") as handle:
            for frame in read_lapf_frames(handle, path.stem):
                if frame.shape != (feature_dim,):
                    raise DimensionError(
                        f"{path}: frames have {frame.size} features, model expects {feature_dim}"
                    )
                yield frame
    else:
        with open(path, "r") as handle:
            yield from read_text_frames(handle, feature_dim)


def run_stream(
    params: DetectorParameters,
    config: DetectorConfig,
    frames: Iterable[ArrayLike],
    out: TextIO = sys.stdout,
) -> int:
    """Write one CSV line per frame as soon as it is classified; returns the frame count."""
    out.write(",".join(stream_header(config.num_classes)) + "\n")
    out.flush()
    count = 0
    for detection in stream_detections(frames, params, config, log_updates=True):
        out.write(",".join(detection.csv_row()) + "\n")
        out.flush()
        count += 1
    logger.info(f"Streamed {count} frames")
    return count

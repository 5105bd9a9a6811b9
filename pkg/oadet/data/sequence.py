import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from loguru import logger

from oadet.constants import SEQUENCE_MAGIC, SEQUENCE_VERSION, UNLABELED
from oadet.errors import DimensionError, FormatError

HEADER = struct.Struct("<4sBIII")
CHECKSUM = struct.Struct("<I")
FEATURE_DTYPE = np.dtype("<f4")
LABEL_DTYPE = np.dtype("<u2")


@dataclass(eq=False)
class FeatureSequence:
    """
    Per-frame features and labels of one video.

    Labels lie in ``[0, num_actions]`` with 0 as background, or equal
    UNLABELED for frames without ground truth.
    """

    name: str
    features: np.ndarray
    labels: np.ndarray
    num_actions: int

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] == 0 or self.features.shape[1] == 0:
            raise DimensionError(f"{self.name}: features must be a non-empty T x D matrix")
        if self.labels.shape != self.features.shape[:1]:
            raise DimensionError(
                f"{self.name}: {self.labels.shape[0]} labels for {self.features.shape[0]} frames"
            )
        if not np.all(np.isfinite(self.features)):
            raise DimensionError(f"{self.name}: features contain NaN or Inf")
        valid = (self.labels >= 0) & (self.labels <= self.num_actions)
        if not np.all(valid | (self.labels == UNLABELED)):
            raise DimensionError(f"{self.name}: labels outside [0, {self.num_actions}]")

    @property
    def length(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        """Model output width, background included."""
        return self.num_actions + 1

    def quantized(self) -> "FeatureSequence":
        """Copy with features rounded to the 32-bit precision stored on disk."""
        return FeatureSequence(
            name=self.name,
            features=self.features.astype(FEATURE_DTYPE).astype(np.float64),
            labels=self.labels.copy(),
            num_actions=self.num_actions,
        )


def encode_sequence(sequence: FeatureSequence) -> bytes:
    body = b"".join(
        [
            HEADER.pack(
                SEQUENCE_MAGIC,
                SEQUENCE_VERSION,
                sequence.length,
                sequence.feature_dim,
                sequence.num_actions,
            ),
            sequence.features.astype(FEATURE_DTYPE).tobytes(order="C"),
            sequence.labels.astype(LABEL_DTYPE).tobytes(),
        ]
    )
    return body + CHECKSUM.pack(zlib.crc32(body))


def decode_sequence(data: bytes, name: str) -> FeatureSequence:
    """
    Decode LAPF bytes.

    The checksum is verified first, so truncation and payload corruption
    surface as checksum errors.
    """
    if len(data) < HEADER.size + CHECKSUM.size:
        raise FormatError("checksum", f"{name}: file truncated to {len(data)} bytes")
    body, (stored,) = data[: -CHECKSUM.size], CHECKSUM.unpack(data[-CHECKSUM.size :])
    if zlib.crc32(body) != stored:
        raise FormatError("checksum", f"{name}: CRC-32 mismatch")

    magic, version, length, dim, num_actions = HEADER.unpack_from(body)
    if magic != SEQUENCE_MAGIC:
        raise FormatError("magic", f"{name}: expected {SEQUENCE_MAGIC!r}, got {magic!r}")
    if version != SEQUENCE_VERSION:
        raise FormatError("version", f"{name}: unsupported version {version}")
    feature_bytes = length * dim * FEATURE_DTYPE.itemsize
    label_bytes = length * LABEL_DTYPE.itemsize
    if len(body) != HEADER.size + feature_bytes + label_bytes:
        raise FormatError("size", f"{name}: payload does not match T={length}, D={dim}")

    features = np.frombuffer(body, dtype=FEATURE_DTYPE, count=length * dim, offset=HEADER.size)
    labels = np.frombuffer(
        body, dtype=LABEL_DTYPE, count=length, offset=HEADER.size + feature_bytes
    )
    try:
        return FeatureSequence(
            name=name,
            features=features.reshape(length, dim).astype(np.float64),
            labels=labels.astype(np.int64),
            num_actions=num_actions,
        )
    except DimensionError as e:
        raise FormatError("labels", str(e)) from e


def save_sequence(sequence: FeatureSequence, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_sequence(sequence))
    logger.debug(f"Wrote {sequence.length} frames to {path}")


def load_sequence(path: Path) -> FeatureSequence:
    path = Path(path)
    return decode_sequence(path.read_bytes(), name=path.stem)

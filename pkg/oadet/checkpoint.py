import io
import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from loguru import logger

from oadet.cells import DetectorConfig, DetectorParameters
from oadet.config import RunConfig
from oadet.constants import CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from oadet.diffcore import OptimizerState
from oadet.errors import FormatError

HEADER = struct.Struct("<4sBI")
U8 = struct.Struct("<B")
U16 = struct.Struct("<H")
U32 = struct.Struct("<I")
U64 = struct.Struct("<Q")
VALUE_DTYPE = np.dtype("<f8")


@dataclass
class Checkpoint:
    """Everything needed to resume training or to run a trained detector."""

    params: DetectorParameters
    optimizer: OptimizerState
    epoch: int
    config: RunConfig
    detector: DetectorConfig


def _write_array(out: io.BytesIO, values: np.ndarray) -> None:
    out.write(np.ascontiguousarray(values, dtype=VALUE_DTYPE).tobytes())


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    out = io.BytesIO()
    out.write(HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, checkpoint.epoch))
    snapshot = json.dumps(
        {
            "run": checkpoint.config.model_dump(mode="json"),
            "detector": checkpoint.detector.model_dump(mode="json"),
        },
        sort_keys=True,
    ).encode("utf-8")
    out.write(U32.pack(len(snapshot)))
    out.write(snapshot)

    named = checkpoint.params.named_parameters()
    out.write(U32.pack(len(named)))
    for name, tensor in named:
        encoded = name.encode("utf-8")
        out.write(U16.pack(len(encoded)))
        out.write(encoded)
        out.write(U8.pack(tensor.values.ndim))
        for extent in tensor.shape:
            out.write(U32.pack(extent))
        _write_array(out, tensor.values)

    out.write(U64.pack(checkpoint.optimizer.step))
    for moment in (*checkpoint.optimizer.first_moments, *checkpoint.optimizer.second_moments):
        _write_array(out, moment)
    body = out.getvalue()
    return body + U32.pack(zlib.crc32(body))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def unpack(self, fmt: struct.Struct) -> tuple:
        if self.offset + fmt.size > len(self.data):
            raise FormatError("size", "checkpoint ends early")
        values = fmt.unpack_from(self.data, self.offset)
        self.offset += fmt.size
        return values

    def take(self, count: int) -> bytes:
        if self.offset + count > len(self.data):
            raise FormatError("size", "checkpoint ends early")
        chunk = self.data[self.offset : self.offset + count]
        self.offset += count
        return chunk

    def array(self, shape: tuple[int, ...]) -> np.ndarray:
        count = int(np.prod(shape, dtype=np.int64))
        raw = self.take(count * VALUE_DTYPE.itemsize)
        return np.frombuffer(raw, dtype=VALUE_DTYPE).astype(np.float64).reshape(shape)


def decode_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < HEADER.size + U32.size:
        raise FormatError("checksum", "checkpoint truncated")
    body, (stored,) = data[: -U32.size], U32.unpack(data[-U32.size :])
    if zlib.crc32(body) != stored:
        raise FormatError("checksum", "checkpoint CRC-32 mismatch")

    reader = _Reader(body)
    magic, version, epoch = reader.unpack(HEADER)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError("magic", f"expected {CHECKPOINT_MAGIC!r}, got {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise FormatError("version", f"unsupported checkpoint version {version}")
    (snapshot_size,) = reader.unpack(U32)
    snapshot = json.loads(reader.take(snapshot_size).decode("utf-8"))
    config = RunConfig.model_validate(snapshot["run"])
    detector = DetectorConfig.model_validate(snapshot["detector"])

    params = DetectorParameters.initialize(detector, np.random.default_rng(0))
    expected = dict(params.named_parameters())
    (count,) = reader.unpack(U32)
    if count != len(expected):
        raise FormatError("parameters", f"{count} stored parameters, model has {len(expected)}")
    for _ in range(count):
        (name_size,) = reader.unpack(U16)
        name = reader.take(name_size).decode("utf-8")
        (ndim,) = reader.unpack(U8)
        shape = tuple(reader.unpack(U32)[0] for _ in range(ndim))
        if name not in expected or expected[name].shape != shape:
            raise FormatError("parameters", f"unexpected parameter {name} with shape {shape}")
        expected[name].values = reader.array(shape)

    (step,) = reader.unpack(U64)
    tensors = params.parameters()
    first = [reader.array(p.shape) for p in tensors]
    second = [reader.array(p.shape) for p in tensors]
    if reader.offset != len(body):
        raise FormatError("size", "trailing bytes after optimizer state")
    optimizer = OptimizerState(
        learning_rate=config.learning_rate,
        weight_decay=config.weight_decay,
        beta1=config.beta1,
        beta2=config.beta2,
        epsilon=config.epsilon,
        step=step,
        first_moments=first,
        second_moments=second,
    )
    return Checkpoint(params=params, optimizer=optimizer, epoch=epoch, config=config, detector=detector)


def save_checkpoint(checkpoint: Checkpoint, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(checkpoint))
    logger.info(f"Saved checkpoint for epoch {checkpoint.epoch} to {path}")


def load_checkpoint(path: Path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())

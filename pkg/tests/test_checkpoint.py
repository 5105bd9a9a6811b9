import struct
import zlib

import numpy as np
import pytest

from oadet.checkpoint import decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from oadet.diffcore import optimizer_step
from oadet.errors import FormatError
from oadet.train import initial_checkpoint


@pytest.fixture
def stepped_checkpoint(tiny_run, tiny_dataset, rng):
    checkpoint = initial_checkpoint(tiny_run, tiny_dataset)
    params = checkpoint.params.parameters()
    for p in params:
        p.grad = rng.normal(size=p.shape)
    optimizer_step(params, checkpoint.optimizer)
    checkpoint.epoch = 2
    return checkpoint


def test_round_trip_is_bitwise(stepped_checkpoint, tmp_path):
    path = tmp_path / "model.lapc"
    save_checkpoint(stepped_checkpoint, path)
    loaded = load_checkpoint(path)

    assert loaded.epoch == 2
    assert loaded.config == stepped_checkpoint.config
    assert loaded.detector == stepped_checkpoint.detector
    for (name, original), (loaded_name, restored) in zip(
        stepped_checkpoint.params.named_parameters(), loaded.params.named_parameters()
    ):
        assert name == loaded_name
        np.testing.assert_array_equal(original.values, restored.values)
    assert loaded.optimizer.step == 1
    for original, restored in zip(
        stepped_checkpoint.optimizer.first_moments + stepped_checkpoint.optimizer.second_moments,
        loaded.optimizer.first_moments + loaded.optimizer.second_moments,
    ):
        np.testing.assert_array_equal(original, restored)
    assert encode_checkpoint(loaded) == encode_checkpoint(stepped_checkpoint)


def test_header(stepped_checkpoint):
    data = encode_checkpoint(stepped_checkpoint)
    assert data[:4] == b"LAPC"
    assert struct.unpack_from("<BI", data, 4) == (1, 2)


def test_corruption_is_detected(stepped_checkpoint):
    data = bytearray(encode_checkpoint(stepped_checkpoint))
    data[len(data) // 2] ^= 0xFF
    with pytest.raises(FormatError) as error:
        decode_checkpoint(bytes(data))
    assert error.value.field == "checksum"


def test_wrong_magic(stepped_checkpoint):
    body = bytearray(encode_checkpoint(stepped_checkpoint)[:-4])
    body[:4] = b"LAPF"
    data = bytes(body) + struct.pack("<I", zlib.crc32(bytes(body)))
    with pytest.raises(FormatError) as error:
        decode_checkpoint(data)
    assert error.value.field == "magic"

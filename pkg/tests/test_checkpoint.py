import struct

import numpy as np
import pytest

from diffmatte.net.checkpoint import (
    MAGIC,
    CheckpointConfigError,
    CheckpointError,
    CheckpointMagicError,
    CheckpointShapeError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    dumps,
    load_checkpoint,
    loads,
    save_checkpoint,
)
from diffmatte.net.model import DecoderConfig, MattingModel, ModelConfig
from diffmatte.schedules import ScheduleSpec

from conftest import tiny_config


def _model(**kw):
    return MattingModel(tiny_config(**kw), seed=4)


def test_round_trip_is_bit_exact(tmp_path):
    m = _model()
    save_checkpoint(m, tmp_path / "a.dmck")
    back = load_checkpoint(tmp_path / "a.dmck")
    save_checkpoint(back, tmp_path / "b.dmck")
    assert (tmp_path / "a.dmck").read_bytes() == (tmp_path / "b.dmck").read_bytes()
    for (na, pa), (nb, pb) in zip(m.named_parameters(), back.named_parameters()):
        assert na == nb
        np.testing.assert_array_equal(pa, pb)
    assert back.config == m.config


def test_config_survives_round_trip():
    cfg = ModelConfig(
        decoder=DecoderConfig(n_d=4, n_f=6, feature_stride=32, time_features="sinusoidal"),
        encoder_width=3,
        schedule=ScheduleSpec("sigmoid", b=0.37, sigmoid_tau=0.9),
    )
    back = loads(dumps(MattingModel(cfg, seed=0)))
    assert back.config == cfg


def test_header_layout():
    data = dumps(_model())
    assert data[:4] == MAGIC
    version, length = struct.unpack("<II", data[4:12])
    assert version == 1
    assert "decoder.n_d = 4" in data[12 : 12 + length].decode("utf-8")


def test_bad_magic():
    data = dumps(_model())
    with pytest.raises(CheckpointMagicError):
        loads(b"XXXX" + data[4:])


def test_bad_version():
    data = bytearray(dumps(_model()))
    data[4:8] = struct.pack("<I", 99)
    with pytest.raises(CheckpointVersionError):
        loads(bytes(data))


@pytest.mark.parametrize("cut", [2, 10, 40, -1, -300])
def test_truncation(cut):
    data = dumps(_model())
    with pytest.raises((CheckpointTruncatedError, CheckpointMagicError)):
        loads(data[:cut])


def test_trailing_bytes():
    with pytest.raises(CheckpointError):
        loads(dumps(_model()) + b"\x00")


def test_shape_mismatch_against_config():
    small, big = dumps(_model(n_d=4)), dumps(_model(n_d=8))
    # splice the wider model's parameters behind the narrower model's header
    (len_small,) = struct.unpack("<I", small[8:12])
    (len_big,) = struct.unpack("<I", big[8:12])
    spliced = small[: 12 + len_small] + big[12 + len_big :]
    with pytest.raises(CheckpointShapeError):
        loads(spliced)


def test_bad_config_text():
    data = dumps(_model())
    (length,) = struct.unpack("<I", data[8:12])
    text = b"decoder.n_d = many" + b" " * (length - 18)
    with pytest.raises(CheckpointConfigError):
        loads(data[:12] + text + data[12 + length :])


def test_error_classes_share_a_base():
    for cls in (CheckpointMagicError, CheckpointVersionError, CheckpointTruncatedError, CheckpointConfigError, CheckpointShapeError):
        assert issubclass(cls, CheckpointError)

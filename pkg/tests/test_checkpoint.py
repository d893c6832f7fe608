import struct

import numpy as np
import pytest

from mgfa.attention import BlendWeights
from mgfa.checkpoint import (
    MAGIC,
    BadMagicError,
    Checkpoint,
    CheckpointError,
    TruncatedCheckpointError,
    VersionMismatchError,
    load_checkpoint,
    load_model,
    pack,
    save_checkpoint,
    unpack,
)
from mgfa.masks import BinaryMask
from mgfa.model import BackboneConfig, Model, forward
from mgfa.synth import Sample
from mgfa.train import TrainConfig, TrainState, train

CFG = BackboneConfig(channels=(4, 4, 4), input_size=16, num_classes=3, pools=(2, 2, 2), hook=1, norm=True)


def _samples(n=6):
    rng = np.random.default_rng(0)
    return [Sample(rng.random((16, 16, 3)), BinaryMask(rng.random((16, 16)) < 0.3),
                   BinaryMask(rng.random((16, 16)) < 0.3), i % 3) for i in range(n)]


def test_header_layout():
    buf = Checkpoint(epoch=7, rng_state=(1 << 127) + 5, tensors={"a": np.arange(6.0).reshape(2, 3)}).to_bytes()
    assert buf[:4] == MAGIC
    assert struct.unpack("<II", buf[4:12]) == (1, 7)
    assert int.from_bytes(buf[12:28], "little") == (1 << 127) + 5
    assert struct.unpack("<I", buf[28:32]) == (1,)
    assert buf[32:34] == struct.pack("<H", 1) and buf[34:35] == b"a"
    assert buf[35] == 2 and struct.unpack("<II", buf[36:44]) == (2, 3)
    assert np.array_equal(np.frombuffer(buf[44:], "<f8"), np.arange(6.0))


def test_round_trip_bytes_identical(tmp_path):
    model = Model.init(CFG, seed=4)
    model.blend = BlendWeights(0.5, 0.5, 0.0)
    state = TrainState(epoch=3, rng_state=12345, velocity={"stage0.bias": np.ones(4)})
    save_checkpoint(model, state, tmp_path / "a.ckpt")
    m2, s2 = load_model(tmp_path / "a.ckpt")
    save_checkpoint(m2, s2, tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    assert m2.config == CFG and m2.blend == model.blend
    assert s2.epoch == 3 and s2.rng_state == 12345 and np.array_equal(s2.velocity["stage0.bias"], np.ones(4))
    x = np.random.default_rng(1).random((2, 3, 16, 16))
    assert np.array_equal(forward(x, m2).logits.data, forward(x, model).logits.data)


def test_resume_matches_uninterrupted(tmp_path):
    data = _samples()
    cfg = TrainConfig(epochs=2, batch_size=4, lr=0.02, seed=6)
    full = Model.init(CFG, seed=1)
    train(cfg, data, full)

    half = Model.init(CFG, seed=1)
    state = TrainState.fresh(cfg.seed)
    train(TrainConfig(**{**cfg.__dict__, "epochs": 1}), data, half, state)
    save_checkpoint(half, state, tmp_path / "half.ckpt")
    resumed, rstate = load_model(tmp_path / "half.ckpt")
    assert rstate.epoch == 1
    train(cfg, data, resumed, rstate)
    for (n, a), (_, b) in zip(full.named_parameters(), resumed.named_parameters()):
        assert np.array_equal(a.data, b.data), n


def test_bad_magic(tmp_path):
    buf = bytearray(pack(Model.init(CFG)).to_bytes())
    buf[:4] = b"XXXX"
    with pytest.raises(BadMagicError):
        Checkpoint.from_bytes(bytes(buf))


def test_version_mismatch():
    buf = bytearray(pack(Model.init(CFG)).to_bytes())
    buf[4:8] = struct.pack("<I", 2)
    with pytest.raises(VersionMismatchError):
        Checkpoint.from_bytes(bytes(buf))


@pytest.mark.parametrize("cut", [3, 10, 30, 100, -1])
def test_truncated(cut):
    buf = pack(Model.init(CFG)).to_bytes()
    with pytest.raises((TruncatedCheckpointError, BadMagicError)):
        Checkpoint.from_bytes(buf[:cut])
    if cut >= 4:
        with pytest.raises(TruncatedCheckpointError):
            Checkpoint.from_bytes(buf[:cut])


def test_error_classes_distinct():
    kinds = (BadMagicError, VersionMismatchError, TruncatedCheckpointError)
    assert all(issubclass(k, CheckpointError) for k in kinds)
    assert not any(issubclass(a, b) for a in kinds for b in kinds if a is not b)


def test_missing_tensor_reported():
    ck = pack(Model.init(CFG))
    del ck.tensors["classifier.bias"]
    with pytest.raises(CheckpointError, match="classifier.bias"):
        unpack(ck)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "nope.ckpt")

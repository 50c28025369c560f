import struct

import numpy as np
import pytest

from conftest import tiny_config
from vesselgan.checkpoint import (
    Checkpoint,
    decode_bytes,
    encode_bytes,
    load_checkpoint,
    read_tensors,
    save_checkpoint,
    write_tensors,
)
from vesselgan.config import RunConfig
from vesselgan.data import ImageRecord
from vesselgan.errors import CheckpointError, DataError
from vesselgan.pipeline import Trainer, count_tensors
from vesselgan.synthetic import make_fundus


def test_layout_of_a_single_tensor(tmp_path):
    path = tmp_path / "one.vgn"
    write_tensors(path, {"w": np.array([[1.0, 2.0, 3.0]], np.float32)})
    buf = path.read_bytes()
    assert buf[:4] == b"VGN1"
    assert struct.unpack_from("<II", buf, 4) == (1, 2)
    assert struct.unpack_from("<I", buf, 12) == (1,)
    assert buf[16:17] == b"w" and buf[17] == 2
    assert struct.unpack_from("<II", buf, 18) == (1, 3)
    assert np.frombuffer(buf, "<f4", 3, 26).tolist() == [1.0, 2.0, 3.0]
    assert list(read_tensors(path)) == ["w"]


def test_byte_strings_survive_float_encoding():
    data = bytes(range(256)) + "héllo".encode()
    assert decode_bytes(encode_bytes(data)) == data
    with pytest.raises(CheckpointError):
        decode_bytes(np.array([0.5], np.float32))


def default_checkpoint():
    image, label, fov = make_fundus(128, 128, seed=0)
    return Trainer(RunConfig(), [ImageRecord("a", image, label, fov)]).checkpoint()


def test_default_model_tensor_count(tmp_path):
    ckpt = default_checkpoint()
    path = tmp_path / "default.vgn"
    save_checkpoint(path, ckpt)
    tensors = read_tensors(path)
    n_g, n_d = len(ckpt.generator), len(ckpt.discriminator)
    buffers = len(ckpt.gen_buffers) + len(ckpt.disc_buffers)
    # parameters + 2x parameters of Adam moments per network, BN running stats, meta/config + meta/state
    assert len(tensors) == 3 * (n_g + n_d) + buffers + 2
    assert count_tensors(ckpt) == len(tensors) + 1  # the reader strips meta/crc32
    assert sum(a.size for n, a in tensors.items() if n.startswith("gen/") and "running" not in n) == 16_659_457


def test_save_load_save_byte_identical(tmp_path):
    first, second = tmp_path / "a.vgn", tmp_path / "b.vgn"
    save_checkpoint(first, default_checkpoint())
    save_checkpoint(second, load_checkpoint(first))
    assert first.read_bytes() == second.read_bytes()


@pytest.fixture
def small_file(tmp_path):
    cfg = tiny_config()
    image, label, fov = make_fundus(32, 32, seed=1)
    path = tmp_path / "small.vgn"
    save_checkpoint(path, Trainer(cfg, [ImageRecord("a", image, label, fov)]).checkpoint())
    return path


def test_flipped_payload_byte_is_detected(small_file):
    buf = bytearray(small_file.read_bytes())
    buf[len(buf) // 2] ^= 0x01
    small_file.write_bytes(bytes(buf))
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(small_file)


def test_truncation_is_detected(small_file):
    buf = small_file.read_bytes()
    small_file.write_bytes(buf[:-7])
    with pytest.raises(CheckpointError, match="truncated"):
        read_tensors(small_file)


@pytest.mark.parametrize("patch,needle", [(b"XGN1", "magic"), (struct.pack("<I", 2), "version")])
def test_magic_and_version_checks(small_file, patch, needle):
    buf = bytearray(small_file.read_bytes())
    offset = 0 if needle == "magic" else 4
    buf[offset:offset + 4] = patch
    small_file.write_bytes(bytes(buf))
    with pytest.raises(CheckpointError, match=needle):
        read_tensors(small_file)


def test_trailing_bytes_rejected(small_file):
    small_file.write_bytes(small_file.read_bytes() + b"\0")
    with pytest.raises(CheckpointError, match="trailing"):
        read_tensors(small_file)


def test_name_collision_rejected(tmp_path):
    ckpt = Checkpoint("", {"gen/a": np.zeros(1)}, {}, gen_buffers={"gen/a": np.zeros(1)})
    with pytest.raises(CheckpointError, match="collision"):
        save_checkpoint(tmp_path / "c.vgn", ckpt)


def test_checkpoint_errors_are_data_errors():
    assert issubclass(CheckpointError, DataError)


def test_embedded_config_hash_is_verified(small_file, tmp_path):
    ckpt = load_checkpoint(small_file)
    ckpt.state["config_sha256"] = "0" * 64
    tensors = read_tensors(small_file)
    import json

    tensors["meta/state"] = encode_bytes(json.dumps(ckpt.state).encode())
    bad = tmp_path / "bad.vgn"
    write_tensors(bad, tensors)
    with pytest.raises(CheckpointError, match="hash"):
        load_checkpoint(bad)

"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"VGN1"  u32 version  u32 tensor_count
    per tensor: u32 name_len, UTF-8 name, u8 rank, u32 extent * rank,
                float32 payload, row-major

Non-tensor state (counters, RNG states, the run configuration) travels as
byte strings stored one byte per float32 element in ``meta/*`` tensors.  The
last tensor, ``meta/crc32``, holds the CRC-32 of everything before it, so a
flipped payload byte is detected on load.
"""
import hashlib
import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError

MAGIC = b"VGN1"
VERSION = 1
CRC_NAME = "meta/crc32"


def encode_bytes(data):
    return np.frombuffer(data, dtype=np.uint8).astype(np.float32)


def decode_bytes(array, name="tensor"):
    values = np.asarray(array).reshape(-1)
    as_int = values.astype(np.int64)
    if not np.array_equal(as_int, values) or (as_int < 0).any() or (as_int > 255).any():
        raise CheckpointError(f"{name} does not hold a byte string")
    return as_int.astype(np.uint8).tobytes()


def config_hash(config_text):
    return hashlib.sha256(config_text.encode("utf-8")).hexdigest()


def write_tensors(path, tensors):
    """Write an ordered name -> float array mapping; appends the CRC tensor."""
    body = bytearray()
    count = 0
    for name, array in tensors.items():
        if name == CRC_NAME:
            raise CheckpointError(f"{CRC_NAME} is reserved")
        body += _pack(name, array)
        count += 1
    head = MAGIC + struct.pack("<II", VERSION, count + 1)
    crc = zlib.crc32(head + bytes(body))
    body += _pack(CRC_NAME, encode_bytes(struct.pack("<I", crc)))
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(body)


def _pack(name, array):
    array = np.asarray(array)
    if array.ndim > 255:
        raise CheckpointError(f"tensor {name!r} has too many axes")
    encoded = name.encode("utf-8")
    out = struct.pack("<I", len(encoded)) + encoded + struct.pack("<B", array.ndim)
    out += struct.pack(f"<{array.ndim}I", *array.shape)
    return out + np.ascontiguousarray(array, dtype="<f4").tobytes()


def read_tensors(path):
    """Read and audit a checkpoint file into an ordered name -> float32 array dict."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 12 or buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {buf[:4]!r}, expected {MAGIC!r}")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} (expected {VERSION})")
    pos = 12
    tensors = {}
    crc_start = None
    for i in range(count):
        start = pos
        try:
            (nlen,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            if pos + nlen > len(buf):
                raise CheckpointError(f"{path}: tensor #{i} name runs past end of file")
            name = buf[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            shape = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
        except (struct.error, UnicodeDecodeError) as exc:
            raise CheckpointError(f"{path}: corrupt header for tensor #{i} at offset {start}: {exc}") from None
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > len(buf):
            raise CheckpointError(f"{path}: tensor {name!r} of shape {shape} truncated at offset {pos}")
        if name in tensors:
            raise CheckpointError(f"{path}: duplicate tensor name {name!r}")
        tensors[name] = np.frombuffer(buf, dtype="<f4", count=nbytes // 4, offset=pos).astype(np.float32).reshape(shape)
        if name == CRC_NAME:
            crc_start = start
        pos += nbytes
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes after {count} tensors")
    if CRC_NAME not in tensors or crc_start is None:
        raise CheckpointError(f"{path}: missing {CRC_NAME}")
    (stored,) = struct.unpack("<I", decode_bytes(tensors.pop(CRC_NAME), CRC_NAME))
    actual = zlib.crc32(buf[:crc_start])
    if stored != actual:
        raise CheckpointError(f"{path}: checksum mismatch (stored {stored:08x}, computed {actual:08x}); file is corrupt")
    return tensors


@dataclass
class Checkpoint:
    """Everything needed to resume training or run inference."""

    config_text: str
    generator: dict
    discriminator: dict
    gen_buffers: dict = field(default_factory=dict)
    disc_buffers: dict = field(default_factory=dict)
    adam_g: dict = field(default_factory=dict)
    adam_d: dict = field(default_factory=dict)
    state: dict = field(default_factory=dict)

    @property
    def config_hash(self):
        return config_hash(self.config_text)


def save_checkpoint(path, ckpt):
    tensors = {}
    for group in (ckpt.generator, ckpt.gen_buffers, ckpt.discriminator, ckpt.disc_buffers):
        for name, array in group.items():
            if name in tensors:
                raise CheckpointError(f"tensor name collision on {name!r}")
            tensors[name] = array
    for tag, moments in (("g", ckpt.adam_g), ("d", ckpt.adam_d)):
        for kind in ("m", "v"):
            for name, array in moments.get(kind, {}).items():
                tensors[f"adam/{tag}/{kind}/{name}"] = array
    state = dict(ckpt.state)
    state["config_sha256"] = ckpt.config_hash
    tensors["meta/config"] = encode_bytes(ckpt.config_text.encode("utf-8"))
    tensors["meta/state"] = encode_bytes(json.dumps(state, sort_keys=True).encode("utf-8"))
    write_tensors(path, tensors)


def load_checkpoint(path):
    tensors = read_tensors(path)
    try:
        config_text = decode_bytes(tensors.pop("meta/config"), "meta/config").decode("utf-8")
        state = json.loads(decode_bytes(tensors.pop("meta/state"), "meta/state").decode("utf-8"))
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing {exc.args[0]}") from None
    if state.get("config_sha256") != config_hash(config_text):
        raise CheckpointError(f"{path}: embedded configuration does not match its recorded hash")
    ckpt = Checkpoint(config_text, {}, {}, state=state)
    ckpt.adam_g = {"m": {}, "v": {}}
    ckpt.adam_d = {"m": {}, "v": {}}
    for name, array in tensors.items():
        parts = name.split("/")
        if parts[0] == "adam":
            moments = ckpt.adam_g if parts[1] == "g" else ckpt.adam_d
            moments[parts[2]]["/".join(parts[3:])] = array
        elif parts[-1] in ("running_mean", "running_var"):
            (ckpt.gen_buffers if parts[0] == "gen" else ckpt.disc_buffers)[name] = array
        elif parts[0] == "gen":
            ckpt.generator[name] = array
        elif parts[0] == "disc":
            ckpt.discriminator[name] = array
        else:
            raise CheckpointError(f"{path}: unexpected tensor {name!r}")
    return ckpt

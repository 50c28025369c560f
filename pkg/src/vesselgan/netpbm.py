"""Binary NetPBM (P5 grayscale / P6 RGB, maxval 255) reader and writer."""
import os

import numpy as np

from .errors import NetpbmError

_WHITESPACE = b" \t\n\r\x0b\x0c"


def _read_token(buf, pos):
    """Next header token starting at ``pos``; '#' comments run to end of line."""
    n = len(buf)
    while pos < n:
        ch = buf[pos:pos + 1]
        if ch == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch in _WHITESPACE:
            pos += 1
        else:
            break
    start = pos
    while pos < n and buf[pos:pos + 1] not in _WHITESPACE and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise NetpbmError("unexpected end of header", offset=pos)
    return buf[start:pos], start, pos


def _read_int(buf, pos, what):
    token, start, pos = _read_token(buf, pos)
    if not token.isdigit():
        raise NetpbmError(f"expected {what}, found {token[:16]!r}", offset=start)
    return int(token), start, pos


def parse_netpbm(data):
    """Decode P5/P6 bytes into an (H, W) or (H, W, 3) uint8 array."""
    buf = bytes(data)
    if len(buf) < 2 or buf[:2] not in (b"P5", b"P6"):
        raise NetpbmError(f"bad magic {buf[:2]!r}; only binary P5/P6 are supported", offset=0)
    channels = 1 if buf[:2] == b"P5" else 3
    pos = 2
    if len(buf) > 2 and buf[2:3] not in _WHITESPACE and buf[2:3] != b"#":
        raise NetpbmError("magic number must be followed by whitespace", offset=2)
    width, start, pos = _read_int(buf, pos, "width")
    height, _, pos = _read_int(buf, pos, "height")
    maxval, mstart, pos = _read_int(buf, pos, "maxval")
    if width < 1 or height < 1:
        raise NetpbmError(f"image extent {width}x{height} must be positive", offset=start)
    if maxval != 255:
        raise NetpbmError(f"maxval {maxval} unsupported (need 255)", offset=mstart)
    if pos >= len(buf) or buf[pos:pos + 1] not in _WHITESPACE:
        raise NetpbmError("missing whitespace after maxval", offset=pos)
    pos += 1
    expected = width * height * channels
    payload = buf[pos:pos + expected]
    if len(payload) < expected:
        raise NetpbmError(f"truncated payload: expected {expected} bytes, got {len(payload)}", offset=pos + len(payload))
    pixels = np.frombuffer(payload, dtype=np.uint8).copy()
    shape = (height, width) if channels == 1 else (height, width, channels)
    return pixels.reshape(shape)


def emit_netpbm(image):
    """Encode a uint8 array as P5 (2-d) or P6 (H, W, 3)."""
    image = np.asarray(image)
    if image.dtype != np.uint8:
        raise NetpbmError(f"only uint8 images can be written, got {image.dtype}")
    if image.ndim == 2:
        magic = b"P5"
    elif image.ndim == 3 and image.shape[2] == 3:
        magic = b"P6"
    else:
        raise NetpbmError(f"cannot encode array of shape {image.shape}")
    h, w = image.shape[:2]
    return magic + b"\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(image).tobytes()


def read_netpbm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        return parse_netpbm(data)
    except NetpbmError as exc:
        err = NetpbmError(f"{os.fspath(path)}: {exc}")
        err.offset = exc.offset
        raise err from None


def write_netpbm(path, image):
    data = emit_netpbm(image)
    with open(path, "wb") as fh:
        fh.write(data)

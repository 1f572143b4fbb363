"""Binary netpbm image files: P6 (PPM, RGB) and P5 (PGM, gray/labels).

Both formats use maxval 255 and one byte per channel. RGB values are
quantized round-half-up on write (byte = floor(255*v + 0.5)) and read
back as byte/255, so a write/read round-trip is exact to within half a
quantization step (1/510). Label images store each label verbatim as a
byte, so their round-trip is lossless.

Malformed files are rejected with the byte offset of the problem.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError, FormatError

_WHITESPACE = b" \t\r\n\x0b\x0c"


def _parse_header(data: bytes, magic: bytes):
    """Parse '<magic> width height maxval' + single whitespace separator.

    Returns (width, height, maxval, payload_offset). Comments (# to end
    of line) may appear between header tokens.
    """
    if data[:2] != magic:
        raise FormatError(
            f"bad magic {data[:2]!r}, expected {magic.decode()}", offset=0
        )
    if len(data) < 3 or (data[2] not in _WHITESPACE and data[2:3] != b"#"):
        raise FormatError("missing whitespace after magic", offset=2)
    pos = 2
    values = []
    for _ in range(3):
        while pos < len(data) and (
            data[pos : pos + 1] in (b"#",) or data[pos] in _WHITESPACE
        ):
            if data[pos : pos + 1] == b"#":
                while pos < len(data) and data[pos] not in b"\n":
                    pos += 1
            else:
                pos += 1
        start = pos
        while pos < len(data) and data[pos] not in _WHITESPACE:
            pos += 1
        token = data[start:pos]
        if not token or not token.isdigit():
            raise FormatError(f"expected an integer header field, got {token!r}", offset=start)
        values.append((int(token), start))
    if pos >= len(data) or data[pos] not in _WHITESPACE:
        raise FormatError("missing whitespace after maxval", offset=pos)
    pos += 1
    (width, w_off), (height, h_off), (maxval, m_off) = values
    if width < 1 or height < 1:
        raise FormatError(f"degenerate image size {width}x{height}", offset=w_off)
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval}, only 255", offset=m_off)
    return width, height, maxval, pos


def _payload(data: bytes, offset: int, expected: int) -> bytes:
    body = data[offset:]
    if len(body) < expected:
        raise FormatError(
            f"truncated payload: expected {expected} bytes, found {len(body)}",
            offset=offset + len(body),
        )
    if len(body) > expected:
        raise FormatError(
            f"trailing data: expected {expected} payload bytes, found {len(body)}",
            offset=offset + expected,
        )
    return body


def write_ppm(path, img: np.ndarray) -> None:
    """Write a [3,H,W] float image with values in [0,1] as binary P6."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise DataError(f"write_ppm expects [3,H,W], got shape {img.shape}")
    if img.min() < 0.0 or img.max() > 1.0:
        raise DataError("write_ppm values must lie in [0,1]")
    _, h, w = img.shape
    quantized = np.floor(img * 255.0 + 0.5).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(quantized.transpose(1, 2, 0).tobytes())


def read_ppm(path) -> np.ndarray:
    """Read binary P6 into a [3,H,W] float64 array with values in [0,1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    w, h, _, offset = _parse_header(data, b"P6")
    body = _payload(data, offset, w * h * 3)
    pixels = np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)
    return pixels.transpose(2, 0, 1).astype(np.float64) / 255.0


def write_pgm(path, mask: np.ndarray) -> None:
    """Write an integer [H,W] label image as binary P5, labels stored verbatim."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise DataError(f"write_pgm expects [H,W], got shape {mask.shape}")
    if not np.issubdtype(mask.dtype, np.integer):
        raise DataError(f"write_pgm expects integer labels, got dtype {mask.dtype}")
    if mask.min() < 0 or mask.max() > 255:
        raise DataError(
            f"labels must lie in 0..255 to fit one byte, got range "
            f"[{mask.min()}, {mask.max()}]"
        )
    h, w = mask.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(mask.astype(np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    """Read binary P5 into an int64 [H,W] label array."""
    with open(path, "rb") as fh:
        data = fh.read()
    w, h, _, offset = _parse_header(data, b"P5")
    body = _payload(data, offset, w * h)
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).astype(np.int64)

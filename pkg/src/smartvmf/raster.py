"""Binary PPM/PGM codecs (maxval 255) and PNG input.

PPM is the bit-exact interchange format: decoding maps byte ``v`` to
``v / 255`` and encoding quantises with ``round(v * 255)``.
"""

from __future__ import annotations

import io
import os

import numpy as np

from .image import check_attention, check_image


class RasterFormatError(ValueError):
    """Raised for malformed or unsupported raster files."""


def _read_header(data: bytes) -> tuple[bytes, list[int], int]:
    """Parse magic + three integers, skipping ``#`` comments. Returns payload offset."""
    pos = 0
    tokens: list[bytes] = []
    n = len(data)
    while len(tokens) < 4:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        if pos >= n:
            raise RasterFormatError("truncated header")
        start = pos
        while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates maxval from the payload
    if pos >= n or not data[pos : pos + 1].isspace():
        raise RasterFormatError("missing whitespace after maxval")
    pos += 1
    magic = tokens[0]
    try:
        nums = [int(t) for t in tokens[1:]]
    except ValueError as exc:
        raise RasterFormatError(f"non-integer header field: {exc}") from None
    return magic, nums, pos


def decode_ppm(data: bytes) -> np.ndarray:
    """Decode a binary P6 (RGB) or P5 (grayscale) file with maxval 255."""
    if len(data) < 2:
        raise RasterFormatError("file too short")
    if data[:2] not in (b"P5", b"P6"):
        raise RasterFormatError(f"unsupported magic {data[:2]!r}; expected P5 or P6")
    magic, (width, height, maxval), offset = _read_header(data)
    if magic not in (b"P5", b"P6"):
        raise RasterFormatError(f"unsupported magic {magic!r}")
    if width < 1 or height < 1:
        raise RasterFormatError(f"invalid dimensions {width}x{height}")
    if maxval != 255:
        raise RasterFormatError(f"unsupported maxval {maxval}; only 255 is supported")
    channels = 3 if magic == b"P6" else 1
    expected = width * height * channels
    payload = data[offset : offset + expected]
    if len(payload) < expected:
        raise RasterFormatError(f"truncated payload: expected {expected} bytes, got {len(payload)}")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return arr.astype(np.float64) / 255.0


def quantize(img) -> np.ndarray:
    img = check_image(img)
    return np.rint(img * 255.0).astype(np.uint8)


def encode_ppm(img) -> bytes:
    """Encode a 1- or 3-channel image as P5/P6 with maxval 255."""
    img = check_image(img)
    h, w, c = img.shape
    if c == 1:
        magic = b"P5"
    elif c == 3:
        magic = b"P6"
    else:
        raise RasterFormatError(f"PPM/PGM encoding supports 1 or 3 channels, got {c}")
    header = magic + b"\n%d %d\n255\n" % (w, h)
    return header + quantize(img).tobytes()


def read_image(path) -> np.ndarray:
    """Read a PPM/PGM or 8-bit PNG file into an image array."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] in (b"P5", b"P6"):
        return decode_ppm(data)
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        from PIL import Image as PILImage

        with PILImage.open(io.BytesIO(data)) as im:
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB" if "A" in im.mode or im.mode == "P" else "L")
            arr = np.asarray(im, dtype=np.uint8)
        return check_image(arr.astype(np.float64) / 255.0)
    raise RasterFormatError(f"{os.fspath(path)}: unrecognised raster format")


def write_image(path, img) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_ppm(img))


def read_attention(path, shape=None) -> np.ndarray:
    """Attention maps are single-channel rasters; values map to v / 255."""
    arr = read_image(path)
    if arr.shape[2] != 1:
        raise RasterFormatError("attention map must be a single-channel PGM")
    return check_attention(arr[:, :, 0], shape)

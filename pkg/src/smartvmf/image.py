"""Image and attention-map representations plus window extraction.

Images are plain ``numpy`` arrays of shape ``(height, width, channels)`` with
float64 values in ``[0, 1]``. Attention maps are ``(height, width)`` arrays in
the same range. The helpers below are the validation boundary: everything
that leaves them is contiguous, float64 and range-checked.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

MAX_CHANNELS = 4


class PixelCoord(NamedTuple):
    row: int
    col: int


def check_image(img, *, copy: bool = False, name: str = "image") -> np.ndarray:
    """Validate and canonicalise an image array.

    2-D input is promoted to a single channel. Raises ``ValueError`` for
    anything that is not a finite H x W x C array with 1 <= C <= 4 and values
    in [0, 1].
    """
    arr = np.array(img, dtype=np.float64, copy=copy)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError(f"{name} must be H x W x C, got shape {arr.shape}")
    h, w, c = arr.shape
    if h < 1 or w < 1:
        raise ValueError(f"{name} must be non-empty, got shape {arr.shape}")
    if not 1 <= c <= MAX_CHANNELS:
        raise ValueError(f"{name} must have 1..{MAX_CHANNELS} channels, got {c}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1]")
    return np.ascontiguousarray(arr)


def check_attention(attention, shape: tuple[int, int] | None = None) -> np.ndarray | None:
    """Validate an attention map; ``None`` passes through (no attention)."""
    if attention is None:
        return None
    arr = np.asarray(attention, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim != 2:
        raise ValueError(f"attention map must be H x W, got shape {arr.shape}")
    if shape is not None and arr.shape != tuple(shape):
        raise ValueError(f"attention map shape {arr.shape} does not match image {tuple(shape)}")
    if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("attention values must be finite and lie in [0, 1]")
    return np.ascontiguousarray(arr)


def check_odd_side(side) -> int:
    if isinstance(side, bool) or int(side) != side:
        raise ValueError(f"window side must be an integer, got {side!r}")
    side = int(side)
    if side < 1 or side % 2 == 0:
        raise ValueError(f"window side must be odd and >= 1, got {side}")
    return side


def constant_image(height: int, width: int, value, channels: int = 3) -> np.ndarray:
    value = np.broadcast_to(np.asarray(value, dtype=np.float64), (channels,))
    return check_image(np.broadcast_to(value, (height, width, channels)), copy=True)


def window(img, center, side: int) -> list[tuple[PixelCoord, np.ndarray]]:
    """Return the in-bounds pixels of the ``side`` x ``side`` square at ``center``.

    Windows are clipped at the border rather than padded, so every entry is a
    real pixel. Entries come back in row-major order.
    """
    img = check_image(img)
    side = check_odd_side(side)
    h, w, _ = img.shape
    r, c = int(center[0]), int(center[1])
    if not (0 <= r < h and 0 <= c < w):
        raise ValueError(f"center {(r, c)} outside image of size {(h, w)}")
    half = side // 2
    out = []
    for rr in range(max(0, r - half), min(h, r + half + 1)):
        for cc in range(max(0, c - half), min(w, c + half + 1)):
            out.append((PixelCoord(rr, cc), img[rr, cc].copy()))
    return out

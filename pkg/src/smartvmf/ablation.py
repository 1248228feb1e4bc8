"""Derandomized-smoothing ablations and patch-overlap bounds.

An ablation keeps one column band (or one square block) of the image and
fills everything else with a constant. Positions wrap around the image edge,
so with stride 1 every band retains exactly ``s`` columns and every block
exactly ``s * s`` pixels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .image import check_image

ABLATION_KINDS = ("band", "block")
DEFAULT_FILL = 0.5


def _check_dims(h, w, m, s):
    for name, v in (("h", h), ("w", w), ("m", m), ("s", s)):
        if isinstance(v, bool) or int(v) != v or v < 1:
            raise ValueError(f"{name} must be a positive integer, got {v!r}")
    return int(h), int(w), int(m), int(s)


def delta_block(h: int, w: int, m: int, s: int) -> float:
    """Fraction of cyclic ``s x s`` blocks that an ``m x m`` patch touches.

    Equals ``(m + s - 1)**2 / (h * w)`` whenever ``m + s - 1`` fits in both
    dimensions. When the span exceeds one dimension, only that dimension's
    extent can be hit, so the count saturates per axis; the result never
    exceeds 1.
    """
    h, w, m, s = _check_dims(h, w, m, s)
    if m > min(h, w) or s > min(h, w):
        raise ValueError(f"patch ({m}) and block ({s}) must fit in a {h}x{w} image")
    span = m + s - 1
    return min(1.0, min(h, span) * min(w, span) / (h * w))


def delta_band(h: int, w: int, m: int, s: int) -> float:
    """Fraction of cyclic width-``s`` column bands an ``m``-wide patch touches."""
    h, w, m, s = _check_dims(h, w, m, s)
    if m > min(h, w) or s > w:
        raise ValueError(f"patch ({m}) and band ({s}) must fit in a {h}x{w} image")
    return min(1.0, (m + s - 1) / w)


@dataclass(frozen=True)
class AblationSpec:
    kind: str = "band"
    size: int | None = None  # None -> ceil(w / 8)
    stride: int = 1
    fill: float = DEFAULT_FILL

    def __post_init__(self):
        if self.kind not in ABLATION_KINDS:
            raise ValueError(f"ablation kind must be one of {ABLATION_KINDS}, got {self.kind!r}")
        if self.size is not None and (int(self.size) != self.size or self.size < 1):
            raise ValueError(f"ablation size must be >= 1, got {self.size}")
        if int(self.stride) != self.stride or self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if not 0.0 <= self.fill <= 1.0:
            raise ValueError("fill value must lie in [0, 1]")

    def resolve_size(self, h: int, w: int) -> int:
        s = math.ceil(w / 8) if self.size is None else int(self.size)
        limit = w if self.kind == "band" else min(h, w)
        if s > limit:
            raise ValueError(f"{self.kind} size {s} exceeds image limit {limit} for {h}x{w}")
        return s

    def delta(self, h: int, w: int, m: int) -> float:
        s = self.resolve_size(h, w)
        if self.kind == "band":
            return delta_band(h, w, m, s)
        return delta_block(h, w, m, s)


@dataclass
class AblationSet:
    """All ablations of ``base`` under ``spec``.

    ``regions[i]`` is the (row, col) start of member ``i`` (row is always 0
    for bands); ``images`` stacks the ablated members as (n, H, W, C).
    """

    base: np.ndarray
    spec: AblationSpec
    size: int
    regions: list[tuple[int, int]]
    images: np.ndarray
    masks: np.ndarray = field(repr=False)
    delta: float

    @property
    def n(self) -> int:
        return len(self.regions)

    def __len__(self):
        return self.n

    def __iter__(self):
        return iter(zip(self.regions, self.images))


def retained_mask(h: int, w: int, kind: str, size: int, start: tuple[int, int]) -> np.ndarray:
    r0, c0 = start
    keep = np.zeros((h, w), dtype=bool)
    cols = (c0 + np.arange(size)) % w
    if kind == "band":
        keep[:, cols] = True
    else:
        rows = (r0 + np.arange(size)) % h
        keep[np.ix_(rows, cols)] = True
    return keep


def ablation_positions(h: int, w: int, spec: AblationSpec) -> list[tuple[int, int]]:
    if spec.kind == "band":
        return [(0, c) for c in range(0, w, spec.stride)]
    return [(r, c) for r in range(0, h, spec.stride) for c in range(0, w, spec.stride)]


def generate_ablations(img, spec: AblationSpec | None = None, patch_size: int = 1) -> AblationSet:
    """Enumerate every ablation of ``img`` in row-major start order.

    ``patch_size`` is the side of the patch the resulting ``delta`` should
    bound.
    """
    spec = spec or AblationSpec()
    img = check_image(img)
    h, w, _ = img.shape
    size = spec.resolve_size(h, w)
    delta = spec.delta(h, w, patch_size)
    regions = ablation_positions(h, w, spec)
    masks = np.stack([retained_mask(h, w, spec.kind, size, p) for p in regions])
    images = np.where(masks[:, :, :, None], img[None], spec.fill)
    return AblationSet(img, spec, size, regions, images, masks, delta)


class Ablator(TransformerMixin, BaseEstimator):
    """Map an image to its stacked ablations, shape (n, H, W, C)."""

    def __init__(self, kind="band", size=None, stride=1, fill=DEFAULT_FILL):
        self.kind = kind
        self.size = size
        self.stride = stride
        self.fill = fill

    def _spec(self):
        return AblationSpec(self.kind, self.size, self.stride, self.fill)

    def fit(self, X=None, y=None):
        self.spec_ = self._spec()
        return self

    def transform(self, X):
        return generate_ablations(X, self._spec()).images

"""LaVAN-style adversarial patches: placement, masking and training."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .classifier import softmax
from .image import PixelCoord, check_image


def corner_placements(h: int, w: int, s: int, n: int) -> list[PixelCoord]:
    """Top-left corners of ``n`` patches of side ``s`` at the image corners.

    Order is top-left, top-right, bottom-left, bottom-right; the first ``n``
    are returned.
    """
    if not 1 <= n <= 4:
        raise ValueError(f"number of patches must be in 1..4, got {n}")
    if s < 1 or 2 * s > min(h, w):
        raise ValueError(f"patch side {s} must satisfy 1 <= s <= min(h, w) / 2 for a {h}x{w} image")
    corners = [(0, 0), (0, w - s), (h - s, 0), (h - s, w - s)]
    return [PixelCoord(r, c) for r, c in corners[:n]]


def patch_side(area_fraction: float, h: int, w: int) -> int:
    return max(1, int(round(math.sqrt(area_fraction * h * w))))


@dataclass
class Mask:
    data: np.ndarray  # (H, W) of 0.0 / 1.0

    @property
    def shape(self):
        return self.data.shape

    @property
    def support(self) -> np.ndarray:
        return self.data > 0

    def popcount(self) -> int:
        return int(self.data.sum())


def build_mask(h: int, w: int, s: int, placements) -> Mask:
    q = np.zeros((h, w))
    for r, c in placements:
        if r < 0 or c < 0 or r + s > h or c + s > w:
            raise ValueError(f"placement {(r, c)} with side {s} falls outside a {h}x{w} image")
        q[r : r + s, c : c + s] = 1.0
    return Mask(q)


def apply_patch(img, delta, mask: Mask) -> np.ndarray:
    """``(1 - q) * x + q * delta``, with ``q`` broadcast over channels."""
    img = check_image(img)
    delta = np.asarray(delta, dtype=np.float64)
    if delta.ndim == 2:
        delta = delta[:, :, None]
    q = np.asarray(mask.data if isinstance(mask, Mask) else mask, dtype=np.float64)
    if delta.shape != img.shape or q.shape != img.shape[:2]:
        raise ValueError(f"shape mismatch: image {img.shape}, patch {delta.shape}, mask {q.shape}")
    q = q[:, :, None]
    return np.clip((1.0 - q) * img + q * delta, 0.0, 1.0)


@dataclass(frozen=True)
class AttackConfig:
    """Settings for :func:`train_lavan`.

    ``ascent=False`` flips the update sign, so the patch descends the
    target-minus-competitor margin instead of climbing it.
    ``competitor="source"`` pins the suppressed class to the clean prediction
    instead of the live runner-up.
    """

    target_class: int = 0
    target_prob: float = 0.9
    step: float = 1e-2
    max_iters: int = 500
    area_fraction: float = 0.01
    n_patches: int = 1
    ascent: bool = True
    competitor: str = "live"
    init: str = "zeros"

    def __post_init__(self):
        if not 0.0 < self.target_prob <= 1.0:
            raise ValueError("target_prob must lie in (0, 1]")
        if not self.step > 0:
            raise ValueError("step must be > 0")
        if int(self.max_iters) != self.max_iters or self.max_iters < 0:
            raise ValueError("max_iters must be a non-negative integer")
        if not 0.0 < self.area_fraction <= 0.25:
            raise ValueError("area_fraction must lie in (0, 0.25]")
        if not 1 <= self.n_patches <= 4:
            raise ValueError("n_patches must be in 1..4")
        if self.competitor not in ("live", "source"):
            raise ValueError("competitor must be 'live' or 'source'")
        if self.init not in ("zeros", "uniform"):
            raise ValueError("init must be 'zeros' or 'uniform'")

    def side(self, h: int, w: int) -> int:
        return patch_side(self.area_fraction, h, w)

    def placements(self, h: int, w: int) -> list[PixelCoord]:
        return corner_placements(h, w, self.side(h, w), self.n_patches)

    def mask(self, h: int, w: int) -> Mask:
        return build_mask(h, w, self.side(h, w), self.placements(h, w))


@dataclass
class TraceRow:
    iteration: int
    target_prob: float
    predicted: int
    margin: float  # target logit minus competitor logit


@dataclass
class PatchResult:
    side: int
    placements: list[PixelCoord]
    mask: Mask
    delta: np.ndarray  # full-size (H, W, C) field; only the mask support matters
    adversarial: np.ndarray
    source_class: int
    target_class: int
    success: bool
    trace: list[TraceRow] = field(default_factory=list)

    @property
    def patches(self) -> list[np.ndarray]:
        s = self.side
        return [self.delta[r : r + s, c : c + s].copy() for r, c in self.placements]

    @property
    def iterations(self) -> int:
        return len(self.trace) - 1

    def trace_csv(self) -> str:
        lines = ["iteration,target_prob,predicted_class,margin"]
        lines += [f"{t.iteration},{t.target_prob!r},{t.predicted},{t.margin!r}" for t in self.trace]
        return "\n".join(lines) + "\n"


def _competitor(logits, target, source, mode):
    if mode == "source" and source != target:
        return source
    masked = np.array(logits, dtype=np.float64)
    masked[target] = -np.inf
    return int(np.argmax(masked))


def train_lavan(img, model, cfg: AttackConfig, mask: Mask | None = None, seed: int = 0) -> PatchResult:
    """Train a patch that pushes ``model`` towards ``cfg.target_class``.

    Iterates until the target probability reaches ``cfg.target_prob`` or
    ``cfg.max_iters`` steps have run. Each step moves the patch along the
    input gradient of (target logit - competitor logit), restricted to the
    mask, and clamps it to [0, 1]. Not reaching the target probability is
    reported through ``success``, never raised.
    """
    img = check_image(img)
    h, w, _ = img.shape
    if mask is None:
        mask = cfg.mask(h, w)
        placements, side = cfg.placements(h, w), cfg.side(h, w)
    else:
        placements, side = _mask_squares(mask), _mask_side(mask)
    target = int(cfg.target_class)
    source = int(np.argmax(model.predict_logits(img)))
    if source == target:
        raise ValueError(f"image is already classified as the target class {target}")

    support = mask.support[:, :, None]
    if cfg.init == "uniform":
        delta = np.random.default_rng(seed).random(img.shape)
    else:
        delta = np.zeros_like(img)
    delta = np.where(support, delta, 0.0)
    adv = apply_patch(img, delta, mask)
    sign = 1.0 if cfg.ascent else -1.0

    trace = []

    def record(i, logits):
        comp = _competitor(logits, target, source, cfg.competitor)
        trace.append(
            TraceRow(i, float(softmax(logits)[target]), int(np.argmax(logits)), float(logits[target] - logits[comp]))
        )
        return comp

    logits = model.predict_logits(adv)
    comp = record(0, logits)
    i = 0
    while softmax(logits)[target] < cfg.target_prob and i < cfg.max_iters:
        grad = model.input_gradient(adv, target) - model.input_gradient(adv, comp)
        delta = np.clip(delta + sign * cfg.step * np.where(support, grad, 0.0), 0.0, 1.0)
        adv = apply_patch(img, delta, mask)
        i += 1
        logits = model.predict_logits(adv)
        comp = record(i, logits)

    success = bool(softmax(logits)[target] >= cfg.target_prob)
    return PatchResult(side, placements, mask, delta, adv, source, target, success, trace)


def _mask_squares(mask: Mask) -> list[PixelCoord]:
    """Recover top-left corners of the square blocks in a corner-style mask."""
    q = mask.support
    side = _mask_side(mask)
    out = []
    for r, c in zip(*np.nonzero(q)):
        if (r == 0 or not q[r - 1, c]) and (c == 0 or not q[r, c - 1]):
            out.append(PixelCoord(int(r), int(c)))
    return out if side else []


def _mask_side(mask: Mask) -> int:
    q = mask.support
    if not q.any():
        return 0
    r, c = np.argwhere(q)[0]
    s = 0
    while r + s < q.shape[0] and q[r + s, c]:
        s += 1
    return s


class LaVANPatch(TransformerMixin, BaseEstimator):
    """Estimator view of a patch attack: ``fit`` trains on one image, ``transform`` pastes."""

    def __init__(
        self,
        model=None,
        target_class=0,
        target_prob=0.9,
        step=1e-2,
        max_iters=500,
        area_fraction=0.01,
        n_patches=1,
        ascent=True,
        competitor="live",
    ):
        self.model = model
        self.target_class = target_class
        self.target_prob = target_prob
        self.step = step
        self.max_iters = max_iters
        self.area_fraction = area_fraction
        self.n_patches = n_patches
        self.ascent = ascent
        self.competitor = competitor

    def _config(self):
        return AttackConfig(
            target_class=self.target_class,
            target_prob=self.target_prob,
            step=self.step,
            max_iters=self.max_iters,
            area_fraction=self.area_fraction,
            n_patches=self.n_patches,
            ascent=self.ascent,
            competitor=self.competitor,
        )

    def fit(self, X, y=None):
        self.result_ = train_lavan(X, self.model, self._config())
        self.delta_ = self.result_.delta
        self.mask_ = self.result_.mask
        self.success_ = self.result_.success
        return self

    def transform(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 4:
            return np.stack([apply_patch(x, self.delta_, self.mask_) for x in X])
        return apply_patch(X, self.delta_, self.mask_)

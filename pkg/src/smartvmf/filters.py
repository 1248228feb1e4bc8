"""SMART-VMF: adaptive, multi-scale weighted geometric-median filtering.

Each output pixel is built in four steps:

1. adaptive weights over a clipped ``s x s`` window, the product of a content
   falloff, a spatial falloff and an attention boost ``1 + lam * a_j``;
2. a weighted geometric median of the window via a fixed number of Weiszfeld
   updates started at the centre pixel;
3. the residual energy of that median, ``sum_j w_j * ||median - x_j||``;
4. a softmax over ``-residual / tau`` across scales fuses the per-scale medians.

The module exposes the per-neighbourhood building blocks (used by the
per-pixel reference path and by tests) and a vectorised whole-image kernel.
The classic vector median filter is included as a baseline.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .image import PixelCoord, check_attention, check_image, check_odd_side, window

FUSION_MODES = ("reliability", "mean", "uniform")


@dataclass(frozen=True)
class FilterConfig:
    """Hyperparameters and component toggles for :func:`smart_vmf`.

    ``sigma_p=None`` ties the spatial falloff to the window: half the side, in
    pixels, for each scale.
    """

    scales: tuple[int, ...] = (3, 5, 7)
    sigma_c: float = 0.3
    sigma_p: float | None = None
    lam: float = 1.0
    tau: float = 0.1
    max_iters: int = 20
    epsilon: float = 1e-6
    use_content: bool = True
    use_spatial: bool = True
    use_attention: bool = True
    fusion_mode: str = "reliability"

    def __post_init__(self):
        scales = self.scales
        if isinstance(scales, (int, np.integer)):
            scales = (scales,)
        scales = tuple(check_odd_side(s) for s in scales)
        if not scales:
            raise ValueError("scales must be non-empty")
        object.__setattr__(self, "scales", scales)
        for name in ("sigma_c", "tau", "epsilon"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.sigma_p is not None and not self.sigma_p > 0:
            raise ValueError(f"sigma_p must be > 0, got {self.sigma_p}")
        if not self.lam >= 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValueError(f"max_iters must be an integer >= 1, got {self.max_iters}")
        if self.fusion_mode not in FUSION_MODES:
            raise ValueError(f"fusion_mode must be one of {FUSION_MODES}, got {self.fusion_mode!r}")

    def spatial_sigma(self, side: int) -> float:
        return self.sigma_p if self.sigma_p is not None else side / 2.0

    def replace(self, **changes) -> "FilterConfig":
        return dataclasses.replace(self, **changes)


# Named component ablations of the full filter; mean and uniform fusion are aliases.
FILTER_VARIANTS: dict[str, dict] = {
    "full": {},
    "no_attention": {"use_attention": False},
    "no_content": {"use_content": False},
    "no_spatial": {"use_spatial": False},
    "single_scale": {"scales": (5,)},
    "mean_fusion": {"fusion_mode": "mean"},
    "uniform_fusion": {"fusion_mode": "uniform"},
}


def variant_config(name: str, base: FilterConfig | None = None) -> FilterConfig:
    if name not in FILTER_VARIANTS:
        raise ValueError(f"unknown variant {name!r}; choose from {sorted(FILTER_VARIANTS)}")
    return (base or FilterConfig()).replace(**FILTER_VARIANTS[name])


@dataclass
class WeightedNeighborhood:
    center: PixelCoord
    center_pixel: np.ndarray
    coords: np.ndarray  # (k, 2) int
    pixels: np.ndarray  # (k, C)
    weights: np.ndarray  # (k,), sums to 1

    def __len__(self):
        return len(self.weights)


class ScaleCandidate(NamedTuple):
    value: np.ndarray
    residual: float


# ---------------------------------------------------------------------------
# per-neighbourhood building blocks
# ---------------------------------------------------------------------------


def adaptive_weights(
    pixels,
    coords,
    center_pixel,
    center_coord,
    attention=None,
    cfg: FilterConfig | None = None,
    side: int | None = None,
) -> WeightedNeighborhood:
    """Normalised adaptive weights for one window.

    ``attention`` is either a full attention map (indexed by ``coords``), a
    per-entry vector, or ``None`` (all ``a_j = 0``). ``side`` picks the
    default spatial falloff and is inferred from the coordinates' extent when
    omitted.
    """
    cfg = cfg or FilterConfig()
    pixels = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 2)
    if len(pixels) == 0:
        raise ValueError("neighborhood must be non-empty")
    if len(coords) != len(pixels):
        raise ValueError("coords and pixels differ in length")
    center_pixel = np.asarray(center_pixel, dtype=np.float64)
    center = PixelCoord(int(center_coord[0]), int(center_coord[1]))

    k = len(pixels)
    w = np.ones(k)
    if cfg.use_content:
        diff = pixels - center_pixel
        w = w * np.exp(-np.einsum("kc,kc->k", diff, diff) / cfg.sigma_c**2)
    if cfg.use_spatial:
        if side is None:
            off = np.abs(coords - np.asarray(center)).max() if k else 0
            side = 2 * int(off) + 1
        dp = (coords - np.asarray(center)).astype(np.float64)
        w = w * np.exp(-(dp**2).sum(axis=1) / cfg.spatial_sigma(side) ** 2)
    if cfg.use_attention and attention is not None:
        att = np.asarray(attention, dtype=np.float64)
        a = att[coords[:, 0], coords[:, 1]] if att.ndim == 2 else att.reshape(k)
        w = w * (1.0 + cfg.lam * a)
    total = 0.0
    for v in w:
        total += v
    return WeightedNeighborhood(center, center_pixel, coords, pixels, w / total)


def weiszfeld_objective(nbhd: WeightedNeighborhood, z, epsilon: float) -> float:
    d = np.maximum(_dist(nbhd.pixels, np.asarray(z)), epsilon)
    return _weighted_sum(nbhd.weights, d)


def weiszfeld_median(
    nbhd: WeightedNeighborhood,
    cfg: FilterConfig | None = None,
    history: list | None = None,
    start=None,
) -> np.ndarray:
    """Weighted geometric median by exactly ``cfg.max_iters`` Weiszfeld updates.

    Starts at the centre pixel unless ``start`` is given. An update that would
    raise the floored objective is rejected (the iterate stays put); this can
    only happen within ``epsilon`` of a data point, where the floor breaks the
    usual descent guarantee. If ``history`` is a list, the objective is
    appended before the first update and after every update.
    """
    cfg = cfg or FilterConfig()
    x = nbhd.pixels
    w = nbhd.weights
    z = np.array(nbhd.center_pixel if start is None else start, dtype=np.float64)
    d = np.maximum(_dist(x, z), cfg.epsilon)
    obj = _weighted_sum(w, d)
    if history is not None:
        history.append(obj)
    for _ in range(cfg.max_iters):
        coef = w / d
        num = np.zeros_like(z)
        den = 0.0
        for cj, xj in zip(coef, x):
            num += cj * xj
            den += cj
        z_new = num / den
        d_new = np.maximum(_dist(x, z_new), cfg.epsilon)
        obj_new = _weighted_sum(w, d_new)
        if obj_new <= obj:
            z, d, obj = z_new, d_new, obj_new
        if history is not None:
            history.append(obj)
    return z


def _dist(x, z) -> np.ndarray:
    # same expression as the vectorised kernel, so both paths round alike
    return np.sqrt(((x - z) ** 2).sum(axis=1))


def _weighted_sum(w, d) -> float:
    total = 0.0
    for wj, dj in zip(w, d):
        total += wj * dj
    return total


def residual_energy(nbhd: WeightedNeighborhood, median) -> float:
    """Weighted (unfloored) distance of ``median`` to the window pixels."""
    d = _dist(nbhd.pixels, np.asarray(median, dtype=np.float64))
    total = 0.0
    for wj, dj in zip(nbhd.weights, d):
        total += wj * dj
    return total


def fusion_weights(residuals, cfg: FilterConfig | None = None) -> np.ndarray:
    """Per-scale mixing weights; residuals are ignored outside reliability mode."""
    cfg = cfg or FilterConfig()
    r = np.asarray(residuals, dtype=np.float64)
    if r.shape[0] == 0:
        raise ValueError("at least one scale candidate is required")
    if cfg.fusion_mode == "reliability":
        logits = -r / cfg.tau
        e = np.exp(logits - logits.max(axis=0))
        return e / e.sum(axis=0)
    return np.full(r.shape, 1.0 / r.shape[0])


def fuse_scales(candidates: Sequence[ScaleCandidate], cfg: FilterConfig | None = None) -> np.ndarray:
    if len(candidates) == 0:
        raise ValueError("at least one scale candidate is required")
    pi = fusion_weights([c.residual for c in candidates], cfg)
    out = np.zeros_like(np.asarray(candidates[0].value, dtype=np.float64))
    for p, c in zip(pi, candidates):
        out += p * np.asarray(c.value, dtype=np.float64)
    return out


def smart_vmf_pixel(img, center, attention=None, cfg: FilterConfig | None = None) -> np.ndarray:
    """Filter a single pixel by direct composition of the building blocks."""
    cfg = cfg or FilterConfig()
    candidates = []
    for side in cfg.scales:
        entries = window(img, center, side)
        coords = np.array([e[0] for e in entries])
        pixels = np.array([e[1] for e in entries])
        nbhd = adaptive_weights(
            pixels, coords, img[center[0], center[1]], center, attention, cfg, side=side
        )
        z = weiszfeld_median(nbhd, cfg)
        candidates.append(ScaleCandidate(z, residual_energy(nbhd, z)))
    return np.clip(fuse_scales(candidates, cfg), 0.0, 1.0)


def smart_vmf_reference(img, attention=None, cfg: FilterConfig | None = None) -> np.ndarray:
    """Pixel-by-pixel SMART-VMF. Slow; serves as the oracle for the kernel."""
    img = check_image(img)
    attention = check_attention(attention, img.shape[:2])
    out = np.empty_like(img)
    for r in range(img.shape[0]):
        for c in range(img.shape[1]):
            out[r, c] = smart_vmf_pixel(img, (r, c), attention, cfg)
    return out


# ---------------------------------------------------------------------------
# vectorised kernel
# ---------------------------------------------------------------------------


def _neighbourhood_stack(arr: np.ndarray, side: int, rows: slice) -> tuple[np.ndarray, np.ndarray]:
    """Return (values, valid) of shape (h, W, side*side, ...) for the given rows.

    Out-of-image entries are zero-filled and flagged invalid; they receive zero
    weight downstream, which is equivalent to clipping the window.
    """
    half = side // 2
    h, w = arr.shape[:2]
    extra = arr.shape[2:]
    padded = np.zeros((h + 2 * half, w + 2 * half) + extra)
    padded[half : half + h, half : half + w] = arr
    valid = np.zeros((h + 2 * half, w + 2 * half), dtype=bool)
    valid[half : half + h, half : half + w] = True
    r0, r1, _ = rows.indices(h)
    vals = []
    masks = []
    for dy in range(side):
        for dx in range(side):
            vals.append(padded[r0 + dy : r1 + dy, dx : dx + w])
            masks.append(valid[r0 + dy : r1 + dy, dx : dx + w])
    return np.stack(vals, axis=2), np.stack(masks, axis=2)


def _scale_pass(img, attention, side, cfg, rows):
    """Weights, median and residual for one scale over a block of rows."""
    x, valid = _neighbourhood_stack(img, side, rows)  # (h, W, K, C), (h, W, K)
    centre = img[rows]  # (h, W, C)
    k = side * side
    half = side // 2
    offs = np.array([(dy - half, dx - half) for dy in range(side) for dx in range(side)], dtype=np.float64)

    w = valid.astype(np.float64)
    if cfg.use_content:
        diff = x - centre[:, :, None, :]
        w = w * np.exp(-(diff * diff).sum(axis=3) / cfg.sigma_c**2)
    if cfg.use_spatial:
        w = w * np.exp(-(offs**2).sum(axis=1) / cfg.spatial_sigma(side) ** 2)
    if cfg.use_attention and attention is not None:
        a, _ = _neighbourhood_stack(attention, side, rows)
        w = w * (1.0 + cfg.lam * a)
    total = np.zeros(w.shape[:2])
    for j in range(k):
        total += w[:, :, j]
    w = w / total[:, :, None]

    def floored(z):
        d = np.maximum(np.sqrt(((x - z[:, :, None, :]) ** 2).sum(axis=3)), cfg.epsilon)
        obj = np.zeros(z.shape[:2])
        for j in range(k):
            obj += w[:, :, j] * d[:, :, j]
        return d, obj

    z = centre.copy()
    d, obj = floored(z)
    for _ in range(cfg.max_iters):
        coef = w / d
        num = np.zeros_like(z)
        den = np.zeros(z.shape[:2])
        for j in range(k):
            num += coef[:, :, j, None] * x[:, :, j]
            den += coef[:, :, j]
        z_new = num / den[:, :, None]
        d_new, obj_new = floored(z_new)
        # reject steps that raise the floored objective (see weiszfeld_median)
        ok = obj_new <= obj
        z = np.where(ok[:, :, None], z_new, z)
        d = np.where(ok[:, :, None], d_new, d)
        obj = np.where(ok, obj_new, obj)

    d = np.sqrt(((x - z[:, :, None, :]) ** 2).sum(axis=3))
    resid = np.zeros(z.shape[:2])
    for j in range(k):
        resid += w[:, :, j] * d[:, :, j]
    return z, resid


def _filter_rows(img, attention, cfg, rows, return_weights=False):
    medians = []
    residuals = []
    for side in cfg.scales:
        z, e = _scale_pass(img, attention, side, cfg, rows)
        medians.append(z)
        residuals.append(e)
    pi = fusion_weights(np.stack(residuals), cfg)  # (S, h, W)
    out = np.zeros_like(medians[0])
    for p, z in zip(pi, medians):
        out += p[:, :, None] * z
    out = np.clip(out, 0.0, 1.0)
    if return_weights:
        return out, pi
    return out


def smart_vmf(
    img,
    attention=None,
    cfg: FilterConfig | None = None,
    *,
    block_rows: int | None = None,
    n_jobs: int | None = None,
    return_fusion_weights: bool = False,
):
    """Filter a whole image with SMART-VMF.

    Rows are processed in independent blocks of ``block_rows`` (default: all
    rows at once); ``n_jobs`` farms blocks out through joblib. Each pixel's
    sums run in a fixed order, so the result is bitwise independent of the
    partitioning.
    """
    cfg = cfg or FilterConfig()
    img = check_image(img)
    attention = check_attention(attention, img.shape[:2])
    h = img.shape[0]
    step = h if not block_rows else max(1, int(block_rows))
    blocks = [slice(r, min(h, r + step)) for r in range(0, h, step)]
    if n_jobs is not None and n_jobs != 1 and len(blocks) > 1:
        from joblib import Parallel, delayed

        parts = Parallel(n_jobs=n_jobs)(
            delayed(_filter_rows)(img, attention, cfg, b, return_fusion_weights) for b in blocks
        )
    else:
        parts = [_filter_rows(img, attention, cfg, b, return_fusion_weights) for b in blocks]
    if return_fusion_weights:
        return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts], axis=1)
    return np.concatenate(parts)


def classic_vmf(img, side: int = 3) -> np.ndarray:
    """Classic vector median filter.

    Each pixel becomes the window member with the smallest summed Euclidean
    distance to all other members; ties go to the first member in row-major
    order.
    """
    img = check_image(img)
    side = check_odd_side(side)
    h, w, _ = img.shape
    x, valid = _neighbourhood_stack(img, side, slice(0, h))
    k = side * side
    agg = np.zeros((h, w, k))
    for i in range(k):
        acc = np.zeros((h, w))
        for j in range(k):
            dij = np.sqrt(((x[:, :, i] - x[:, :, j]) ** 2).sum(axis=2))
            acc += np.where(valid[:, :, j], dij, 0.0)
        agg[:, :, i] = np.where(valid[:, :, i], acc, np.inf)
    best = np.argmin(agg, axis=2)
    return np.take_along_axis(x, best[:, :, None, None], axis=2)[:, :, 0].copy()


# ---------------------------------------------------------------------------
# estimator wrappers
# ---------------------------------------------------------------------------


def _as_batch(X):
    """Return (list of images, was_single)."""
    if isinstance(X, np.ndarray) and X.ndim in (2, 3):
        return [X], True
    if isinstance(X, np.ndarray) and X.ndim == 4:
        return list(X), False
    return list(X), False


def _restack(outs, single, X):
    if single:
        return outs[0]
    if isinstance(X, np.ndarray):
        return np.stack(outs)
    return outs


class SmartVMF(TransformerMixin, BaseEstimator):
    """scikit-learn transformer around :func:`smart_vmf`.

    ``fit`` only validates hyperparameters. ``transform`` accepts one image,
    an (N, H, W, C) array or a list of images; an optional ``attention`` map
    (or one per image) can be passed through.
    """

    def __init__(
        self,
        scales=(3, 5, 7),
        sigma_c=0.3,
        sigma_p=None,
        lam=1.0,
        tau=0.1,
        max_iters=20,
        epsilon=1e-6,
        use_content=True,
        use_spatial=True,
        use_attention=True,
        fusion_mode="reliability",
        n_jobs=None,
    ):
        self.scales = scales
        self.sigma_c = sigma_c
        self.sigma_p = sigma_p
        self.lam = lam
        self.tau = tau
        self.max_iters = max_iters
        self.epsilon = epsilon
        self.use_content = use_content
        self.use_spatial = use_spatial
        self.use_attention = use_attention
        self.fusion_mode = fusion_mode
        self.n_jobs = n_jobs

    @classmethod
    def from_config(cls, cfg: FilterConfig, **kwargs) -> "SmartVMF":
        return cls(**dataclasses.asdict(cfg), **kwargs)

    def get_config(self) -> FilterConfig:
        names = [f.name for f in dataclasses.fields(FilterConfig)]
        return FilterConfig(**{n: getattr(self, n) for n in names})

    def fit(self, X=None, y=None):
        self.config_ = self.get_config()
        return self

    def transform(self, X, attention=None):
        cfg = getattr(self, "config_", None) or self.get_config()
        images, single = _as_batch(X)
        if attention is None or (isinstance(attention, np.ndarray) and attention.ndim == 2):
            maps = [attention] * len(images)
        else:
            maps = list(attention)
        outs = [
            smart_vmf(im, a, cfg, block_rows=8 if self.n_jobs not in (None, 1) else None, n_jobs=self.n_jobs)
            for im, a in zip(images, maps)
        ]
        return _restack(outs, single, X)


class ClassicVMF(TransformerMixin, BaseEstimator):
    def __init__(self, side=3):
        self.side = side

    def fit(self, X=None, y=None):
        self.side_ = check_odd_side(self.side)
        return self

    def transform(self, X):
        side = check_odd_side(self.side)
        images, single = _as_batch(X)
        return _restack([classic_vmf(im, side) for im in images], single, X)

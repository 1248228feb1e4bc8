"""Classifier contract, a linear reference model, and a synthetic dataset.

The attack and evaluation code only needs ``predict_logits``,
``input_gradient`` and ``num_classes``. :class:`ReferenceClassifier` supplies
them with a multinomial logistic regression on average-pooled pixels, whose
input gradient is exact and cheap.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .image import check_image

MAX_SYNTHETIC_CLASSES = 16
_MODEL_MAGIC = b"SVMFREF1"


@runtime_checkable
class ClassifierContract(Protocol):
    num_classes: int

    def predict_logits(self, img) -> np.ndarray: ...

    def input_gradient(self, img, cls: int) -> np.ndarray: ...


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class SyntheticDataset:
    images: np.ndarray  # (N, H, W, C)
    labels: np.ndarray  # (N,)
    num_classes: int
    seed: int

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "SyntheticDataset":
        idx = np.asarray(idx)
        return SyntheticDataset(self.images[idx], self.labels[idx], self.num_classes, self.seed)


def generate_synthetic(
    seed: int = 7,
    num_classes: int = 4,
    per_class: int = 25,
    height: int = 32,
    width: int = 32,
    channels: int = 3,
    noise: float = 0.02,
    period: float = 12.0,
    amp_range: tuple[float, float] = (0.015, 0.03),
) -> SyntheticDataset:
    """Oriented sinusoidal gratings, one orientation per class, plus noise.

    Class ``k`` uses orientation ``pi * k / K`` and a fixed phase, so class
    means are distinct gratings and the classes are linearly separable.
    Images are ordered class by class.
    """
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    if num_classes > MAX_SYNTHETIC_CLASSES:
        raise ValueError(f"at most {MAX_SYNTHETIC_CLASSES} synthetic classes are supported")
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    yy -= (height - 1) / 2
    xx -= (width - 1) / 2
    gains = np.linspace(1.0, 0.8, channels)
    images = []
    labels = []
    for k in range(num_classes):
        theta = np.pi * k / num_classes
        phase = 2 * np.pi * k / num_classes
        proj = xx * np.cos(theta) + yy * np.sin(theta)
        base = np.cos(2 * np.pi * proj / period + phase)
        for _ in range(per_class):
            amp = rng.uniform(*amp_range)
            img = 0.5 + amp * base[:, :, None] * gains[None, None, :]
            img = img + rng.normal(0.0, noise, size=img.shape)
            images.append(np.clip(img, 0.0, 1.0))
            labels.append(k)
    return SyntheticDataset(np.stack(images), np.asarray(labels, dtype=np.int64), num_classes, seed)


def pool_features(img, pool_factor: int) -> np.ndarray:
    """Average-pool, flatten and append a bias term. Works on (H,W,C) or (N,H,W,C)."""
    x = np.asarray(img, dtype=np.float64)
    single = x.ndim == 3
    if single:
        x = x[None]
    n, h, w, c = x.shape
    p = pool_factor
    if h % p or w % p:
        raise ValueError(f"image size {h}x{w} is not divisible by pool factor {p}")
    pooled = x.reshape(n, h // p, p, w // p, p, c).mean(axis=(2, 4)).reshape(n, -1)
    feats = np.concatenate([pooled, np.ones((n, 1))], axis=1)
    return feats[0] if single else feats


class ReferenceClassifier(ClassifierMixin, BaseEstimator):
    """Multinomial logistic regression on ``pool_factor``-pooled pixels.

    Trained by full-batch gradient descent from zero weights, so the fitted
    model is a deterministic function of the data and hyperparameters.
    """

    def __init__(self, pool_factor=4, epochs=20000, lr=0.1):
        self.pool_factor = pool_factor
        self.epochs = epochs
        self.lr = lr

    # -- training ---------------------------------------------------------
    def fit(self, X, y, num_classes=None):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 4 or len(X) == 0:
            raise ValueError("X must be a non-empty (N, H, W, C) image stack")
        y = np.asarray(y, dtype=np.int64)
        k = int(num_classes) if num_classes is not None else int(y.max()) + 1
        feats = pool_features(X, self.pool_factor)
        n, d = feats.shape
        onehot = np.zeros((n, k))
        onehot[np.arange(n), y] = 1.0
        W = np.zeros((k, d))
        losses = []
        for _ in range(int(self.epochs)):
            p = softmax(feats @ W.T)
            losses.append(float(-np.log(p[np.arange(n), y] + 1e-300).mean()))
            W = W - self.lr * ((p - onehot).T @ feats) / n
        p = softmax(feats @ W.T)
        losses.append(float(-np.log(p[np.arange(n), y] + 1e-300).mean()))
        self.coef_ = W
        self.classes_ = np.arange(k)
        self.input_shape_ = X.shape[1:]
        self.loss_history_ = np.asarray(losses)
        return self

    @classmethod
    def from_weights(cls, weights, input_shape, pool_factor=4) -> "ReferenceClassifier":
        model = cls(pool_factor=pool_factor)
        model.coef_ = np.array(weights, dtype=np.float64)
        model.classes_ = np.arange(model.coef_.shape[0])
        model.input_shape_ = tuple(int(v) for v in input_shape)
        h, w, c = model.input_shape_
        expected = (h // pool_factor) * (w // pool_factor) * c + 1
        if model.coef_.ndim != 2 or model.coef_.shape[1] != expected:
            raise ValueError(f"weights must be K x {expected} for input {input_shape}")
        return model

    # -- contract -----------------------------------------------------------
    @property
    def num_classes(self) -> int:
        self._check_fitted()
        return self.coef_.shape[0]

    def _check_fitted(self):
        if not hasattr(self, "coef_"):
            raise NotFittedError("ReferenceClassifier is not fitted")

    def _check_input(self, img):
        self._check_fitted()
        x = np.asarray(img, dtype=np.float64)
        shape = x.shape[-3:] if x.ndim == 4 else (x[:, :, None].shape if x.ndim == 2 else x.shape)
        if tuple(shape) != tuple(self.input_shape_):
            raise ValueError(f"input shape {tuple(shape)} does not match model input {tuple(self.input_shape_)}")
        return x.reshape(x.shape[:-2] + shape[-2:]) if x.ndim == 2 else x

    def predict_logits(self, img) -> np.ndarray:
        """Logits for one image (K,) or a stack (N, K)."""
        x = self._check_input(img)
        return pool_features(x, self.pool_factor) @ self.coef_.T

    def input_gradient(self, img, cls: int) -> np.ndarray:
        """d logit_cls / d x, shaped like the image; constant within each pooling cell."""
        self._check_input(img)
        h, w, c = self.input_shape_
        p = self.pool_factor
        cell = self.coef_[int(cls), :-1].reshape(h // p, w // p, c) / (p * p)
        return np.repeat(np.repeat(cell, p, axis=0), p, axis=1)

    def predict_proba(self, X):
        return softmax(self.predict_logits(X))

    def predict(self, X):
        return np.argmax(self.predict_logits(X), axis=-1)

    # -- persistence --------------------------------------------------------
    def to_bytes(self) -> bytes:
        self._check_fitted()
        k, d = self.coef_.shape
        h, w, c = self.input_shape_
        header = _MODEL_MAGIC + struct.pack("<6I", k, d, int(self.pool_factor), h, w, c)
        return header + self.coef_.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "ReferenceClassifier":
        if data[:8] != _MODEL_MAGIC:
            raise ValueError("not a reference model file")
        k, d, p, h, w, c = struct.unpack("<6I", data[8:32])
        body = data[32:]
        if len(body) != k * d * 8:
            raise ValueError("model payload has the wrong length")
        weights = np.frombuffer(body, dtype="<f8").reshape(k, d)
        return cls.from_weights(weights, (h, w, c), pool_factor=p)

    def manifest(self, **extra) -> str:
        lines = {"pool_factor": self.pool_factor, "epochs": self.epochs, "lr": self.lr}
        lines.update(extra)
        return "".join(f"{key}={val}\n" for key, val in lines.items())

    def save(self, path, **manifest_extra) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())
        with open(f"{path}.manifest", "w", newline="\n") as fh:
            fh.write(self.manifest(**manifest_extra))

    @classmethod
    def load(cls, path) -> "ReferenceClassifier":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def train_reference(data: SyntheticDataset, epochs: int = 20000, lr: float = 0.1, pool_factor: int = 4) -> ReferenceClassifier:
    if len(data) == 0:
        raise ValueError("dataset is empty")
    return ReferenceClassifier(pool_factor=pool_factor, epochs=epochs, lr=lr).fit(
        data.images, data.labels, num_classes=data.num_classes
    )


def predict_logits(model, img) -> np.ndarray:
    return model.predict_logits(check_image(img))


def input_gradient(model, img, cls: int) -> np.ndarray:
    return model.input_gradient(check_image(img), cls)

"""Estimator facade: fit/transform/predict objects over the core modules.

These classes follow the scikit-learn calling convention (constructor
takes hyperparameters only, ``fit`` returns self, ``get_params`` /
``set_params`` expose the constructor arguments) without depending on
scikit-learn itself. ``NeuralClassifier.transform`` returns penultimate
features, so a neural extractor chains into ``KnnClassifier`` the same
way the hybrid experiments do:

    feats = NeuralClassifier(model="swin_toy").fit(X, y).transform(X)
    knn = KnnClassifier(k=5, metric="cosine").fit(feats, y)

All estimators work on in-memory arrays; the file-based workflows live
in the CLI.
"""

from __future__ import annotations

import inspect

import numpy as np

from . import knn as knn_mod
from .autodiff import GradientTape, make_rng, ops
from .data import bilinear_resize
from .ela import ElaConfig, ela_transform
from .exceptions import ConfigError, ShapeError
from .knn import KnnConfig
from .optim import build_optimizer
from .training import TrainConfig, build_model, has_batch_norm

__all__ = ["BaseEstimator", "ElaTransformer", "NeuralClassifier", "KnnClassifier"]


class BaseEstimator:
    """get_params/set_params over the constructor signature."""

    @classmethod
    def _param_names(cls):
        sig = inspect.signature(cls.__init__)
        return [p.name for p in sig.parameters.values() if p.name != "self"]

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params) -> "BaseEstimator":
        valid = set(self._param_names())
        for name, value in params.items():
            if name not in valid:
                raise ConfigError(
                    f"invalid parameter {name!r} for {type(self).__name__}; "
                    f"valid parameters are {sorted(valid)}")
            setattr(self, name, value)
        return self

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.get_params().items())
        return f"{type(self).__name__}({args})"


def _check_fitted(est, attr: str) -> None:
    if getattr(est, attr, None) is None:
        raise ConfigError(f"{type(est).__name__} is not fitted yet; call fit first")


def _as_uint8_images(X) -> list[np.ndarray]:
    """Accept an (N, H, W, 3) uint8 array or a sequence of HxWx3 images."""
    if isinstance(X, np.ndarray):
        if X.ndim != 4 or X.shape[-1] != 3:
            raise ShapeError(f"expected (N, H, W, 3) images, got {X.shape}")
        imgs = list(X)
    else:
        imgs = [np.asarray(im) for im in X]
    out = []
    for im in imgs:
        if im.ndim != 3 or im.shape[-1] != 3:
            raise ShapeError(f"expected HxWx3 images, got {im.shape}")
        if im.dtype != np.uint8:
            raise ShapeError(f"expected uint8 images, got {im.dtype}")
        out.append(im)
    if not out:
        raise ShapeError("empty image batch")
    return out


def _normalize_batch(imgs: list[np.ndarray], image_size: int) -> np.ndarray:
    batch = np.empty((len(imgs), 3, image_size, image_size), dtype=np.float32)
    for i, im in enumerate(imgs):
        im = bilinear_resize(im, image_size, image_size)
        chw = im.astype(np.float64).transpose(2, 0, 1) / 255.0
        batch[i] = ((chw - 0.5) / 0.5).astype(np.float32)
    return batch


class ElaTransformer(BaseEstimator):
    """Recompression-residual transform as a stateless estimator step.

    transform maps each uint8 RGB image to its uint8 residual image of
    identical shape.
    """

    def __init__(self, quality: int = 90, subsampling: str = "4:2:0",
                 amplification: float = 1.0):
        self.quality = quality
        self.subsampling = subsampling
        self.amplification = amplification

    def _config(self) -> ElaConfig:
        return ElaConfig(quality=self.quality, amplification=self.amplification,
                         subsampling=self.subsampling)

    def fit(self, X=None, y=None) -> "ElaTransformer":
        self._config()  # validate hyperparameters
        return self

    def transform(self, X) -> list[np.ndarray]:
        cfg = self._config()
        return [ela_transform(im, cfg) for im in _as_uint8_images(X)]

    def fit_transform(self, X, y=None) -> list[np.ndarray]:
        return self.fit(X, y).transform(X)


class NeuralClassifier(BaseEstimator):
    """Any registered backbone behind a fit/predict/transform interface.

    fit trains on uint8 RGB images in memory with the same derived
    random streams as the file-based runner. transform returns the
    penultimate feature matrix, making this class usable as a feature
    extractor for KnnClassifier.
    """

    def __init__(self, model: str = "swin_toy", optimizer: str = "adamw",
                 learning_rate: float = 1e-4, batch_size: int = 8,
                 weight_decay: float = 0.01, epochs: int = 5, seed: int = 0,
                 dropout: float = 0.1, image_size: int = 64):
        self.model = model
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.seed = seed
        self.dropout = dropout
        self.image_size = image_size
        self.net_ = None

    def _train_config(self) -> TrainConfig:
        return TrainConfig(model=self.model, optimizer=self.optimizer,
                           learning_rate=self.learning_rate,
                           batch_size=self.batch_size,
                           weight_decay=self.weight_decay, epochs=self.epochs,
                           seed=self.seed, dropout=self.dropout,
                           image_size=self.image_size)

    def fit(self, X, y) -> "NeuralClassifier":
        cfg = self._train_config()
        labels = np.asarray(y, dtype=np.int64)
        imgs = _as_uint8_images(X)
        if labels.shape != (len(imgs),):
            raise ShapeError(
                f"labels shape {labels.shape} does not match {len(imgs)} images")
        if not np.isin(labels, (0, 1)).all():
            raise ConfigError("labels must all be 0 or 1")
        batch_all = _normalize_batch(imgs, cfg.image_size)

        net = build_model(cfg)
        bn = has_batch_norm(net)
        if bn and cfg.batch_size < 2:
            raise ConfigError(
                "batch size must be >= 2 to train batch-normalized models")
        opt = build_optimizer(cfg.optimizer, net.named_parameters(),
                              cfg.learning_rate, cfg.weight_decay)
        n = len(imgs)
        for epoch in range(cfg.epochs):
            net.train()
            order = make_rng(cfg.seed, f"shuffle:{epoch}").permutation(n)
            drop_rng = make_rng(cfg.seed, f"dropout:{epoch}")
            for start in range(0, n, cfg.batch_size):
                chunk = order[start:start + cfg.batch_size]
                if bn and len(chunk) == 1:
                    continue
                xb = ops.as_tensor(batch_all[chunk])
                with GradientTape() as tape:
                    logits, _ = net.forward(xb, rng=drop_rng)
                    loss = ops.cross_entropy(logits, labels[chunk])
                tape.gradients(loss)
                opt.step()
                opt.zero_grad()
        net.eval()
        self.net_ = net
        return self

    def _forward_eval(self, X):
        _check_fitted(self, "net_")
        cfg = self._train_config()
        batch = _normalize_batch(_as_uint8_images(X), cfg.image_size)
        self.net_.eval()
        logits_parts, feat_parts = [], []
        for start in range(0, len(batch), cfg.batch_size):
            xb = ops.as_tensor(batch[start:start + cfg.batch_size])
            logits, feats = self.net_.forward(xb)
            logits_parts.append(logits.data)
            feat_parts.append(feats.data)
        return np.concatenate(logits_parts), np.concatenate(feat_parts)

    def predict(self, X) -> np.ndarray:
        logits, _ = self._forward_eval(X)
        return np.argmax(logits, axis=1).astype(np.int64)

    def predict_proba(self, X) -> np.ndarray:
        logits, _ = self._forward_eval(X)
        shifted = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)

    def transform(self, X) -> np.ndarray:
        """Penultimate features, one row per image."""
        _, feats = self._forward_eval(X)
        return feats

    def score(self, X, y) -> float:
        return float((self.predict(X) == np.asarray(y, dtype=np.int64)).mean())


class KnnClassifier(BaseEstimator):
    """Nearest-neighbor vote over feature rows (fit stores, predict scans)."""

    def __init__(self, k: int = 5, metric: str = "euclidean", p: float = 3.0,
                 weighting: str = "uniform", epsilon: float = 1e-8):
        self.k = k
        self.metric = metric
        self.p = p
        self.weighting = weighting
        self.epsilon = epsilon
        self.store_ = None

    def _config(self) -> KnnConfig:
        return KnnConfig(k=self.k, metric=self.metric, p=self.p,
                         weighting=self.weighting, epsilon=self.epsilon)

    def fit(self, X, y) -> "KnnClassifier":
        self._config()  # validate hyperparameters
        self.store_ = knn_mod.fit(np.asarray(X), np.asarray(y))
        return self

    def predict(self, X) -> np.ndarray:
        _check_fitted(self, "store_")
        return knn_mod.predict_batch(self.store_, np.asarray(X), self._config())

    def predict_proba(self, X) -> np.ndarray:
        _check_fitted(self, "store_")
        cfg = self._config()
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise ShapeError(f"expected (M, D) queries, got {X.shape}")
        return np.stack([knn_mod.predict(self.store_, q, cfg)[1] for q in X])

    def score(self, X, y) -> float:
        return float((self.predict(X) == np.asarray(y, dtype=np.int64)).mean())

"""K-nearest-neighbor classification over extracted features.

Exhaustive search only: stores hold at most a few thousand rows, and an
exact scan keeps every prediction reproducible. Ties are deterministic
by construction: neighbor ties resolve by store row order (stable
argsort), vote ties by the lowest class index.

Five distances are supported: cosine, euclidean, manhattan, minkowski
(default exponent 3), and chebyshev. Distance weighting uses 1/(d+eps)
with eps = 1e-8 so an exact-match neighbor (d = 0) stays finite.

Store file layout: one JSON header line {n, d, extractor_id,
label_counts}, then the raw little-endian float32 feature matrix, then
one byte per label.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, IntegrityError, ShapeError

__all__ = [
    "KnnConfig", "FeatureStore", "distance", "pairwise_distances",
    "fit", "predict", "predict_batch", "grid_search",
    "METRICS", "WEIGHTINGS",
]

METRICS = ("cosine", "euclidean", "manhattan", "minkowski", "chebyshev")
WEIGHTINGS = ("uniform", "distance")

N_CLASSES = 2


@dataclass(frozen=True)
class KnnConfig:
    k: int = 5
    metric: str = "euclidean"
    p: float = 3.0
    weighting: str = "uniform"
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.metric not in METRICS:
            raise ConfigError(f"unknown metric {self.metric!r}; expected one of {METRICS}")
        if self.p <= 0:
            raise ConfigError(f"minkowski exponent must be > 0, got {self.p}")
        if self.weighting not in WEIGHTINGS:
            raise ConfigError(
                f"unknown weighting {self.weighting!r}; expected one of {WEIGHTINGS}")
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")


def distance(a, b, metric: str = "euclidean", p: float = 3.0) -> float:
    """Distance between two equal-length vectors under the named metric."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"expected equal-length vectors, got {a.shape} and {b.shape}")
    if metric == "cosine":
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na == 0.0 or nb == 0.0:
            raise ConfigError("cosine distance is undefined for a zero vector")
        return float(1.0 - np.dot(a, b) / (na * nb))
    d = a - b
    if metric == "euclidean":
        return float(np.sqrt(np.sum(d * d)))
    if metric == "manhattan":
        return float(np.sum(np.abs(d)))
    if metric == "chebyshev":
        return float(np.max(np.abs(d))) if d.size else 0.0
    if metric == "minkowski":
        if p <= 0:
            raise ConfigError(f"minkowski exponent must be > 0, got {p}")
        return float(np.sum(np.abs(d) ** p) ** (1.0 / p))
    raise ConfigError(f"unknown metric {metric!r}; expected one of {METRICS}")


@dataclass(frozen=True)
class FeatureStore:
    matrix: np.ndarray  # (N, D) float32
    labels: np.ndarray  # (N,) int64 in {0, 1}
    extractor_id: str = ""

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def save(self, path) -> None:
        counts = {str(c): int((self.labels == c).sum()) for c in range(N_CLASSES)}
        header = {"n": self.n, "d": self.dim, "extractor_id": self.extractor_id,
                  "label_counts": counts}
        with open(path, "wb") as fh:
            fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
            fh.write(b"\n")
            fh.write(np.ascontiguousarray(self.matrix, dtype="<f4").tobytes())
            fh.write(self.labels.astype(np.uint8).tobytes())

    @classmethod
    def load(cls, path) -> "FeatureStore":
        with open(path, "rb") as fh:
            line = fh.readline()
            try:
                header = json.loads(line.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise IntegrityError(f"{path}: malformed store header") from exc
            for key in ("n", "d", "extractor_id", "label_counts"):
                if key not in header:
                    raise IntegrityError(f"{path}: store header is missing {key!r}")
            n, d = int(header["n"]), int(header["d"])
            body = fh.read()
        need = n * d * 4 + n
        if len(body) != need:
            raise IntegrityError(
                f"{path}: expected {need} payload bytes for n={n} d={d}, got {len(body)}")
        matrix = np.frombuffer(body[:n * d * 4], dtype="<f4").reshape(n, d).copy()
        labels = np.frombuffer(body[n * d * 4:], dtype=np.uint8).astype(np.int64)
        return cls(matrix=matrix, labels=labels, extractor_id=header["extractor_id"])


def fit(features, labels, extractor_id: str = "") -> FeatureStore:
    """Build a store from feature rows; rows are kept verbatim."""
    matrix = np.asarray(features, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    if matrix.ndim != 2 or matrix.shape[0] < 1:
        raise ShapeError(f"expected a nonempty (N, D) feature matrix, got {matrix.shape}")
    if labels.shape != (matrix.shape[0],):
        raise ShapeError(
            f"labels shape {labels.shape} does not match {matrix.shape[0]} rows")
    if not np.isfinite(matrix).all():
        raise ConfigError("feature matrix contains non-finite values")
    if not np.isin(labels, (0, 1)).all():
        raise ConfigError("labels must all be 0 or 1")
    matrix = matrix.copy()
    matrix.flags.writeable = False
    labels = labels.copy()
    labels.flags.writeable = False
    return FeatureStore(matrix=matrix, labels=labels, extractor_id=extractor_id)


def pairwise_distances(store: FeatureStore, query: np.ndarray,
                       metric: str, p: float) -> np.ndarray:
    """Distances from one query vector to every store row, float64."""
    rows = store.matrix.astype(np.float64)
    q = np.asarray(query, dtype=np.float64)
    if q.shape != (store.dim,):
        raise ShapeError(f"query shape {q.shape} does not match store dim {store.dim}")
    if metric == "cosine":
        qn = np.linalg.norm(q)
        rn = np.linalg.norm(rows, axis=1)
        if qn == 0.0 or (rn == 0.0).any():
            raise ConfigError("cosine distance is undefined for a zero vector")
        return 1.0 - rows @ q / (rn * qn)
    d = rows - q
    if metric == "euclidean":
        return np.sqrt(np.sum(d * d, axis=1))
    if metric == "manhattan":
        return np.sum(np.abs(d), axis=1)
    if metric == "chebyshev":
        return np.max(np.abs(d), axis=1)
    if metric == "minkowski":
        return np.sum(np.abs(d) ** p, axis=1) ** (1.0 / p)
    raise ConfigError(f"unknown metric {metric!r}; expected one of {METRICS}")


def predict(store: FeatureStore, query, cfg: KnnConfig):
    """Classify one query; returns (label, per-class scores summing to 1)."""
    if cfg.k > store.n:
        raise ConfigError(f"k={cfg.k} exceeds store size {store.n}")
    dists = pairwise_distances(store, query, cfg.metric, cfg.p)
    order = np.argsort(dists, kind="stable")[:cfg.k]
    votes = np.zeros(N_CLASSES, dtype=np.float64)
    for idx in order:
        w = 1.0 if cfg.weighting == "uniform" else 1.0 / (dists[idx] + cfg.epsilon)
        votes[store.labels[idx]] += w
    scores = votes / votes.sum()
    label = int(np.argmax(scores))  # argmax takes the lowest index on ties
    return label, scores


def predict_batch(store: FeatureStore, queries, cfg: KnnConfig) -> np.ndarray:
    """Labels for each row of a (M, D) query matrix."""
    queries = np.asarray(queries, dtype=np.float64)
    if queries.ndim != 2:
        raise ShapeError(f"expected (M, D) queries, got {queries.shape}")
    return np.array([predict(store, q, cfg)[0] for q in queries], dtype=np.int64)


def grid_search(store_train: FeatureStore, store_val: FeatureStore,
                metrics=METRICS, weightings=WEIGHTINGS, ks=(1, 3, 5),
                p: float = 3.0):
    """Accuracy of every metric x weighting x k combination on the
    validation store, ranked descending by accuracy with lexicographic
    (metric, weighting, k) tie-breaks.

    Returns a list of dicts {metric, weighting, k, accuracy}.
    """
    metrics, weightings, ks = tuple(metrics), tuple(weightings), tuple(ks)
    if not metrics or not weightings or not ks:
        raise ConfigError("grid_search requires nonempty metric/weighting/k grids")
    if store_val.n < 1:
        raise ConfigError("validation store is empty")
    bad = [k for k in ks if k > store_train.n]
    if bad:
        raise ConfigError(f"k values {bad} exceed training store size {store_train.n}")
    rows = []
    for metric in metrics:
        for weighting in weightings:
            for k in ks:
                cfg = KnnConfig(k=k, metric=metric, p=p, weighting=weighting)
                preds = predict_batch(store_train, store_val.matrix, cfg)
                acc = float((preds == store_val.labels).mean())
                rows.append({"metric": metric, "weighting": weighting,
                             "k": int(k), "accuracy": acc})
    rows.sort(key=lambda r: (-r["accuracy"], r["metric"], r["weighting"], r["k"]))
    return rows

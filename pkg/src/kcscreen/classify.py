"""Stage 1: control vs KC from the (width, height) of the cropped reflection.

Features are z-scored with the training statistics, clustered into two
groups by Lloyd's algorithm seeded with k-means++, and the cluster whose
centroid is taller is labeled KC.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import RoiCrop

CONTROL = "control"
KC = "kc"


class FewerDistinctPointsThanK(ValueError):
    pass


@dataclass(frozen=True)
class DimFeatures:
    width: float
    height: float
    scene_id: str = ""

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("width and height must be positive")

    def as_array(self) -> np.ndarray:
        return np.array([self.width, self.height], dtype=np.float64)


def extract_dims(crop: RoiCrop, scene_id: str = "") -> DimFeatures:
    return DimFeatures(float(crop.width), float(crop.height), scene_id)


def _n_distinct(points) -> int:
    return len(np.unique(np.asarray(points), axis=0))


def seeding_weights(points, centroids) -> np.ndarray:
    """k-means++ selection probabilities: squared distance to the nearest chosen centroid, normalized."""
    pts = np.asarray(points, dtype=np.float64)
    c = np.atleast_2d(np.asarray(centroids, dtype=np.float64))
    d2 = ((pts[:, None, :] - c[None, :, :]) ** 2).sum(axis=2).min(axis=1)
    total = d2.sum()
    if total == 0:
        raise FewerDistinctPointsThanK("all points coincide with the chosen centroids")
    return d2 / total


def kmeanspp_init(points, k: int, rng=None) -> np.ndarray:
    """Choose ``k`` initial centroids among ``points`` by k-means++."""
    pts = np.asarray(points, dtype=np.float64)
    if k < 1:
        raise ValueError("k must be >= 1")
    if _n_distinct(pts) < k:
        raise FewerDistinctPointsThanK(f"need at least {k} distinct points")
    rng = np.random.default_rng(rng)
    chosen = [int(rng.integers(len(pts)))]
    for _ in range(1, k):
        p = seeding_weights(pts, pts[chosen])
        chosen.append(int(rng.choice(len(pts), p=p)))
    return pts[chosen].copy()


def assign(points, centroids) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-centroid labels (ties to the lowest index) and squared distances."""
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    lab = np.argmin(d2, axis=1)
    return lab, d2


def sse(points, centroids, labels) -> float:
    return float(((points - centroids[labels]) ** 2).sum())


def lloyd(points, init, max_iter: int = 100, tol: float = 1e-6):
    """Plain Lloyd iterations from ``init``.

    Returns ``(centroids, labels, sse_history, n_iter)``.  An empty cluster is
    re-seeded with the point farthest from its current centroid.
    """
    pts = np.asarray(points, dtype=np.float64)
    cent = np.array(init, dtype=np.float64)
    k = len(cent)
    labels, d2 = assign(pts, cent)
    history = [sse(pts, cent, labels)]
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        new = cent.copy()
        for j in range(k):
            members = labels == j
            if members.any():
                new[j] = pts[members].mean(axis=0)
            else:
                far = int(np.argmax(d2[np.arange(len(pts)), labels]))
                new[j] = pts[far]
                labels[far] = j
        shift = np.abs(new - cent).max()
        cent = new
        new_labels, d2 = assign(pts, cent)
        history.append(sse(pts, cent, new_labels))
        stable = np.array_equal(new_labels, labels)
        labels = new_labels
        if stable or shift < tol:
            break
    return cent, labels, history, n_iter


@dataclass
class KMeansModel:
    k: int
    centroids: np.ndarray  # standardized space
    mean: np.ndarray
    std: np.ndarray
    label_map: dict[int, str]
    sse: float = 0.0
    n_iter: int = 0
    history: list[float] = field(default_factory=list, repr=False)

    def standardize(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def centroids_raw(self) -> np.ndarray:
        return self.centroids * self.std + self.mean

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "centroids": self.centroids.tolist(),
            "standardization": {"mean": self.mean.tolist(), "std": self.std.tolist()},
            "label_map": {str(i): v for i, v in self.label_map.items()},
            "sse": self.sse,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KMeansModel":
        return cls(
            k=int(d["k"]),
            centroids=np.array(d["centroids"], dtype=np.float64),
            mean=np.array(d["standardization"]["mean"], dtype=np.float64),
            std=np.array(d["standardization"]["std"], dtype=np.float64),
            label_map={int(i): v for i, v in d["label_map"].items()},
            sse=float(d.get("sse", 0.0)),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "KMeansModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def fit_kmeans(points, k: int = 2, init="k-means++", max_iter: int = 100, tol: float = 1e-6,
               rng=None, n_init: int = 10) -> KMeansModel:
    """Standardize ``points`` and cluster them.

    ``init`` is ``"k-means++"`` or an explicit ``(k, d)`` array of starting
    centroids in raw feature units.  With k-means++ the best of ``n_init``
    seedings (lowest SSE) is kept.  For k = 2 the centroid with the larger
    raw height (second coordinate) is labeled KC.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise ValueError("points must be an (n, d) array")
    if _n_distinct(pts) < k:
        raise FewerDistinctPointsThanK(f"need at least {k} distinct points")
    mean = pts.mean(axis=0)
    std = pts.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    z = (pts - mean) / std

    rng = np.random.default_rng(rng)
    if isinstance(init, str):
        if init != "k-means++":
            raise ValueError(f"unknown init {init!r}")
        starts = [kmeanspp_init(z, k, rng) for _ in range(max(1, n_init))]
    else:
        starts = [(np.asarray(init, dtype=np.float64) - mean) / std]

    best = None
    for start in starts:
        cent, labels, hist, n_iter = lloyd(z, start, max_iter, tol)
        if best is None or hist[-1] < best[2][-1]:
            best = (cent, labels, hist, n_iter)
    cent, labels, hist, n_iter = best

    raw = cent * std + mean
    if k == 2:
        kc = int(np.argmax(raw[:, -1]))
        label_map = {kc: KC, 1 - kc: CONTROL}
    else:
        label_map = {j: f"cluster_{j}" for j in range(k)}
    return KMeansModel(k, cent, mean, std, label_map, hist[-1], n_iter, hist)


def classify_cornea(model: KMeansModel, dims) -> tuple[str, float]:
    """Label of the nearest centroid and the (standardized) distance to it.

    Equidistant points go to the lower centroid index.
    """
    x = dims.as_array() if isinstance(dims, DimFeatures) else np.asarray(dims, dtype=np.float64)
    z = model.standardize(x)
    d = np.sqrt(((model.centroids - z) ** 2).sum(axis=1))
    j = int(np.argmin(d))
    return model.label_map[j], float(d[j])

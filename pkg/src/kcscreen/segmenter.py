"""Single CART classification tree separating pattern pixels from background.

The tree works on the six per-pixel features from
:func:`kcscreen.raster.feature_image`.  Splits are greedy Gini splits at
midpoints between consecutive distinct feature values; a sample goes left
when ``feature < threshold`` (equality goes right).  Ties in impurity go to
the lowest feature index, then the smallest threshold.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .raster import FEATURE_NAMES, feature_image

BACKGROUND = 0
FOREGROUND = 1
LABEL_NAMES = {BACKGROUND: "background", FOREGROUND: "foreground"}

_TIE_EPS = 1e-12


@dataclass
class LabeledPixelSet:
    """Feature rows with class labels (1 = foreground) and where they came from."""

    features: np.ndarray
    labels: np.ndarray
    scene_ids: np.ndarray | None = None
    coords: np.ndarray | None = None  # (x, y) per sample

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64).reshape(len(self.labels), -1)
        self.labels = np.asarray(self.labels).astype(np.int8)

    def __len__(self):
        return len(self.labels)

    @classmethod
    def concat(cls, sets) -> "LabeledPixelSet":
        sets = list(sets)
        ids = [s.scene_ids for s in sets]
        xy = [s.coords for s in sets]
        return cls(
            np.concatenate([s.features for s in sets]),
            np.concatenate([s.labels for s in sets]),
            np.concatenate(ids) if all(i is not None for i in ids) else None,
            np.concatenate(xy) if all(c is not None for c in xy) else None,
        )


def sample_pixels(image, truth_mask, n_max: int = 50_000, rng=None,
                  scene_id: str = "") -> LabeledPixelSet:
    """Class-stratified random sample of at most ``n_max`` labeled pixels.

    Both classes keep their share of the image; each present class gets at
    least one sample.
    """
    rng = np.random.default_rng(rng)
    truth = np.asarray(truth_mask, dtype=bool)
    flat = truth.ravel()
    total = flat.size
    picks = []
    for cls in (False, True):
        idx = np.flatnonzero(flat == cls)
        if idx.size == 0:
            continue
        k = min(idx.size, max(1, int(round(n_max * idx.size / total))))
        picks.append(rng.choice(idx, size=k, replace=False))
    sel = np.sort(np.concatenate(picks))
    ys, xs = np.divmod(sel, truth.shape[1])
    feats = feature_image(np.asarray(image)[ys, xs][None])[0]
    return LabeledPixelSet(feats, flat[sel].astype(np.int8),
                           np.full(sel.size, scene_id, dtype=object), np.stack([xs, ys], axis=1))


def gini(counts) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(1.0 - np.sum(p * p))


def best_split(X, y, min_leaf: int = 1):
    """Best (feature, threshold, weighted impurity) over all features.

    Returns ``None`` when no split leaves ``min_leaf`` samples on both sides.
    """
    n = len(y)
    best = None
    for f in range(X.shape[1]):
        order = np.argsort(X[:, f], kind="stable")
        v = X[order, f]
        fg = np.cumsum(y[order] == FOREGROUND)
        n_left = np.arange(1, n)
        fg_left = fg[:-1]
        fg_right = fg[-1] - fg_left
        n_right = n - n_left
        valid = (v[:-1] < v[1:]) & (n_left >= min_leaf) & (n_right >= min_leaf)
        if not valid.any():
            continue
        bg_left = n_left - fg_left
        bg_right = n_right - fg_right
        # n * weighted gini = n_l*gini_l + n_r*gini_r
        imp = (n_left - (fg_left**2 + bg_left**2) / n_left
               + n_right - (fg_right**2 + bg_right**2) / n_right) / n
        imp = np.where(valid, imp, np.inf)
        m = imp.min()
        i = int(np.flatnonzero(imp <= m + _TIE_EPS)[0])
        if best is None or imp[i] < best[2] - _TIE_EPS:
            best = (f, float((v[i] + v[i + 1]) / 2.0), float(imp[i]))
    return best


class ClassificationTree:
    """Array-backed binary tree.

    Node ``i`` is internal when ``feature[i] >= 0``; its children are
    ``left[i]`` / ``right[i]``.  Leaves carry a class label and the fraction
    of training samples of that class (``purity``).
    """

    def __init__(self, max_depth: int = 8, min_leaf: int = 16):
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.label: list[int] = []
        self.purity: list[float] = []
        self.n_samples: list[int] = []

    def _add(self, feature=-1, threshold=0.0, label=BACKGROUND, purity=1.0, n=0) -> int:
        self.feature.append(feature)
        self.threshold.append(threshold)
        self.left.append(-1)
        self.right.append(-1)
        self.label.append(label)
        self.purity.append(purity)
        self.n_samples.append(n)
        return len(self.feature) - 1

    @classmethod
    def leaf(cls, label: int, purity: float = 1.0) -> "ClassificationTree":
        tree = cls(max_depth=0, min_leaf=1)
        tree._add(label=label, purity=purity)
        return tree

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        def walk(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(walk(self.left[i]), walk(self.right[i]))
        return walk(0)

    def apply(self, X) -> np.ndarray:
        """Leaf index reached by every row of ``X``."""
        X = np.asarray(X, dtype=np.float64)
        feature = np.asarray(self.feature)
        threshold = np.asarray(self.threshold)
        left = np.asarray(self.left)
        right = np.asarray(self.right)
        node = np.zeros(len(X), dtype=np.int64)
        active = np.flatnonzero(feature[node] >= 0)
        while active.size:
            nd = node[active]
            go_left = X[active, feature[nd]] < threshold[nd]
            node[active] = np.where(go_left, left[nd], right[nd])
            active = active[feature[node[active]] >= 0]
        return node

    def predict(self, X) -> np.ndarray:
        return np.asarray(self.label, dtype=np.int8)[self.apply(X)]

    # --- serialization --------------------------------------------------

    def _node_dict(self, i: int) -> dict:
        if self.feature[i] < 0:
            return {"leaf": LABEL_NAMES[self.label[i]], "purity": self.purity[i],
                    "n": self.n_samples[i]}
        f = self.feature[i]
        return {"feature": f, "feature_name": FEATURE_NAMES[f], "threshold": self.threshold[i],
                "left": self._node_dict(self.left[i]), "right": self._node_dict(self.right[i])}

    def to_dict(self) -> dict:
        return {"max_depth": self.max_depth, "min_leaf": self.min_leaf, "root": self._node_dict(0)}

    @classmethod
    def from_dict(cls, d: dict) -> "ClassificationTree":
        tree = cls(d.get("max_depth", 8), d.get("min_leaf", 16))
        names = {v: k for k, v in LABEL_NAMES.items()}

        def build(node: dict) -> int:
            if "leaf" in node:
                return tree._add(label=names[node["leaf"]], purity=float(node["purity"]),
                                 n=int(node.get("n", 0)))
            i = tree._add(feature=int(node["feature"]), threshold=float(node["threshold"]))
            tree.left[i] = build(node["left"])
            tree.right[i] = build(node["right"])
            return i

        build(d["root"])
        return tree

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "ClassificationTree":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _leaf_label(y) -> tuple[int, float]:
    n_fg = int(np.count_nonzero(y == FOREGROUND))
    n = len(y)
    if 2 * n_fg > n:
        return FOREGROUND, n_fg / n
    return BACKGROUND, (n - n_fg) / n


def train_tree(data: LabeledPixelSet, max_depth: int = 8, min_leaf: int = 16) -> ClassificationTree:
    """Grow a CART tree greedily (no pruning)."""
    if min_leaf < 1:
        raise ValueError("min_leaf must be >= 1")
    if max_depth < 0:
        raise ValueError("max_depth must be >= 0")
    X, y = data.features, data.labels
    if len(y) < 2:
        raise ValueError("need at least two training samples")
    if np.unique(y).size < 2:
        raise ValueError("training data contains a single class")

    tree = ClassificationTree(max_depth, min_leaf)

    def grow(idx: np.ndarray, depth: int) -> int:
        ys = y[idx]
        label, purity = _leaf_label(ys)
        if depth >= max_depth or purity == 1.0 or len(idx) < 2 * min_leaf:
            return tree._add(label=label, purity=purity, n=len(idx))
        split = best_split(X[idx], ys, min_leaf)
        if split is None:
            return tree._add(label=label, purity=purity, n=len(idx))
        f, thr, _ = split
        node = tree._add(feature=f, threshold=thr, label=label, purity=purity, n=len(idx))
        go_left = X[idx, f] < thr
        tree.left[node] = grow(idx[go_left], depth + 1)
        tree.right[node] = grow(idx[~go_left], depth + 1)
        return node

    grow(np.arange(len(y)), 0)
    return tree


def segment(tree: ClassificationTree, image) -> np.ndarray:
    """Boolean foreground mask of ``image``."""
    img = np.asarray(image, dtype=np.uint8)
    # features depend on the color alone: classify each distinct color once
    code = (img[..., 0].astype(np.int32) << 16) | (img[..., 1].astype(np.int32) << 8) | img[..., 2]
    seen = np.zeros(1 << 24, dtype=bool)
    seen[code.ravel()] = True
    colors = np.flatnonzero(seen)
    rgb = np.stack([colors >> 16, (colors >> 8) & 255, colors & 255], axis=-1).astype(np.uint8)
    lut = np.zeros(1 << 24, dtype=bool)
    lut[colors] = tree.predict(feature_image(rgb[None])[0]).astype(bool)
    return lut[code]


def evaluate_tree(tree: ClassificationTree, heldout: LabeledPixelSet) -> float:
    """Fraction of held-out pixels classified correctly."""
    if len(heldout) == 0:
        raise ValueError("held-out set is empty")
    return float(np.mean(tree.predict(heldout.features) == heldout.labels))

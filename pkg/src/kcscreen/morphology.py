"""Binary morphology and connected-component labeling.

Border convention: pixels outside the canvas never contribute.  Dilation
pulls no foreground in from outside, and erosion only tests the part of the
structuring element that lies on the canvas.  With this pairing erosion and
dilation form an adjunction on the canvas, so opening/closing keep their
textbook properties (anti-extensive/extensive, idempotent) right up to the
image edge, and ``erode(X) == ~dilate(~X)`` holds everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage


def square_se(side: int = 5) -> np.ndarray:
    """Full square structuring element of odd ``side``."""
    if side < 1 or side % 2 == 0:
        raise ValueError("structuring element side must be odd and >= 1")
    return np.ones((side, side), dtype=bool)


def _check_se(se) -> np.ndarray:
    se = np.asarray(se, dtype=bool)
    if se.ndim != 2 or se.shape[0] != se.shape[1] or se.shape[0] % 2 == 0:
        raise ValueError("structuring element must be a square window of odd side")
    return se


def _offsets(se: np.ndarray):
    r = se.shape[0] // 2
    return [(dy - r, dx - r) for dy, dx in zip(*np.nonzero(se))]


def _shift_or(mask: np.ndarray, offsets) -> np.ndarray:
    """OR of ``mask`` translated by every offset, clipped to the canvas."""
    h, w = mask.shape
    out = np.zeros_like(mask)
    for dy, dx in offsets:
        ys, yd = (slice(0, h - dy), slice(dy, h)) if dy >= 0 else (slice(-dy, h), slice(0, h + dy))
        xs, xd = (slice(0, w - dx), slice(dx, w)) if dx >= 0 else (slice(-dx, w), slice(0, w + dx))
        out[yd, xd] |= mask[ys, xs]
    return out


def _run_max(mask: np.ndarray, radius: int, axis: int) -> np.ndarray:
    # 1-D dilation by a centered run of length 2*radius+1
    out = mask.copy()
    n = mask.shape[axis]
    for d in range(1, radius + 1):
        if d >= n:
            break
        lo = [slice(None)] * 2
        hi = [slice(None)] * 2
        lo[axis], hi[axis] = slice(0, n - d), slice(d, n)
        out[tuple(hi)] |= mask[tuple(lo)]
        out[tuple(lo)] |= mask[tuple(hi)]
    return out


def dilate(mask, se=None) -> np.ndarray:
    """Minkowski dilation of a boolean mask (default SE: 5x5 square)."""
    m = np.asarray(mask, dtype=bool)
    se = square_se() if se is None else _check_se(se)
    if se.all():
        r = se.shape[0] // 2
        return _run_max(_run_max(m, r, 0), r, 1)
    # p in dilate(X) iff p - b is in X for some b in B
    return _shift_or(m, _offsets(se))


def erode(mask, se=None) -> np.ndarray:
    """Erosion, the adjoint of :func:`dilate` (see module notes on borders)."""
    m = np.asarray(mask, dtype=bool)
    se = square_se() if se is None else _check_se(se)
    return ~dilate(~m, se[::-1, ::-1])


def opening(mask, se=None) -> np.ndarray:
    return dilate(erode(mask, se), se)


def closing(mask, se=None) -> np.ndarray:
    return erode(dilate(mask, se), se)


def open_close(mask, se=None) -> np.ndarray:
    """Opening followed by closing: drops specks, then fills pin-holes."""
    return closing(opening(mask, se), se)


@dataclass
class ComponentMap:
    """Labeled foreground; label 0 is background, components are 1..n.

    Per-component arrays are indexed by ``label - 1``.  Bounding boxes are
    inclusive ``(x0, y0, x1, y1)``.
    """

    labels: np.ndarray
    area: np.ndarray
    bbox: np.ndarray
    centroid: np.ndarray

    @property
    def count(self) -> int:
        return len(self.area)

    @property
    def fill_ratio(self) -> np.ndarray:
        w = self.bbox[:, 2] - self.bbox[:, 0] + 1
        h = self.bbox[:, 3] - self.bbox[:, 1] + 1
        return self.area / (w * h)

    def mask_of(self, label: int) -> np.ndarray:
        return self.labels == label


EIGHT = np.ones((3, 3), dtype=bool)
FOUR = ndimage.generate_binary_structure(2, 1)


def connected_components(mask, connectivity: int = 8) -> ComponentMap:
    """Label maximal 4- or 8-connected foreground components."""
    if connectivity not in (4, 8):
        raise ValueError("connectivity must be 4 or 8")
    m = np.asarray(mask, dtype=bool)
    labels, n = ndimage.label(m, structure=EIGHT if connectivity == 8 else FOUR)
    if n == 0:
        return ComponentMap(labels, np.zeros(0, dtype=np.int64),
                            np.zeros((0, 4), dtype=np.int64), np.zeros((0, 2)))
    ys, xs = np.nonzero(labels)
    lab = labels[ys, xs] - 1
    area = np.bincount(lab, minlength=n)
    cx = np.bincount(lab, weights=xs, minlength=n) / area
    cy = np.bincount(lab, weights=ys, minlength=n) / area
    bbox = np.array([[s[1].start, s[0].start, s[1].stop - 1, s[0].stop - 1]
                     for s in ndimage.find_objects(labels)], dtype=np.int64)
    return ComponentMap(labels, area, bbox, np.stack([cx, cy], axis=1))

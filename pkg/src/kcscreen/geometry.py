"""Center-disc detection, moment-based orientation and ROI cropping.

Angles follow image axes (x right, y down): a positive orientation is
counter-clockwise in those axes, which looks clockwise on screen.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .morphology import ComponentMap, connected_components


class NoCenterDisc(Exception):
    """No solid component that could be the center disc."""


class EmptyMask(ValueError):
    pass


@dataclass(frozen=True)
class OrientationEstimate:
    angle: float  # degrees in (-90, 90]
    mu20_minus_mu02: float
    mu11: float
    degenerate: bool


@dataclass
class RoiCrop:
    image: np.ndarray | None
    mask: np.ndarray
    bbox: tuple[int, int, int, int]  # inclusive (x0, y0, x1, y1) in source coords
    center_disc_centroid: tuple[float, float] | None = None  # crop coords

    @property
    def width(self) -> int:
        return self.bbox[2] - self.bbox[0] + 1

    @property
    def height(self) -> int:
        return self.bbox[3] - self.bbox[1] + 1


def foreground_bbox(mask) -> tuple[int, int, int, int]:
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        raise EmptyMask("mask has no foreground")
    return int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())


def find_center_disc(components: ComponentMap, min_fill: float = 0.7) -> tuple[int, tuple[float, float]]:
    """Label and centroid of the solid center disc.

    Candidates are components whose area fills at least ``min_fill`` of their
    bounding box (arcs fill far less).  Among them the one nearest the
    bottom-center of the overall foreground box wins.
    """
    if components.count == 0:
        raise NoCenterDisc("no foreground components")
    solid = np.flatnonzero(components.fill_ratio >= min_fill)
    if solid.size == 0:
        raise NoCenterDisc("no component passes the fill-ratio gate")
    x0 = components.bbox[:, 0].min()
    x1 = components.bbox[:, 2].max()
    y1 = components.bbox[:, 3].max()
    anchor = np.array([(x0 + x1) / 2.0, float(y1)])
    d = np.linalg.norm(components.centroid[solid] - anchor, axis=1)
    # ties: lowest label
    i = int(solid[np.argmin(d)])
    cx, cy = components.centroid[i]
    return i + 1, (float(cx), float(cy))


def central_moments(mask):
    """Area, centroid and second central moments of the foreground."""
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        raise EmptyMask("mask has no foreground")
    cx, cy = xs.mean(), ys.mean()
    dx = xs - cx
    dy = ys - cy
    return xs.size, (cx, cy), float(np.mean(dx * dx)), float(np.mean(dy * dy)), float(np.mean(dx * dy))


def estimate_orientation(mask) -> OrientationEstimate:
    """Long-axis angle from second central moments.

    ``angle = 0.5 * atan2(2 mu11, mu20 - mu02)`` in degrees.  Moments are
    normalized by area, so the degenerate test compares against
    ``1e-9 * area`` (equivalent to ``1e-9 * area**2`` on raw sums).
    """
    area, _, mu20, mu02, mu11 = central_moments(mask)
    diff = mu20 - mu02
    tol = 1e-9 * area
    if abs(diff) < tol and abs(mu11) < tol:
        return OrientationEstimate(0.0, diff, mu11, True)
    angle = 0.5 * np.degrees(np.arctan2(2.0 * mu11, diff))
    if angle <= -90.0:
        angle += 180.0
    return OrientationEstimate(float(angle), diff, mu11, False)


def _rotation(angle_deg: float) -> np.ndarray:
    t = np.radians(angle_deg)
    return np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])


@dataclass
class Rotation:
    """Affine map from source to rotated-canvas pixel coordinates."""

    matrix: np.ndarray  # 2x2, applied to (x, y)
    src_center: np.ndarray
    dst_center: np.ndarray
    shape: tuple[int, int]

    def forward(self, xy) -> np.ndarray:
        p = np.asarray(xy, dtype=np.float64) - self.src_center
        return p @ self.matrix.T + self.dst_center

    def inverse(self, xy) -> np.ndarray:
        p = np.asarray(xy, dtype=np.float64) - self.dst_center
        return p @ self.matrix + self.src_center


def plan_rotation(shape, angle_deg: float, pivot) -> Rotation:
    """Rotation by ``-angle_deg`` about ``pivot`` on an expanded canvas.

    The canvas grows so that every source pixel lands inside it.
    """
    h, w = shape
    m = _rotation(-angle_deg)
    pivot = np.asarray(pivot, dtype=np.float64)
    corners = np.array([[0, 0], [w - 1, 0], [0, h - 1], [w - 1, h - 1]], dtype=np.float64)
    rc = (corners - pivot) @ m.T
    lo = np.floor(rc.min(axis=0)) - 1
    hi = np.ceil(rc.max(axis=0)) + 1
    out_w = int(hi[0] - lo[0]) + 1
    out_h = int(hi[1] - lo[1]) + 1
    return Rotation(m, pivot, -lo, (out_h, out_w))


def _warp(arr, rot: Rotation, order: int, window=None) -> np.ndarray:
    """Resample ``arr`` onto the rotated canvas.

    ``window`` = ``(x0, y0, x1, y1)`` (inclusive, output coordinates) limits
    the work to a sub-rectangle; the rest of the canvas is zero.
    """
    out_h, out_w = rot.shape
    x0, y0, x1, y1 = window if window is not None else (0, 0, out_w - 1, out_h - 1)
    ys, xs = np.mgrid[y0:y1 + 1, x0:x1 + 1]
    src = rot.inverse(np.stack([xs.ravel(), ys.ravel()], axis=1))
    coords = [src[:, 1], src[:, 0]]
    out = np.zeros((out_h, out_w) + arr.shape[2:], dtype=arr.dtype)
    if arr.ndim == 2:
        res = ndimage.map_coordinates(arr, coords, order=order, mode="constant", cval=0, prefilter=False)
    else:
        res = np.stack([ndimage.map_coordinates(arr[..., c], coords, order=order, mode="constant",
                                                cval=0, prefilter=False)
                        for c in range(arr.shape[2])], axis=-1)
    out[y0:y1 + 1, x0:x1 + 1] = res.reshape(ys.shape + arr.shape[2:])
    return out


def _foreground_window(mask, rot: Rotation):
    """Output rectangle that holds every rotated foreground pixel (padded by one)."""
    if not mask.any():
        return None
    bx0, by0, bx1, by1 = foreground_bbox(mask)
    corners = np.array([[bx0, by0], [bx1, by0], [bx0, by1], [bx1, by1]], dtype=np.float64)
    pts = rot.forward(corners)
    out_h, out_w = rot.shape
    lo = np.maximum(np.floor(pts.min(axis=0)) - 1, 0).astype(int)
    hi = np.minimum(np.ceil(pts.max(axis=0)) + 1, [out_w - 1, out_h - 1]).astype(int)
    return int(lo[0]), int(lo[1]), int(hi[0]), int(hi[1])


def correct_orientation(image, mask, estimate: OrientationEstimate, pivot=None):
    """Rotate ``image`` and ``mask`` by ``-estimate.angle`` about the mask centroid.

    Bilinear for the image, nearest neighbour for the mask.  Returns
    ``(image, mask, rotation)``; ``rotation`` maps source points into the new
    canvas.  A zero or degenerate estimate returns the inputs unchanged.
    """
    mask = np.asarray(mask, dtype=bool)
    if estimate.degenerate or estimate.angle == 0.0:
        h, w = mask.shape
        ident = Rotation(np.eye(2), np.zeros(2), np.zeros(2), (h, w))
        return image, mask, ident
    if pivot is None:
        _, pivot, *_ = central_moments(mask)
    rot = plan_rotation(mask.shape, estimate.angle, pivot)
    new_mask = _warp(mask.astype(np.uint8), rot, 0, _foreground_window(mask, rot)).astype(bool)
    new_image = None
    if image is not None:
        warped = _warp(np.asarray(image, dtype=np.float32), rot, order=1)
        new_image = np.clip(np.rint(warped), 0, 255).astype(np.uint8)
    return new_image, new_mask, rot


def drop_specks(mask, min_fraction: float = 0.001) -> np.ndarray:
    """Remove components smaller than ``min_fraction`` of the largest one."""
    comps = connected_components(mask)
    if comps.count == 0:
        return np.asarray(mask, dtype=bool).copy()
    keep = comps.area >= min_fraction * comps.area.max()
    lut = np.concatenate([[False], keep])
    return lut[comps.labels]


def crop_roi(image, mask, margin: int = 2, center=None) -> RoiCrop:
    """Tight foreground box plus ``margin`` pixels, clipped to the canvas.

    ``center`` (source coordinates) is carried into crop coordinates.
    """
    m = np.asarray(mask, dtype=bool)
    x0, y0, x1, y1 = foreground_bbox(m)
    h, w = m.shape
    x0, y0 = max(0, x0 - margin), max(0, y0 - margin)
    x1, y1 = min(w - 1, x1 + margin), min(h - 1, y1 + margin)
    sub_img = None if image is None else np.asarray(image)[y0:y1 + 1, x0:x1 + 1]
    c = None if center is None else (float(center[0]) - x0, float(center[1]) - y0)
    return RoiCrop(sub_img, m[y0:y1 + 1, x0:x1 + 1], (x0, y0, x1, y1), c)

"""Stage 2: inter-disc distance matrix, per-cell logistic model, hotspot.

Rays leave the center-disc centroid at angles measured counter-clockwise
from +x with y pointing up (90 deg is straight up in the image).  Along each
ray the cleaned mask is sampled every half pixel; band edges are the
sub-pixel points where the interpolated mask crosses 0.5.  Consecutive band
midpoints give the inter-disc distances.
"""

from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .morphology import connected_components

CONTROL = "control"
KC = "kc"

DEFAULT_ANGLES = np.arange(45.0, 136.0, 1.0)


class OriginOutsideCanvas(ValueError):
    pass


class NoMeasurableGaps(Exception):
    pass


class SingleClassData(ValueError):
    pass


class NonConvergence(RuntimeError):
    pass


# --- ray casting -------------------------------------------------------------

@dataclass
class RayTransitions:
    """Band crossings along one ray, as ``(enter, exit)`` radii in pixels.

    ``starts_inside`` marks a first crossing that begins at the origin (the
    solid center disc); ``truncated`` marks a last crossing cut by the canvas
    edge.  Neither has a meaningful midpoint.
    """

    angle: float
    crossings: list[tuple[float, float]]
    starts_inside: bool = False
    truncated: bool = False

    def bands(self, min_width: float = 0.0) -> list[tuple[float, float]]:
        out = list(self.crossings)
        if self.truncated and out:
            out = out[:-1]
        if self.starts_inside and out and out[0][0] == 0.0:
            out = out[1:]
        return [c for c in out if c[1] - c[0] >= min_width]


def _edge_crossings(values: np.ndarray, step: float):
    """Sub-pixel radii where ``values`` crosses 0.5, with direction."""
    above = values >= 0.5
    idx = np.flatnonzero(above[1:] != above[:-1])
    v0 = values[idx]
    v1 = values[idx + 1]
    frac = (0.5 - v0) / (v1 - v0)
    radii = (idx + frac) * step
    rising = ~above[idx]
    return radii, rising


def cast_rays(mask, origin, angles=DEFAULT_ANGLES, step: float = 0.5) -> list[RayTransitions]:
    """Transitions of ``mask`` along rays from ``origin`` (x, y).

    ``mask`` is boolean or a [0, 1] field; edges are where the bilinearly
    sampled profile crosses 0.5.
    """
    m = np.asarray(mask, dtype=np.float32)
    h, w = m.shape
    ox, oy = float(origin[0]), float(origin[1])
    if not (0 <= ox <= w - 1 and 0 <= oy <= h - 1):
        raise OriginOutsideCanvas(f"origin {origin} outside {w}x{h} canvas")
    angles = np.asarray(angles, dtype=np.float64)
    rmax = float(np.hypot(w, h))
    t = np.arange(0.0, rmax + step, step)
    rad = np.radians(angles)
    xs = ox + np.cos(rad)[:, None] * t[None, :]
    ys = oy - np.sin(rad)[:, None] * t[None, :]
    inside = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)
    vals = ndimage.map_coordinates(m, [ys.ravel(), xs.ravel()], order=1, mode="nearest",
                                   prefilter=False).reshape(xs.shape)

    out = []
    for i, ang in enumerate(angles):
        n = int(np.argmin(inside[i])) if not inside[i].all() else len(t)
        v = vals[i, :n]
        radii, rising = _edge_crossings(v, step)
        crossings = []
        start = None
        starts_inside = bool(v[0] >= 0.5)
        if starts_inside:
            start = 0.0
        for r, up in zip(radii, rising):
            if up:
                start = float(r)
            elif start is not None:
                crossings.append((start, float(r)))
                start = None
        truncated = False
        if start is not None:
            crossings.append((start, float((n - 1) * step)))
            truncated = True
        out.append(RayTransitions(float(ang), crossings, starts_inside, truncated))
    return out


# --- distance matrix ----------------------------------------------------------

@dataclass
class DistanceMatrix:
    """``values[ray, gap]`` in pixels; NaN marks a missing cell."""

    angles: np.ndarray
    values: np.ndarray

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.values)

    @property
    def n_gaps(self) -> int:
        return self.values.shape[1]

    def present(self) -> np.ndarray:
        return self.values[~self.missing]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["angle"] + [f"gap_{j}" for j in range(self.n_gaps)])
        for ang, row in zip(self.angles, self.values):
            writer.writerow([f"{ang:g}"] + ["" if np.isnan(v) else f"{v:.6f}" for v in row])
        return buf.getvalue()

    def save_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "DistanceMatrix":
        rows = list(csv.reader(io.StringIO(text)))
        body = rows[1:]
        angles = np.array([float(r[0]) for r in body])
        values = np.array([[float(v) if v != "" else np.nan for v in r[1:]] for r in body])
        return cls(angles, values.reshape(len(body), len(rows[0]) - 1))

    @classmethod
    def load_csv(cls, path) -> "DistanceMatrix":
        return cls.from_csv(Path(path).read_text())


def build_distance_matrix(transitions: list[RayTransitions], n_gaps: int | None = None,
                          min_band: float = 2.0) -> DistanceMatrix:
    """Spacing of consecutive band midpoints along every ray.

    Midpoints are collinear with the origin, so the difference of their radii
    is their Euclidean distance.  Rays with fewer gaps than ``n_gaps`` (the
    longest ray by default) get NaN cells.
    """
    gaps = []
    for tr in transitions:
        mids = [(a + b) / 2.0 for a, b in tr.bands(min_band)]
        gaps.append(np.diff(mids) if len(mids) >= 2 else np.zeros(0))
    longest = max((len(g) for g in gaps), default=0)
    if longest == 0:
        raise NoMeasurableGaps("no ray crosses two complete bands")
    n = longest if n_gaps is None else n_gaps
    values = np.full((len(transitions), n), np.nan)
    for i, g in enumerate(gaps):
        g = g[:n]
        values[i, : len(g)] = g
    return DistanceMatrix(np.array([t.angle for t in transitions]), values)


# --- logistic model ------------------------------------------------------------

def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def log_likelihood(beta, x, y, l2: float = 0.0) -> float:
    """Mean Bernoulli log-likelihood minus ``l2/2 * beta1**2``."""
    b0, b1 = beta
    z = b0 + b1 * np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    # log(1 + e^z) computed stably
    ll = y * z - np.logaddexp(0.0, z)
    return float(ll.mean() - 0.5 * l2 * b1 * b1)


def gradient(beta, x, y, l2: float = 0.0) -> np.ndarray:
    b0, b1 = beta
    x = np.asarray(x, dtype=np.float64)
    r = np.asarray(y, dtype=np.float64) - sigmoid(b0 + b1 * x)
    return np.array([r.mean(), (r * x).mean() - l2 * b1])


def hessian(beta, x, l2: float = 0.0) -> np.ndarray:
    b0, b1 = beta
    x = np.asarray(x, dtype=np.float64)
    p = sigmoid(b0 + b1 * x)
    wts = p * (1 - p)
    return -np.array([[wts.mean(), (wts * x).mean()],
                      [(wts * x).mean(), (wts * x * x).mean() + l2]])


@dataclass
class LogisticModel:
    beta0: float
    beta1: float
    threshold: float = 0.5
    d_min: float | None = None
    d_max: float | None = None
    reference: np.ndarray | None = field(default=None, repr=False)  # control medians per cell
    n_iter: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.beta0) and np.isfinite(self.beta1)):
            raise ValueError("coefficients must be finite")

    @property
    def boundary(self) -> float:
        return -self.beta0 / self.beta1

    def proba(self, distance) -> np.ndarray:
        return sigmoid(self.beta0 + self.beta1 * np.asarray(distance, dtype=np.float64))

    def to_dict(self) -> dict:
        d = {"beta0": self.beta0, "beta1": self.beta1, "threshold": self.threshold,
             "d_min": self.d_min, "d_max": self.d_max}
        if self.reference is not None:
            ref = np.asarray(self.reference)
            d["reference"] = [[None if np.isnan(v) else round(float(v), 6) for v in row] for row in ref]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LogisticModel":
        ref = d.get("reference")
        if ref is not None:
            ref = np.array([[np.nan if v is None else v for v in row] for row in ref], dtype=np.float64)
        return cls(float(d["beta0"]), float(d["beta1"]), float(d.get("threshold", 0.5)),
                   d.get("d_min"), d.get("d_max"), ref)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "LogisticModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _as_binary(labels) -> np.ndarray:
    lab = np.asarray(labels)
    if lab.dtype.kind in "US" or lab.dtype == object:
        return (lab == KC).astype(np.float64)
    return lab.astype(np.float64)


def fit_logistic(distances, labels, l2: float = 1e-4, max_iter: int = 100,
                 tol: float = 1e-8) -> LogisticModel:
    """Maximum-likelihood fit of ``P(kc | d) = 1 / (1 + exp(-(b0 + b1 d)))``.

    Damped Newton ascent on the mean log-likelihood with an optional L2
    penalty on the slope; stops when the gradient norm drops below ``tol``.
    ``labels`` are 1/0 or ``"kc"``/``"control"``.
    """
    x = np.asarray(distances, dtype=np.float64).ravel()
    y = _as_binary(labels).ravel()
    if len(x) != len(y):
        raise ValueError("distances and labels differ in length")
    if y.min() == y.max():
        raise SingleClassData("logistic fit needs both classes")
    ybar = y.mean()
    beta = np.array([np.log(ybar / (1 - ybar)), 0.0])
    obj = log_likelihood(beta, x, y, l2)
    for it in range(1, max_iter + 1):
        g = gradient(beta, x, y, l2)
        if np.linalg.norm(g) < tol:
            return LogisticModel(float(beta[0]), float(beta[1]), n_iter=it - 1)
        H = hessian(beta, x, l2)
        try:
            step = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = g
        t = 1.0
        while t > 1e-10:
            cand = beta + t * step
            c_obj = log_likelihood(cand, x, y, l2)
            if c_obj >= obj:
                break
            t *= 0.5
        else:
            break
        beta, obj = cand, c_obj
    g = gradient(beta, x, y, l2)
    if np.linalg.norm(g) < tol:
        return LogisticModel(float(beta[0]), float(beta[1]), n_iter=max_iter)
    raise NonConvergence(f"gradient norm {np.linalg.norm(g):.3g} after {max_iter} iterations")


def predict_cell(model: LogisticModel, distance):
    """``(probability, label)``; a cell is kc when ``P >= threshold``."""
    p = model.proba(distance)
    if np.ndim(p) == 0:
        p = float(p)
        return p, KC if p >= model.threshold else CONTROL
    return p, np.where(p >= model.threshold, KC, CONTROL)


# --- hotspot -----------------------------------------------------------------

@dataclass
class Hotspot:
    angle_range: tuple[float, float] | None
    gap_indices: list[int]
    severity: float
    center_angle: float | None = None
    n_cells: int = 0

    @property
    def empty(self) -> bool:
        return self.n_cells == 0

    def to_dict(self) -> dict:
        return {"angle_range": list(self.angle_range) if self.angle_range else None,
                "gap_indices": self.gap_indices, "severity": self.severity,
                "center_angle": self.center_angle, "n_cells": self.n_cells}


def _profile_center(angles, profile, sigma: float = 2.0) -> float:
    """Peak of a smoothed 1-D profile, refined by a parabola through its neighbours.

    A peak close to the end of the sampled range keeps its position; centroid
    estimates would drift toward the middle there.
    """
    angles = np.asarray(angles, dtype=np.float64)
    if len(profile) == 1:
        return float(angles[0])
    sm = ndimage.gaussian_filter1d(np.asarray(profile, dtype=np.float64), sigma, mode="nearest")
    i = int(np.argmax(sm))
    if 0 < i < len(sm) - 1:
        a, b, c = sm[i - 1:i + 2]
        den = a - 2.0 * b + c
        off = 0.5 * (a - c) / den if den < 0 else 0.0
        nb = i + 1 if off > 0 else i - 1
        return float(angles[i] + abs(off) * (angles[nb] - angles[i]))
    return float(angles[i])


def locate_hotspot(matrix: DistanceMatrix, model: LogisticModel) -> Hotspot:
    """Largest 8-connected region of kc cells in (ray, gap) space.

    ``center_angle`` is the peak of the mean per-ray elevation over the
    region's rays: distance relative to the model's control reference when it
    has one, raw distance otherwise.
    """
    vals = matrix.values
    present = ~np.isnan(vals)
    p = np.where(present, model.proba(np.where(present, vals, 0.0)), 0.0)
    kc = present & (p >= model.threshold)
    if not kc.any():
        return Hotspot(None, [], 0.0)
    comps = connected_components(kc, connectivity=8)
    sizes = comps.area
    best = int(np.argmax(sizes)) + 1
    region = comps.labels == best
    rows, cols = np.nonzero(region)
    angles = matrix.angles

    ref = model.reference
    if ref is not None and np.shape(ref) == vals.shape:
        elev = vals / ref
    else:
        elev = vals
    rws = np.arange(rows.min(), rows.max() + 1)
    with np.errstate(all="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        profile = np.nanmean(elev[rws], axis=1)
    ok = ~np.isnan(profile)
    center = _profile_center(angles[rws][ok], profile[ok]) if ok.any() else float(angles[rows].mean())
    return Hotspot(
        angle_range=(float(angles[rows.min()]), float(angles[rows.max()])),
        gap_indices=sorted(int(c) for c in np.unique(cols)),
        severity=float(p[region].mean()),
        center_angle=center,
        n_cells=int(region.sum()),
    )


# --- color map -------------------------------------------------------------------

# blue -> cyan -> green -> yellow -> orange -> red
_CMAP_STOPS = np.array([0.0, 0.2, 0.4, 0.6, 0.8, 1.0])
_CMAP_RGB = np.array([
    [30, 60, 200],
    [0, 170, 220],
    [40, 180, 80],
    [240, 220, 40],
    [245, 140, 20],
    [210, 30, 30],
], dtype=np.float64)
MISSING_RGB = np.array([128, 128, 128], dtype=np.uint8)


def colormap(u) -> np.ndarray:
    """Map values in [0, 1] to cool-to-warm uint8 RGB."""
    u = np.clip(np.asarray(u, dtype=np.float64), 0.0, 1.0)
    rgb = np.stack([np.interp(u, _CMAP_STOPS, _CMAP_RGB[:, c]) for c in range(3)], axis=-1)
    return np.rint(rgb).astype(np.uint8)


def colormap_coordinate(matrix: DistanceMatrix, d_min: float, d_max: float) -> np.ndarray:
    """Position of every cell on the color scale (NaN for missing cells)."""
    span = max(d_max - d_min, 1e-12)
    return np.clip((matrix.values - d_min) / span, 0.0, 1.0)


def render_colormap(matrix: DistanceMatrix, out_size: int = 512, d_min: float | None = None,
                    d_max: float | None = None) -> np.ndarray:
    """Polar wedge over the ray angles, one annular sector per cell.

    Rays run left to right as angle decreases (so 135 deg is on the left,
    as in the image).  Without an explicit window the matrix's own range is
    used.
    """
    if matrix.values.size == 0:
        raise ValueError("empty distance matrix")
    vals = matrix.values
    if d_min is None or d_max is None:
        finite = vals[~np.isnan(vals)]
        d_min = float(finite.min()) if d_min is None and finite.size else (d_min or 0.0)
        d_max = float(finite.max()) if d_max is None and finite.size else (d_max or 1.0)
    size = int(out_size)
    h = size // 2 + 8
    img = np.full((h, size, 3), 255, dtype=np.uint8)
    cx, cy = (size - 1) / 2.0, h - 4.0
    r_in, r_out = 0.12 * size, 0.48 * size
    ys, xs = np.mgrid[0:h, 0:size]
    dx = xs - cx
    dy = cy - ys
    r = np.hypot(dx, dy)
    theta = np.degrees(np.arctan2(dy, dx))
    angles = matrix.angles
    a_lo, a_hi = angles.min(), angles.max()
    step = (a_hi - a_lo) / max(len(angles) - 1, 1) if len(angles) > 1 else 1.0
    inside = (r >= r_in) & (r < r_out) & (theta >= a_lo - step / 2) & (theta <= a_hi + step / 2)
    ray = np.clip(np.rint((theta - a_lo) / step).astype(int), 0, len(angles) - 1)
    gap = np.clip(((r - r_in) / (r_out - r_in) * matrix.n_gaps).astype(int), 0, matrix.n_gaps - 1)
    cell = vals[ray, gap]
    u = colormap_coordinate(DistanceMatrix(angles, cell), d_min, d_max)
    colors = colormap(np.nan_to_num(u))
    colors[np.isnan(cell)] = MISSING_RGB
    img[inside] = colors[inside]
    return img

"""Synthetic Placido-reflection photographs with known ground truth.

A scene is a set of concentric bright bands (ring 1 is a solid disc) on a
dark brown textured background.  The band spacing is inflated around a
protrusion direction, which is exactly the effect the localization stage
looks for.  Rendering is a pure function of :class:`SceneSpec`.

Coordinate conventions
----------------------
* Image coordinates: ``x`` = column, ``y`` = row (downwards).
* Angles of the pattern (protrusion angle, ray angles) are measured
  counter-clockwise from the +x axis with y pointing *up*, so 90 deg points
  to the top of the image.
* ``tilt`` rotates the whole pattern in image coordinates; a positive tilt
  is counter-clockwise in (x right, y down) axes, i.e. visually clockwise.
  :func:`kcscreen.geometry.estimate_orientation` reports the same sign.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .raster import write_pbm, write_ppm

CONTROL = "control"
KC = "kc"

RAY_ANGLES = np.arange(45.0, 136.0, 1.0)

# radial spread of the focal bump, as a fraction of the outer ring radius
RADIAL_SPREAD = 0.3

FOREGROUND_RGB = np.array([226.0, 234.0, 252.0])
BACKGROUND_RGB = np.array([96.0, 62.0, 40.0])


@dataclass(frozen=True)
class SceneSpec:
    """Everything needed to render one scene deterministically.

    ``protrusion_amplitude`` (a) scales the fractional increase of the ring
    spacing; the increase is a mix of a broad component (``diffuse_fraction``)
    and a focal Gaussian bump of angular width ``protrusion_width`` weighted
    by radial proximity to ``protrusion_radial_center``.
    """

    image_size: int = 1024
    ring_count: int = 8
    center: tuple[float, float] | None = None
    base_gap: float = 45.0
    ring_thickness: float = 14.0
    protrusion_amplitude: float = 0.0
    protrusion_angle: float = 90.0
    protrusion_width: float = 20.0
    protrusion_radial_center: float = 0.6
    squash_y: float = 0.85
    tilt: float = 0.0
    noise_sigma: float = 6.0
    illumination_gradient: float = 0.15
    rng_seed: int = 0
    diffuse_fraction: float = 0.6
    diffuse_spread: float = 3.0

    @property
    def label(self) -> str:
        return KC if self.protrusion_amplitude > 0 else CONTROL

    @property
    def center_xy(self) -> tuple[float, float]:
        if self.center is None:
            c = (self.image_size - 1) / 2.0
            return (c, c)
        return (float(self.center[0]), float(self.center[1]))

    def validate(self) -> None:
        if self.image_size < 8:
            raise ValueError("image_size must be >= 8")
        if self.ring_count < 2:
            raise ValueError("ring_count must be >= 2")
        if self.base_gap <= 0 or self.ring_thickness <= 0:
            raise ValueError("base_gap and ring_thickness must be positive")
        if self.ring_thickness >= self.base_gap:
            raise ValueError("ring_thickness must be smaller than base_gap")
        if self.protrusion_amplitude < 0:
            raise ValueError("protrusion_amplitude must be >= 0")
        if not 45.0 <= self.protrusion_angle <= 135.0:
            raise ValueError("protrusion_angle must lie in [45, 135]")
        if self.protrusion_width <= 0:
            raise ValueError("protrusion_width must be positive")
        if not 0.0 < self.protrusion_radial_center <= 1.0:
            raise ValueError("protrusion_radial_center must lie in (0, 1]")
        if not 0.0 < self.squash_y <= 1.0:
            raise ValueError("squash_y must lie in (0, 1]")
        if not -20.0 <= self.tilt <= 20.0:
            raise ValueError("tilt must lie in [-20, 20]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not 0.0 <= self.illumination_gradient <= 0.5:
            raise ValueError("illumination_gradient must lie in [0, 0.5]")
        if not 0.0 <= self.diffuse_fraction < 1.0:
            raise ValueError("diffuse_fraction must lie in [0, 1)")
        corners = pattern_outline(self)
        lo, hi = corners.min(axis=0), corners.max(axis=0)
        if lo.min() < 0 or hi.max() > self.image_size - 1:
            raise ValueError("outermost ring exceeds the image bounds")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["center"] = list(self.center) if self.center is not None else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        if d.get("center") is not None:
            d["center"] = tuple(d["center"])
        return cls(**d)


def _wrap(deg):
    return (np.asarray(deg, dtype=np.float64) + 180.0) % 360.0 - 180.0


def radial_weight(spec: SceneSpec, k) -> np.ndarray:
    """Weight of the gap between ring ``k`` and ``k + 1`` (1-based)."""
    rho = (np.asarray(k, dtype=np.float64) + 0.5) / spec.ring_count
    return np.exp(-((rho - spec.protrusion_radial_center) ** 2) / (2 * RADIAL_SPREAD**2))


def distortion(spec: SceneSpec, theta, k) -> np.ndarray:
    """Dimensionless spacing profile g(theta, k) in [0, 1]."""
    d = _wrap(np.asarray(theta) - spec.protrusion_angle)
    w = spec.protrusion_width
    focal = np.exp(-(d**2) / (2 * w**2)) * radial_weight(spec, k)
    diffuse = np.exp(-(d**2) / (2 * (spec.diffuse_spread * w) ** 2))
    b = spec.diffuse_fraction
    return b * diffuse + (1 - b) * focal


def ring_radii(spec: SceneSpec, theta) -> np.ndarray:
    """Pattern-frame mid radii of rings 1..K at angle(s) ``theta``.

    Returns an array of shape ``(K,) + shape(theta)``.  Ring 1 (the solid
    disc) has radius ``base_gap``; each following gap is
    ``base_gap * (1 + a * g(theta, k))``.
    """
    theta = np.asarray(theta, dtype=np.float64)
    radii = np.empty((spec.ring_count,) + theta.shape)
    radii[0] = spec.base_gap
    a = spec.protrusion_amplitude
    if a == 0:
        for k in range(1, spec.ring_count):
            radii[k] = radii[k - 1] + spec.base_gap
        return radii
    # same as distortion(), with the angular factors computed once
    d = _wrap(theta - spec.protrusion_angle)
    w = spec.protrusion_width
    b = spec.diffuse_fraction
    focal = (1 - b) * np.exp(-(d**2) / (2 * w**2))
    diffuse = b * np.exp(-(d**2) / (2 * (spec.diffuse_spread * w) ** 2))
    for k in range(1, spec.ring_count):
        g = diffuse + focal * float(radial_weight(spec, k))
        radii[k] = radii[k - 1] + spec.base_gap * (1.0 + a * g)
    return radii


def _squash_factor(spec: SceneSpec, theta) -> np.ndarray:
    """Pattern radius per unit of measured radius along direction ``theta``."""
    t = np.radians(theta)
    return np.sqrt(np.cos(t) ** 2 + (np.sin(t) / spec.squash_y) ** 2)


def pattern_outline(spec: SceneSpec, n: int = 720) -> np.ndarray:
    """Image coordinates of the outer edge of the outermost ring."""
    theta = np.linspace(0.0, 360.0, n, endpoint=False)
    r = ring_radii(spec, theta)[-1] + spec.ring_thickness / 2.0
    t = np.radians(theta)
    # pattern radius r along squashed direction theta lies at measured radius r / q
    rm = r / _squash_factor(spec, theta)
    x = rm * np.cos(t)
    y = -rm * np.sin(t)
    return _to_image(spec, x, y)


def _to_image(spec: SceneSpec, x, y) -> np.ndarray:
    tau = np.radians(spec.tilt)
    cx, cy = spec.center_xy
    xi = x * np.cos(tau) - y * np.sin(tau) + cx
    yi = x * np.sin(tau) + y * np.cos(tau) + cy
    return np.stack([xi, yi], axis=-1)


def _pattern_coords(spec: SceneSpec, shape):
    """Per-pixel (pattern radius, measured angle) for an image of ``shape``."""
    h, w = shape
    cx, cy = spec.center_xy
    ys, xs = np.mgrid[0:h, 0:w]
    dx = xs - cx
    dy = ys - cy
    tau = np.radians(spec.tilt)
    # undo tilt (image-coordinate rotation)
    x = dx * np.cos(tau) + dy * np.sin(tau)
    y_img = -dx * np.sin(tau) + dy * np.cos(tau)
    ym = -y_img
    theta = np.degrees(np.arctan2(ym, x))
    rho = np.hypot(x, ym / spec.squash_y)
    return rho, theta


def noiseless_mask(spec: SceneSpec) -> np.ndarray:
    """Exact foreground (disc + ring bands) sampled at pixel centers."""
    n = spec.image_size
    rho, theta = _pattern_coords(spec, (n, n))
    radii = ring_radii(spec, theta)
    half = spec.ring_thickness / 2.0
    mask = rho <= radii[0] + half
    for k in range(1, spec.ring_count):
        mask |= np.abs(rho - radii[k]) <= half
    return mask


def _interp_matrix(n: int, cells: int) -> np.ndarray:
    pos = np.linspace(0.0, cells, n)
    lo = np.minimum(np.floor(pos).astype(int), cells - 1)
    frac = pos - lo
    m = np.zeros((n, cells + 1))
    m[np.arange(n), lo] = 1.0 - frac
    m[np.arange(n), lo + 1] = frac
    return m


def _smooth_field(rng, shape, cells: int) -> np.ndarray:
    """Smooth random field in [-1, 1]: bilinear upsampling of a coarse grid."""
    coarse = rng.uniform(-1.0, 1.0, size=(cells + 1, cells + 1))
    return _interp_matrix(shape[0], cells) @ coarse @ _interp_matrix(shape[1], cells).T


@dataclass(frozen=True)
class GroundTruth:
    label: str
    protrusion_angle: float
    protrusion_radial_center: float
    true_center: tuple[float, float]
    true_tilt: float
    scene: SceneSpec = field(repr=False)

    def pattern_gap(self, angle, gap_index) -> np.ndarray:
        """Noiseless pattern-frame spacing, before the vertical squash."""
        k = np.asarray(gap_index) + 2
        s = self.scene
        a = s.protrusion_amplitude
        return s.base_gap * (1.0 + a * distortion(s, angle, k))

    def gap_field(self, angle, gap_index) -> np.ndarray:
        """Noiseless spacing measured along a ray at ``angle`` (degrees).

        ``gap_index`` 0 is the spacing between ring 2 and ring 3; the disc is
        not a band and has no mid-radius of its own.  Values are in pixels of
        the tilt-corrected frame, so they include the vertical squash.
        """
        return self.pattern_gap(angle, gap_index) / _squash_factor(self.scene, angle)

    @property
    def n_gaps(self) -> int:
        return self.scene.ring_count - 2

    def gap_samples(self, angles=RAY_ANGLES) -> np.ndarray:
        """``(len(angles), n_gaps)`` grid of :meth:`gap_field`."""
        angles = np.asarray(angles, dtype=np.float64)
        idx = np.arange(self.n_gaps)
        return self.gap_field(angles[:, None], idx[None, :])

    def affected_gaps(self, min_weight: float = 0.5) -> list[int]:
        if self.label != KC:
            return []
        idx = np.arange(self.n_gaps)
        return [int(i) for i in idx[radial_weight(self.scene, idx + 2) >= min_weight]]

    def extents(self) -> tuple[float, float]:
        """(width, height) of the tilt-corrected pattern's bounding box."""
        untilted = dataclasses.replace(self.scene, tilt=0.0, center=(0.0, 0.0))
        pts = pattern_outline(untilted, n=3600)
        span = pts.max(axis=0) - pts.min(axis=0)
        return float(span[0]), float(span[1])

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "protrusion_angle": self.protrusion_angle,
            "protrusion_radial_center": self.protrusion_radial_center,
            "true_center": list(self.true_center),
            "true_tilt": self.true_tilt,
            "scene": self.scene.to_dict(),
            "gap_field": {
                "angles": RAY_ANGLES.tolist(),
                "values": np.round(self.gap_samples(), 6).tolist(),
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruth":
        return cls(
            label=d["label"],
            protrusion_angle=float(d["protrusion_angle"]),
            protrusion_radial_center=float(d["protrusion_radial_center"]),
            true_center=tuple(d["true_center"]),
            true_tilt=float(d["true_tilt"]),
            scene=SceneSpec.from_dict(d["scene"]),
        )


def truth_for(spec: SceneSpec) -> GroundTruth:
    return GroundTruth(
        label=spec.label,
        protrusion_angle=float(spec.protrusion_angle),
        protrusion_radial_center=float(spec.protrusion_radial_center),
        true_center=spec.center_xy,
        true_tilt=float(spec.tilt),
        scene=spec,
    )


def render_scene(spec: SceneSpec) -> tuple[np.ndarray, GroundTruth]:
    """Render one photograph and its ground truth."""
    image, truth, _ = render_scene_with_mask(spec)
    return image, truth


def render_scene_with_mask(spec: SceneSpec) -> tuple[np.ndarray, GroundTruth, np.ndarray]:
    """:func:`render_scene` plus the :func:`noiseless_mask` it was drawn from."""
    spec.validate()
    rng = np.random.default_rng(spec.rng_seed)
    n = spec.image_size
    mask = noiseless_mask(spec)

    texture = 1.0 + 0.22 * _smooth_field(rng, (n, n), 12) + 0.08 * _smooth_field(rng, (n, n), 48)
    sheen = 1.0 - 0.08 * (0.5 + 0.5 * _smooth_field(rng, (n, n), 6))
    img = np.where(
        mask[..., None],
        FOREGROUND_RGB * sheen[..., None],
        BACKGROUND_RGB * texture[..., None],
    )

    if spec.illumination_gradient > 0:
        direction = rng.uniform(0.0, 2 * np.pi)
        ys, xs = np.mgrid[0:n, 0:n] / max(n - 1, 1)
        u = (np.cos(direction) * (xs - 0.5) + np.sin(direction) * (ys - 0.5)) / np.sqrt(0.5) + 0.5
        img = img * (1.0 - spec.illumination_gradient * np.clip(u, 0.0, 1.0))[..., None]
    else:
        rng.uniform(0.0, 2 * np.pi)  # keep the stream aligned

    if spec.noise_sigma > 0:
        img = img + rng.normal(0.0, spec.noise_sigma, size=img.shape)

    out = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return out, truth_for(spec), mask


def corpus_specs(n_control: int, n_kc: int, base_spec: SceneSpec | None = None,
                 rng_seed: int = 1) -> list[tuple[str, SceneSpec]]:
    """Scene ids and specs of a corpus; nothing is rendered."""
    if n_control < 1 or n_kc < 1:
        raise ValueError("need at least one control and one kc scene")
    base = base_spec or SceneSpec()
    rng = np.random.default_rng(rng_seed)
    scenes = []
    for label, count in ((CONTROL, n_control), (KC, n_kc)):
        for i in range(count):
            jitter = dict(
                tilt=float(rng.uniform(-20.0, 20.0)),
                noise_sigma=float(rng.uniform(2.0, 10.0)),
                illumination_gradient=float(rng.uniform(0.0, 0.3)),
                center=tuple(float(c) for c in np.array(base.center_xy) + rng.uniform(-20.0, 20.0, 2)),
                rng_seed=int(rng.integers(0, 2**63 - 1)),
            )
            if label == KC:
                jitter["protrusion_amplitude"] = float(rng.uniform(0.25, 0.6))
                jitter["protrusion_angle"] = float(rng.uniform(45.0, 135.0))
            else:
                jitter["protrusion_amplitude"] = 0.0
                rng.uniform(0.25, 0.6)
                rng.uniform(45.0, 135.0)
            scenes.append((f"{label}_{i:03d}", dataclasses.replace(base, **jitter)))
    return scenes


def make_corpus(n_control: int, n_kc: int, base_spec: SceneSpec | None = None,
                rng_seed: int = 1) -> list[tuple[np.ndarray, GroundTruth]]:
    """Render ``n_control`` undistorted and ``n_kc`` protruded scenes."""
    return [render_scene(spec) for _, spec in corpus_specs(n_control, n_kc, base_spec, rng_seed)]


def export_corpus(out_dir, scenes: list[tuple[str, SceneSpec]]) -> Path:
    """Write ``<id>/image.ppm``, ``<id>/mask.pbm`` and ``<id>/truth.json`` per scene and a manifest.

    Returns the manifest path.  The manifest lists scene ids, labels and the
    SHA-256 of every written image.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for scene_id, spec in scenes:
        image, truth, mask = render_scene_with_mask(spec)
        sdir = out / scene_id
        sdir.mkdir(exist_ok=True)
        write_ppm(sdir / "image.ppm", image)
        write_pbm(sdir / "mask.pbm", mask)
        (sdir / "truth.json").write_text(json.dumps(truth.to_dict(), indent=1, sort_keys=True))
        entries.append({
            "id": scene_id,
            "label": truth.label,
            "image": f"{scene_id}/image.ppm",
            "truth": f"{scene_id}/truth.json",
            "sha256": hashlib.sha256(image.tobytes()).hexdigest(),
        })
    manifest = out / "manifest.json"
    manifest.write_text(json.dumps({"scenes": entries}, indent=1, sort_keys=True))
    return manifest


def load_truth(path) -> GroundTruth:
    return GroundTruth.from_dict(json.loads(Path(path).read_text()))

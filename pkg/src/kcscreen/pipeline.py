"""End-to-end preprocessing, training and diagnosis on in-memory scenes.

The CLI is a thin layer over the functions here; tests and demos call them
directly.
"""

from __future__ import annotations

import dataclasses
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import repeat
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from . import classify, localize, stats
from .config import PipelineConfig
from .geometry import (OrientationEstimate, RoiCrop, Rotation, correct_orientation, crop_roi,
                       drop_specks, estimate_orientation, find_center_disc)
from .morphology import connected_components, open_close, square_se
from .segmenter import (ClassificationTree, LabeledPixelSet, evaluate_tree, sample_pixels, segment,
                        train_tree)

CONTROL = "control"
KC = "kc"


class PreprocessingFailed(Exception):
    def __init__(self, failures: dict[str, str]):
        self.failures = failures
        lines = "; ".join(f"{k}: {v}" for k, v in failures.items())
        super().__init__(f"preprocessing failed for {len(failures)} scene(s): {lines}")


class DegenerateData(ValueError):
    pass


@dataclass
class Scene:
    """One labeled photograph; ``truth_mask`` is only needed for segmenter training."""

    scene_id: str
    label: str
    image: np.ndarray | Callable[[], np.ndarray]
    truth_mask: np.ndarray | Callable[[], np.ndarray] | None = None
    truth: object = None

    def load_image(self) -> np.ndarray:
        return self.image() if callable(self.image) else self.image

    def load_mask(self) -> np.ndarray:
        if self.truth_mask is None:
            raise ValueError(f"scene {self.scene_id} has no ground-truth mask")
        return self.truth_mask() if callable(self.truth_mask) else self.truth_mask


@dataclass
class Preprocessed:
    mask: np.ndarray                 # cleaned, speck-filtered mask, source frame
    orientation: OrientationEstimate
    rotation: Rotation               # source frame -> levelled canvas
    crop: RoiCrop                    # levelled, cropped mask
    disc_centroid: tuple[float, float]  # source frame


@dataclass
class Models:
    tree: ClassificationTree
    kmeans: classify.KMeansModel
    logistic: localize.LogisticModel


def preprocess(image, tree: ClassificationTree, config: PipelineConfig = PipelineConfig()) -> Preprocessed:
    """Segment, clean, find the disc, level the pattern and crop it."""
    mask = segment(tree, image)
    clean = open_close(mask, square_se(config.se_size))
    comps = connected_components(clean)
    label, centroid = find_center_disc(comps, config.fill_ratio_min)
    # the solid disc's own axis sets the orientation; arcs distort under protrusion
    est = estimate_orientation(comps.labels == label)
    kept = drop_specks(clean, config.speck_fraction)
    _, rot_mask, rot = correct_orientation(None, kept, est)
    center = rot.forward(np.array(centroid))
    crop = crop_roi(None, rot_mask, config.crop_margin, center=center)
    return Preprocessed(kept, est, rot, crop, centroid)


def levelled_to_source_angles(rot: Rotation, angles) -> np.ndarray:
    """Ray angles of the levelled frame expressed in the source frame (degrees, y up)."""
    rad = np.radians(np.asarray(angles, dtype=np.float64))
    d = np.stack([np.cos(rad), -np.sin(rad)], axis=1) @ rot.matrix
    return np.degrees(np.arctan2(-d[:, 1], d[:, 0]))


def distance_matrix(pre: Preprocessed, config: PipelineConfig = PipelineConfig()) -> localize.DistanceMatrix:
    """Distance matrix in the levelled frame.

    Rays are cast on the source-frame mask along directions rotated into that
    frame; rotation preserves distances and this avoids resampling the mask.
    A light Gaussian blur (``config.edge_sigma``) turns the pixel staircase of
    the binary edges into a ramp whose 0.5 level is a sub-pixel edge estimate.
    """
    angles = config.angles
    src = levelled_to_source_angles(pre.rotation, angles)
    field = pre.mask.astype(np.float32)
    if config.edge_sigma > 0:
        field = ndimage.gaussian_filter(field, config.edge_sigma)
    rays = localize.cast_rays(field, pre.disc_centroid, src, config.ray_step)
    rays = [dataclasses.replace(r, angle=float(a)) for r, a in zip(rays, angles)]
    return localize.build_distance_matrix(rays, n_gaps=config.n_gaps, min_band=config.min_band)


# --- training -----------------------------------------------------------------

def split_heldout(scenes: Sequence[Scene], fraction: float, rng) -> tuple[list[Scene], list[Scene]]:
    """Per-group random split; each group keeps at least one training scene."""
    rng = np.random.default_rng(rng)
    train, held = [], []
    for label in (CONTROL, KC):
        group = [s for s in scenes if s.label == label]
        n_held = min(len(group) - 1, int(round(fraction * len(group))))
        order = rng.permutation(len(group))
        held += [group[i] for i in order[:n_held]]
        train += [group[i] for i in order[n_held:]]
    return train, held


def train_segmenter(scenes: Sequence[Scene], config: PipelineConfig = PipelineConfig(), rng=None):
    """Fit the pixel tree on a class-stratified sample of the training scenes.

    Returns ``(tree, per-group held-out pixel accuracy, held-out ids)``.
    """
    rng = np.random.default_rng(config.seed if rng is None else rng)
    train, held = split_heldout(scenes, config.heldout_fraction, rng)
    sample = LabeledPixelSet.concat(
        sample_pixels(s.load_image(), s.load_mask(), config.pixels_per_scene, rng, s.scene_id)
        for s in train
    )
    if np.unique(sample.labels).size < 2:
        raise DegenerateData("segmenter training pixels contain a single class")
    tree = train_tree(sample, config.max_depth, config.min_leaf)
    accuracy = {}
    for label in (CONTROL, KC):
        group = [s for s in held if s.label == label]
        if not group:
            continue
        test = LabeledPixelSet.concat(
            sample_pixels(s.load_image(), s.load_mask(), config.pixels_per_scene, rng, s.scene_id)
            for s in group
        )
        accuracy[label] = evaluate_tree(tree, test)
    return tree, accuracy, [s.scene_id for s in held]


@dataclass
class SceneResult:
    scene_id: str
    label: str
    dims: classify.DimFeatures
    matrix: localize.DistanceMatrix | None
    pre: Preprocessed | None = field(default=None, repr=False)


def _measure_one(scene: Scene, tree, config, with_matrix, keep_pre):
    try:
        pre = preprocess(scene.load_image(), tree, config)
        dims = classify.extract_dims(pre.crop, scene.scene_id)
        matrix = distance_matrix(pre, config) if with_matrix else None
    except Exception as exc:  # noqa: BLE001 - reported per scene
        return f"{type(exc).__name__}: {exc}"
    return SceneResult(scene.scene_id, scene.label, dims, matrix, pre if keep_pre else None)


def measure_scenes(scenes: Sequence[Scene], tree: ClassificationTree,
                   config: PipelineConfig = PipelineConfig(), with_matrix: bool = True,
                   keep_pre: bool = False) -> list[SceneResult]:
    """Preprocess every scene; raise :class:`PreprocessingFailed` listing all failures.

    With ``config.workers > 1`` scenes are spread over a process pool; scene
    loaders must then be picklable.  Results keep the input order.
    """
    args = (tree, config, with_matrix, keep_pre)
    if config.workers > 1 and len(scenes) > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            outs = list(pool.map(_measure_one, scenes, *(repeat(a) for a in args)))
    else:
        outs = [_measure_one(s, *args) for s in scenes]
    failures = {s.scene_id: o for s, o in zip(scenes, outs) if isinstance(o, str)}
    if failures:
        raise PreprocessingFailed(failures)
    return outs


def fit_stage1(results: Sequence[SceneResult], config: PipelineConfig = PipelineConfig()):
    """k-means on (width, height); returns the model and resubstitution accuracy."""
    pts = np.array([r.dims.as_array() for r in results])
    model = classify.fit_kmeans(pts, 2, max_iter=config.kmeans_max_iter, tol=config.kmeans_tol,
                                rng=config.seed, n_init=config.kmeans_n_init)
    pred = [classify.classify_cornea(model, r.dims)[0] for r in results]
    acc = float(np.mean([p == r.label for p, r in zip(pred, results)]))
    return model, acc, pred


def cell_table(results: Sequence[SceneResult]):
    """Present cells as ``(distance, label, scene index, ray, gap)`` columns."""
    d, lab, sid, ray, gap = [], [], [], [], []
    for i, r in enumerate(results):
        vals = r.matrix.values
        rows, cols = np.nonzero(~np.isnan(vals))
        d.append(vals[rows, cols])
        lab.append(np.full(rows.size, r.label == KC, dtype=np.int8))
        sid.append(np.full(rows.size, i))
        ray.append(rows)
        gap.append(cols)
    return tuple(np.concatenate(c) for c in (d, lab, sid, ray, gap))


def control_reference(results: Sequence[SceneResult]) -> np.ndarray:
    """Per-cell median distance over the control scenes."""
    stack = np.stack([r.matrix.values for r in results if r.label == CONTROL])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN cells stay NaN
        return np.nanmedian(stack, axis=0)


def fit_stage2(results: Sequence[SceneResult], config: PipelineConfig = PipelineConfig(), rng=None):
    """Logistic model on a random ``cell_train_fraction`` of the cells.

    Returns ``(model, held-out accuracy, cell table, train mask)``.
    """
    rng = np.random.default_rng(config.seed if rng is None else rng)
    d, y, sid, ray, gap = cell_table(results)
    if y.min() == y.max():
        raise DegenerateData("distance cells contain a single class")
    train = rng.random(len(d)) < config.cell_train_fraction
    model = localize.fit_logistic(d[train], y[train], config.logistic_l2,
                                  config.logistic_max_iter, config.logistic_tol)
    lo, hi = np.percentile(d, config.colormap_percentiles)
    model.d_min, model.d_max = float(lo), float(hi)
    model.reference = control_reference(results)
    test = ~train
    acc = float(np.mean((model.proba(d[test]) >= model.threshold) == (y[test] == 1))) if test.any() else float("nan")
    return model, acc, (d, y, sid, ray, gap), train


def group_statistics(results: Sequence[SceneResult]) -> dict:
    d, y, *_ = cell_table(results)
    kc_vals, ctrl_vals = d[y == 1], d[y == 0]
    report = stats.compare_groups(kc_vals, ctrl_vals)
    return {
        "test": report,
        "box": {KC: stats.box_stats(kc_vals), CONTROL: stats.box_stats(ctrl_vals)},
    }


def train_all(scenes: Sequence[Scene], config: PipelineConfig = PipelineConfig()):
    """Train segmenter, k-means and logistic models; returns ``(Models, metrics, results)``."""
    labels = [s.label for s in scenes]
    if labels.count(CONTROL) < 2 or labels.count(KC) < 2:
        raise DegenerateData("training needs at least two scenes per class")
    tree, pix_acc, held_ids = train_segmenter(scenes, config)
    results = measure_scenes(scenes, tree, config)
    km, km_acc, _ = fit_stage1(results, config)
    lr, cell_acc, *_ = fit_stage2(results, config)
    grp = group_statistics(results)
    metrics = {
        "pixel_accuracy": pix_acc,
        "segmenter_heldout_scenes": held_ids,
        "clustering_accuracy": km_acc,
        "cell_accuracy": cell_acc,
        "test": grp["test"].to_dict(),
        "box": {k: v.to_dict() for k, v in grp["box"].items()},
    }
    return Models(tree, km, lr), metrics, results


# --- diagnosis ----------------------------------------------------------------

@dataclass
class Diagnosis:
    label: str
    width: float
    height: float
    margin: float
    matrix: localize.DistanceMatrix | None = None
    probabilities: np.ndarray | None = field(default=None, repr=False)
    hotspot: localize.Hotspot | None = None
    stage2_error: str | None = None
    pre: Preprocessed | None = field(default=None, repr=False)

    def cell_summary(self) -> dict | None:
        if self.probabilities is None:
            return None
        present = ~np.isnan(self.matrix.values)
        kc = present & (self.probabilities >= 0.5)
        return {"n_cells": int(present.sum()), "n_kc": int(kc.sum()),
                "kc_fraction": float(kc.sum() / max(present.sum(), 1))}


def diagnose(image, models: Models, config: PipelineConfig = PipelineConfig()) -> Diagnosis:
    """Two-stage diagnosis of one photograph.

    Raises :class:`~kcscreen.geometry.NoCenterDisc` when stage 1 cannot run.
    A stage-2 failure (no measurable gaps) is recorded on the result instead.
    """
    pre = preprocess(image, models.tree, config)
    dims = classify.extract_dims(pre.crop)
    label, margin = classify.classify_cornea(models.kmeans, dims)
    diag = Diagnosis(label, dims.width, dims.height, margin, pre=pre)
    try:
        matrix = distance_matrix(pre, config)
    except localize.NoMeasurableGaps as exc:
        diag.stage2_error = str(exc)
        return diag
    vals = matrix.values
    present = ~np.isnan(vals)
    diag.matrix = matrix
    diag.probabilities = np.where(present, models.logistic.proba(np.where(present, vals, 0.0)), np.nan)
    diag.hotspot = localize.locate_hotspot(matrix, models.logistic)
    return diag

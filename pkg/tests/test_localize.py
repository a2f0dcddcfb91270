import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kcscreen import localize as lo
from kcscreen import pipeline, synth
from kcscreen.config import PipelineConfig


def rings_mask(radii, thickness, size=400, center=(200.0, 300.0), disc=None):
    ys, xs = np.mgrid[0:size, 0:size]
    r = np.hypot(xs - center[0], ys - center[1])
    m = np.zeros((size, size), bool)
    if disc is not None:
        m |= r <= disc
    for rk in radii:
        m |= np.abs(r - rk) <= thickness / 2
    return m


# --- rays -------------------------------------------------------------------

def test_ray_midpoints_at_ring_radii():
    m = rings_mask([60, 100, 140, 180], 8, disc=20)
    (ray,) = lo.cast_rays(m, (200.0, 300.0), [90.0])
    assert ray.starts_inside and not ray.truncated
    mids = [(a + b) / 2 for a, b in ray.bands()]
    np.testing.assert_allclose(mids, [60, 100, 140, 180], atol=0.5)
    for a, b in ray.crossings:
        assert a < b
    starts = [c[0] for c in ray.crossings]
    assert starts == sorted(starts)


def test_all_foreground_single_crossing():
    m = np.ones((50, 60), bool)
    (ray,) = lo.cast_rays(m, (30.0, 40.0), [90.0])
    assert len(ray.crossings) == 1
    assert ray.crossings[0] == (0.0, pytest.approx(40.0, abs=0.5))
    assert ray.truncated and ray.bands() == []


def test_ray_leaving_canvas_loses_cells():
    m = rings_mask([60, 100, 140, 180], 8, disc=20, center=(200.0, 150.0))
    rays = lo.cast_rays(m, (200.0, 150.0), [0.0, 90.0])
    mat = lo.build_distance_matrix(rays, n_gaps=3)
    assert not mat.missing[0].any()
    assert mat.missing[1].sum() == 1


def test_origin_outside_canvas():
    with pytest.raises(lo.OriginOutsideCanvas):
        lo.cast_rays(np.zeros((10, 10), bool), (20.0, 5.0), [90.0])


def test_gap_arithmetic():
    rays = [lo.RayTransitions(90.0, [(36, 44), (76, 84), (116, 124)])]
    mat = lo.build_distance_matrix(rays)
    np.testing.assert_allclose(mat.values, [[40.0, 40.0]])


def test_no_measurable_gaps():
    with pytest.raises(lo.NoMeasurableGaps):
        lo.build_distance_matrix([lo.RayTransitions(90.0, [(0.0, 20.0), (40.0, 50.0)], True)])


def test_csv_round_trip(tmp_path):
    mat = lo.DistanceMatrix(np.array([45.0, 46.0]), np.array([[40.5, np.nan], [41.25, 42.0]]))
    mat.save_csv(tmp_path / "m.csv")
    text = (tmp_path / "m.csv").read_text()
    assert text.splitlines()[0] == "angle,gap_0,gap_1"
    assert text.splitlines()[1] == "45,40.500000,"
    back = lo.DistanceMatrix.load_csv(tmp_path / "m.csv")
    np.testing.assert_array_equal(back.angles, mat.angles)
    np.testing.assert_array_equal(back.missing, mat.missing)
    np.testing.assert_allclose(back.present(), mat.present())


def _noiseless_matrix(tree, **kw):
    spec = synth.SceneSpec(noise_sigma=0.0, rng_seed=17, **kw)
    img, gt = synth.render_scene(spec)
    pre = pipeline.preprocess(img, tree)
    return pipeline.distance_matrix(pre, PipelineConfig()), gt


def test_noiseless_control_columns_constant(tree):
    mat, _ = _noiseless_matrix(tree, squash_y=1.0)
    assert not mat.missing.any()
    spread = mat.values.max(axis=0) - mat.values.min(axis=0)
    assert spread.max() <= 1.0


@pytest.mark.parametrize("kw", [dict(), dict(tilt=13.0), dict(protrusion_amplitude=0.5, protrusion_angle=70.0),
                                dict(protrusion_amplitude=0.3, tilt=-15.0, protrusion_angle=118.0)])
def test_matrix_matches_generator_gaps(tree, kw):
    mat, gt = _noiseless_matrix(tree, **kw)
    truth = gt.gap_samples(mat.angles)
    assert not mat.missing.any()
    assert np.abs(mat.values - truth).max() <= 1.0


def test_kc_row_90_exceeds_row_45(tree):
    mat, gt = _noiseless_matrix(tree, protrusion_amplitude=0.4, protrusion_angle=90.0)
    i90 = int(np.flatnonzero(mat.angles == 90)[0])
    i45 = int(np.flatnonzero(mat.angles == 45)[0])
    for k in gt.affected_gaps():
        assert mat.values[i90, k] > mat.values[i45, k]


# --- logistic ---------------------------------------------------------------

def test_probability_at_origin():
    assert lo.LogisticModel(0.0, 1.0).proba(0.0) == 0.5


def test_hand_evaluated_probability():
    p, label = lo.predict_cell(lo.LogisticModel(-5.0, 0.05), 148.93)
    assert p == pytest.approx(1 / (1 + math.exp(-2.4465)), abs=1e-12)
    assert p == pytest.approx(0.920, abs=5e-4)
    assert label == "kc"


def test_boundary_cell_is_kc():
    m = lo.LogisticModel(-8.0, 0.2)
    p, label = lo.predict_cell(m, m.boundary)
    assert p == pytest.approx(0.5) and label == "kc"
    assert lo.predict_cell(m, m.boundary - 1e-6)[1] == "control"


def test_asymptotes_and_monotonicity():
    m = lo.LogisticModel(-3.0, 0.5)
    assert m.proba(1e6) == 1.0
    d = np.linspace(-50, 50, 1001)
    assert np.all(np.diff(m.proba(d)) >= 0)  # saturates in float64 far from the boundary
    core = np.linspace(-10, 20, 301)
    assert np.all(np.diff(m.proba(core)) > 0)


def test_sigmoid_stable():
    np.testing.assert_allclose(lo.sigmoid(np.array([-800.0, 0.0, 800.0])), [0.0, 0.5, 1.0])


def _central_diff(f, beta, h=1e-6):
    g = np.zeros(2)
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        g[i] = (f(beta + e) - f(beta - e)) / (2 * h)
    return g


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 200))
    x = rng.normal(0, 2, n)
    y = rng.integers(0, 2, n)
    beta = rng.normal(0, 1.5, 2)
    l2 = float(rng.choice([0.0, 1e-3, 0.5]))
    num = _central_diff(lambda b: lo.log_likelihood(b, x, y, l2), beta)
    ana = lo.gradient(beta, x, y, l2)
    err = np.linalg.norm(ana - num) / max(np.linalg.norm(num), 1e-8)
    assert err < 1e-4


def test_separable_data_boundary_between_extremes():
    x = np.array([1.0, 2.0, 3.0, 4.0, 7.0, 8.0, 9.0])
    y = np.array([0, 0, 0, 0, 1, 1, 1])
    m = lo.fit_logistic(x, y, l2=1e-3)
    assert 4.0 < m.boundary < 7.0
    # brute-force threshold search gives a perfect split; the fit matches it
    acc = np.mean((m.proba(x) >= 0.5) == y)
    best = max(np.mean((x >= t) == y) for t in np.arange(0, 10, 0.25))
    assert acc == best == 1.0


def test_fit_recovers_generating_coefficients(rng):
    x = rng.uniform(-5, 5, 20000)
    y = (rng.random(20000) < lo.sigmoid(0.7 + 1.3 * x)).astype(int)
    m = lo.fit_logistic(x, y, l2=0.0)
    assert m.beta0 == pytest.approx(0.7, abs=0.1)
    assert m.beta1 == pytest.approx(1.3, abs=0.1)
    assert np.linalg.norm(lo.gradient([m.beta0, m.beta1], x, y)) < 1e-8


def test_scale_covariance(rng):
    x = rng.normal(40, 2, 500)
    y = (rng.random(500) < lo.sigmoid(-40 + x)).astype(int)
    m1 = lo.fit_logistic(x, y, l2=0.0)
    m2 = lo.fit_logistic(3.0 * x, y, l2=0.0)
    assert m2.beta1 == pytest.approx(m1.beta1 / 3.0, rel=1e-6)
    np.testing.assert_array_equal(m1.proba(x) >= 0.5, m2.proba(3 * x) >= 0.5)


def test_logistic_errors():
    with pytest.raises(lo.SingleClassData):
        lo.fit_logistic([1.0, 2.0], [1, 1])
    with pytest.raises(lo.NonConvergence):
        lo.fit_logistic([1.0, 2.0, 3.0, 4.0], [0, 1, 0, 1], max_iter=1, tol=1e-300)
    with pytest.raises(ValueError):
        lo.LogisticModel(float("nan"), 1.0)


def test_string_labels_and_json(tmp_path):
    m = lo.fit_logistic([1.0, 2.0, 3.0, 6.0, 7.0, 8.0], ["control"] * 3 + ["kc"] * 3, l2=1e-2)
    m.d_min, m.d_max = 1.0, 8.0
    m.reference = np.array([[1.0, np.nan]])
    m.save(tmp_path / "l.json")
    back = lo.LogisticModel.load(tmp_path / "l.json")
    assert (back.beta0, back.beta1, back.d_min, back.d_max) == (m.beta0, m.beta1, 1.0, 8.0)
    np.testing.assert_array_equal(np.isnan(back.reference), [[False, True]])


# --- hotspot ---------------------------------------------------------------

def _matrix(values):
    values = np.asarray(values, dtype=np.float64)
    return lo.DistanceMatrix(45.0 + np.arange(values.shape[0]), values)


def test_empty_hotspot():
    hs = lo.locate_hotspot(_matrix(np.full((91, 6), 40.0)), lo.LogisticModel(-42.0, 1.0))
    assert hs.empty and hs.angle_range is None and hs.severity == 0.0


def test_single_cell_hotspot():
    v = np.full((91, 6), 40.0)
    v[45, 3] = 50.0
    hs = lo.locate_hotspot(_matrix(v), lo.LogisticModel(-42.0, 1.0))
    assert hs.angle_range == (90.0, 90.0)
    assert hs.gap_indices == [3]
    assert hs.n_cells == 1
    assert hs.severity == pytest.approx(float(lo.sigmoid(8.0)))


def test_largest_region_wins():
    v = np.full((91, 6), 40.0)
    v[10:13, 1] = 50.0
    v[60:70, 2:4] = 50.0
    v[71, 0] = np.nan
    hs = lo.locate_hotspot(_matrix(v), lo.LogisticModel(-42.0, 1.0))
    assert hs.angle_range == (105.0, 114.0)
    assert hs.gap_indices == [2, 3]


@pytest.mark.parametrize("center", [52.0, 75.0, 90.0, 128.0])
def test_hotspot_center_on_profile(center):
    ang = 45.0 + np.arange(91)
    bump = 8.0 * np.exp(-(ang - center) ** 2 / (2 * 15.0 ** 2))
    v = 40.0 + bump[:, None] * np.ones(6)
    hs = lo.locate_hotspot(_matrix(v), lo.LogisticModel(-42.0, 1.0))
    assert hs.center_angle == pytest.approx(center, abs=1.0)


def test_kc_scene_hotspot_at_75(tree, small_corpus):
    cfg = PipelineConfig()
    results = pipeline.measure_scenes(small_corpus, tree, cfg)
    model, *_ = pipeline.fit_stage2(results, cfg)
    spec = synth.SceneSpec(protrusion_amplitude=0.45, protrusion_angle=75.0, tilt=6.0, rng_seed=31)
    img, _ = synth.render_scene(spec)
    mat = pipeline.distance_matrix(pipeline.preprocess(img, tree, cfg), cfg)
    hs = lo.locate_hotspot(mat, model)
    assert not hs.empty
    assert hs.center_angle == pytest.approx(75.0, abs=10.0)


# --- color map -------------------------------------------------------------

def test_constant_matrix_single_hue():
    img = lo.render_colormap(_matrix(np.full((91, 6), 42.0)), 128, 40.0, 50.0)
    colors = {tuple(c) for c in img.reshape(-1, 3)} - {(255, 255, 255)}
    assert colors == {tuple(lo.colormap(0.2))}


def test_missing_cells_gray():
    v = np.full((91, 6), 42.0)
    v[:, 5] = np.nan
    img = lo.render_colormap(_matrix(v), 128, 40.0, 50.0)
    assert (img.reshape(-1, 3) == lo.MISSING_RGB).all(axis=1).any()


def test_render_deterministic(tmp_path):
    from kcscreen.raster import write_png

    rng = np.random.default_rng(0)
    m = _matrix(rng.uniform(38, 50, (91, 6)))
    for name in ("a.png", "b.png"):
        write_png(tmp_path / name, lo.render_colormap(m, 256, 38.0, 50.0))
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()


def test_colormap_is_cool_to_warm():
    lo_rgb, hi_rgb = lo.colormap(0.0).astype(int), lo.colormap(1.0).astype(int)
    assert lo_rgb[2] > lo_rgb[0] and hi_rgb[0] > hi_rgb[2]


def test_kc_render_warmer_than_control(tree):
    ctrl, _ = _noiseless_matrix(tree)
    kc, _ = _noiseless_matrix(tree, protrusion_amplitude=0.4)
    lo_, hi_ = 36.0, 60.0
    assert np.nanmean(lo.colormap_coordinate(kc, lo_, hi_)) > np.nanmean(lo.colormap_coordinate(ctrl, lo_, hi_))

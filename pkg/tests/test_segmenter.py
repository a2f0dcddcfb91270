import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from kcscreen import raster, segmenter, synth
from kcscreen.segmenter import ClassificationTree, LabeledPixelSet


def _set(X, y):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    return LabeledPixelSet(X, np.asarray(y, dtype=np.int8))


def _brute_force_split(X, y, min_leaf=1):
    """Exhaustive search over every feature and midpoint threshold."""
    n = len(y)
    best = None
    for f in range(X.shape[1]):
        vals = np.unique(X[:, f])
        for lo, hi in zip(vals[:-1], vals[1:]):
            thr = (lo + hi) / 2
            left = y[X[:, f] < thr]
            right = y[X[:, f] >= thr]
            if len(left) < min_leaf or len(right) < min_leaf:
                continue
            imp = 0.0
            for part in (left, right):
                p = np.mean(part == 1)
                imp += len(part) / n * (1 - p * p - (1 - p) ** 2)
            if best is None or imp < best[2] - 1e-12:
                best = (f, thr, imp)
    return best


def test_gini_values():
    assert segmenter.gini([5, 5]) == pytest.approx(0.5)
    assert segmenter.gini([4, 0]) == 0.0
    assert segmenter.gini([1, 3]) == pytest.approx(0.375)
    assert segmenter.gini([0, 0]) == 0.0


def test_separable_one_feature():
    X = np.zeros((4, 6))
    X[:, 2] = [0.1, 0.2, 0.8, 0.9]
    tree = segmenter.train_tree(_set(X, [0, 0, 1, 1]), max_depth=8, min_leaf=1)
    assert tree.depth == 1
    assert tree.feature[0] == 2
    assert tree.threshold[0] == pytest.approx(0.5)
    assert segmenter.evaluate_tree(tree, _set(X, [0, 0, 1, 1])) == 1.0


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(4, 40), st.integers(1, 4)),
              elements=st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.7, 1.0])),
       st.data())
def test_root_split_is_gini_optimal(X, data):
    y = np.array(data.draw(st.lists(st.integers(0, 1), min_size=len(X), max_size=len(X))), dtype=np.int8)
    min_leaf = data.draw(st.integers(1, 3))
    got = segmenter.best_split(X, y, min_leaf)
    want = _brute_force_split(X, y, min_leaf)
    if want is None:
        assert got is None
        return
    assert got[2] == pytest.approx(want[2], abs=1e-12)
    # ties: lowest feature, then smallest threshold
    assert (got[0], got[1]) == pytest.approx((want[0], want[1]))


def test_equality_goes_right():
    X = np.array([[0.0], [0.0], [1.0], [1.0]])
    tree = segmenter.train_tree(_set(X, [0, 0, 1, 1]), min_leaf=1)
    thr = tree.threshold[0]
    probe = np.array([[thr], [np.nextafter(thr, -1)]])
    assert list(tree.predict(probe)) == [1, 0]


def test_single_class_rejected():
    with pytest.raises(ValueError):
        segmenter.train_tree(_set([[0.1], [0.2]], [1, 1]))
    with pytest.raises(ValueError):
        segmenter.train_tree(_set([[0.1], [0.2]], [0, 1]), min_leaf=0)
    with pytest.raises(ValueError):
        segmenter.train_tree(_set([[0.1]], [0]))


def test_depth_and_leaf_size_limits(rng):
    X = rng.random((2000, 6))
    y = ((X[:, 0] > 0.5) ^ (X[:, 1] > 0.3)).astype(np.int8)
    tree = segmenter.train_tree(_set(X, y), max_depth=3, min_leaf=40)
    assert tree.depth <= 3
    leaves = [i for i in range(len(tree.feature)) if tree.feature[i] < 0]
    assert min(tree.n_samples[i] for i in leaves) >= 40
    # every internal node has two children
    for i in range(len(tree.feature)):
        if tree.feature[i] >= 0:
            assert tree.left[i] >= 0 and tree.right[i] >= 0


def test_depth_zero_on_balanced_random_labels(rng):
    X = rng.random((4000, 6))
    y = np.repeat([0, 1], 2000).astype(np.int8)
    rng.shuffle(y)
    tree = segmenter.train_tree(_set(X, y), max_depth=0)
    assert tree.depth == 0
    held = _set(rng.random((4000, 6)), rng.integers(0, 2, 4000))
    assert segmenter.evaluate_tree(tree, held) == pytest.approx(0.5, abs=0.05)


def test_pure_leaf_tree_on_its_training_data():
    data = _set([[0.1], [0.3]], [1, 1])
    tree = ClassificationTree.from_dict({"root": {"leaf": "foreground", "purity": 1.0}})
    assert segmenter.evaluate_tree(tree, data) == 1.0
    with pytest.raises(ValueError):
        segmenter.evaluate_tree(tree, _set(np.zeros((0, 1)), []))


@pytest.mark.parametrize("leaf, expected", [("foreground", True), ("background", False)])
def test_single_leaf_segment(rng, leaf, expected):
    tree = ClassificationTree.from_dict({"root": {"leaf": leaf, "purity": 1.0}})
    img = rng.integers(0, 256, (6, 9, 3), dtype=np.uint8)
    mask = segmenter.segment(tree, img)
    assert mask.shape == (6, 9) and mask.dtype == bool
    assert np.all(mask == expected)


def test_segment_equals_per_pixel_prediction(tree, rng):
    img = rng.integers(0, 256, (40, 50, 3), dtype=np.uint8)
    direct = tree.predict(raster.feature_image(img).reshape(-1, 6)).reshape(40, 50).astype(bool)
    np.testing.assert_array_equal(segmenter.segment(tree, img), direct)


def test_prediction_is_deterministic(tree, rng):
    X = rng.random((500, 6))
    np.testing.assert_array_equal(tree.apply(X), tree.apply(X.copy()))
    np.testing.assert_array_equal(tree.apply(np.repeat(X[:1], 3, axis=0)), np.repeat(tree.apply(X[:1]), 3))


def test_json_round_trip(tree, tmp_path, rng):
    path = tmp_path / "tree.json"
    tree.save(path)
    back = ClassificationTree.load(path)
    X = rng.random((1000, 6))
    np.testing.assert_array_equal(back.predict(X), tree.predict(X))
    root = tree.to_dict()["root"]
    assert {"feature", "feature_name", "threshold", "left", "right"} <= set(root)


def test_sample_pixels_stratified(rng):
    img = rng.integers(0, 256, (100, 100, 3), dtype=np.uint8)
    truth = np.zeros((100, 100), bool)
    truth[:10] = True
    s = segmenter.sample_pixels(img, truth, 1000, rng, "x")
    assert len(s) == 1000
    assert np.mean(s.labels) == pytest.approx(0.1)
    xs, ys = s.coords.T
    np.testing.assert_array_equal(s.labels, truth[ys, xs])
    np.testing.assert_allclose(s.features, raster.feature_image(img)[ys, xs])


def test_noiseless_scene_iou(tree):
    spec = synth.SceneSpec(protrusion_amplitude=0.4, noise_sigma=0.0, tilt=7.0, rng_seed=21)
    img, _ = synth.render_scene(spec)
    truth = synth.noiseless_mask(spec)
    mask = segmenter.segment(tree, img)
    iou = (mask & truth).sum() / (mask | truth).sum()
    assert iou >= 0.98

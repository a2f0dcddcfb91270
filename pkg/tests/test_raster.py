import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kcscreen import raster

pixels = st.tuples(*[st.integers(0, 255)] * 3)


@pytest.mark.parametrize("pixel, expected", [
    ((255, 0, 0), (0.0, 1.0, 1.0)),
    ((128, 128, 128), (0.0, 0.0, 128 / 255)),
    ((0, 0, 255), (240.0, 1.0, 1.0)),
    ((0, 255, 0), (120.0, 1.0, 1.0)),
    ((255, 255, 0), (60.0, 1.0, 1.0)),
    ((255, 0, 255), (300.0, 1.0, 1.0)),
])
def test_rgb_to_hsv_examples(pixel, expected):
    assert raster.rgb_to_hsv(pixel) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("pixel, expected", [
    ((255, 255, 255), [0, 0, 1, 1 / 3, 1 / 3, 0]),
    ((255, 0, 0), [0, 1, 1, 1, 0, 1]),
    ((0, 0, 0), [0, 0, 0, 1 / 3, 1 / 3, 0]),
    ((100, 50, 50), [0, 0.5, 100 / 255, 0.5, 0.25, 50 / 255]),
])
def test_pixel_features_examples(pixel, expected):
    np.testing.assert_allclose(raster.pixel_features(pixel), expected, atol=1e-12)


def test_out_of_range_pixel_rejected():
    with pytest.raises(ValueError):
        raster.rgb_to_hsv((256, 0, 0))


def _colorsys_hsv(pixel):
    import colorsys

    h, s, v = colorsys.rgb_to_hsv(*(c / 255 for c in pixel))
    return (h * 360.0) % 360.0, s, v


@given(pixels)
def test_hsv_matches_stdlib(pixel):
    h, s, v = raster.rgb_to_hsv(pixel)
    eh, es, ev = _colorsys_hsv(pixel)
    assert s == pytest.approx(es, abs=1e-12)
    assert v == pytest.approx(ev, abs=1e-12)
    if s > 0:
        assert min(abs(h - eh), 360 - abs(h - eh)) < 1e-9
    else:
        assert h == 0.0


@given(pixels)
def test_features_in_unit_cube(pixel):
    f = raster.pixel_features(pixel)
    assert f.shape == (6,)
    assert np.all(f >= 0) and np.all(f <= 1)
    assert f[3] + f[4] <= 1 + 1e-12
    r, g, b = pixel
    if r + g + b:
        assert f[3] + f[4] + b / (r + g + b) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=300)
@given(pixels)
def test_hsv_round_trip(pixel):
    hsv = raster.rgb_to_hsv_array(np.array([[pixel]], dtype=np.uint8))
    if hsv[0, 0, 1] <= 0.05:
        return
    back = raster.hsv_to_rgb_array(hsv)
    hsv2 = raster.rgb_to_hsv_array(back)
    assert abs(hsv2[0, 0, 1] - hsv[0, 0, 1]) <= 1 / 255 + 1e-12
    assert abs(hsv2[0, 0, 2] - hsv[0, 0, 2]) <= 1 / 255 + 1e-12
    dh = abs(hsv2[0, 0, 0] - hsv[0, 0, 0]) / 360
    assert min(dh, 1 - dh) <= 1 / 255 + 1e-12


def test_feature_image_matches_scalar(rng):
    img = rng.integers(0, 256, (7, 5, 3), dtype=np.uint8)
    img[0, 0] = 0
    fi = raster.feature_image(img)
    for y in range(7):
        for x in range(5):
            np.testing.assert_allclose(fi[y, x], raster.pixel_features(tuple(img[y, x])), atol=1e-15)


def test_ppm_round_trip(tmp_path, rng):
    img = rng.integers(0, 256, (13, 17, 3), dtype=np.uint8)
    raster.write_ppm(tmp_path / "a.ppm", img)
    assert (tmp_path / "a.ppm").read_bytes().startswith(b"P6\n17 13\n255\n")
    np.testing.assert_array_equal(raster.read_ppm(tmp_path / "a.ppm"), img)
    np.testing.assert_array_equal(raster.read_image(tmp_path / "a.ppm"), img)


def test_ppm_header_comments(tmp_path):
    data = b"P6\n# made by hand\n2 1\n255\n" + bytes([1, 2, 3, 4, 5, 6])
    (tmp_path / "c.ppm").write_bytes(data)
    np.testing.assert_array_equal(raster.read_ppm(tmp_path / "c.ppm"), [[[1, 2, 3], [4, 5, 6]]])


@pytest.mark.parametrize("shape", [(1, 1), (3, 9), (10, 8), (5, 17)])
def test_pbm_round_trip(tmp_path, rng, shape):
    m = rng.random(shape) < 0.5
    raster.write_pbm(tmp_path / "m.pbm", m)
    np.testing.assert_array_equal(raster.read_pbm(tmp_path / "m.pbm"), m)


def test_png_round_trip(tmp_path, rng):
    img = rng.integers(0, 256, (9, 4, 3), dtype=np.uint8)
    raster.write_png(tmp_path / "a.png", img)
    np.testing.assert_array_equal(raster.read_image(tmp_path / "a.png"), img)


def test_as_raster_validates():
    with pytest.raises(ValueError):
        raster.as_raster(np.zeros((4, 4)))
    with pytest.raises(ValueError):
        raster.as_raster(np.full((2, 2, 3), 300))

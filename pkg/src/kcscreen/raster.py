"""Image containers, color conversion and the per-pixel feature vector.

Images are plain ``numpy`` arrays: a raster is ``(height, width, 3)`` uint8,
a binary mask is ``(height, width)`` bool.  Everything here is vectorized
over whole images; the scalar helpers exist for tests and small fixtures.
"""

from __future__ import annotations

from pathlib import Path
from typing import NamedTuple

import numpy as np

FEATURE_NAMES = ("hue", "saturation", "value", "r_frac", "g_frac", "chroma")


class HsvPixel(NamedTuple):
    h: float  # degrees in [0, 360)
    s: float
    v: float


def as_raster(image) -> np.ndarray:
    """Validate and return ``image`` as a contiguous ``(H, W, 3)`` uint8 array."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) RGB array, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError("raster must be at least 1x1")
    if arr.dtype != np.uint8:
        if np.issubdtype(arr.dtype, np.integer) and (arr.min() < 0 or arr.max() > 255):
            raise ValueError("channel values must lie in [0, 255]")
        arr = arr.astype(np.uint8)
    return np.ascontiguousarray(arr)


def _check_pixel(pixel):
    r, g, b = (int(c) for c in pixel)
    for c in (r, g, b):
        if not 0 <= c <= 255:
            raise ValueError(f"channel value {c} outside [0, 255]")
    return r, g, b


def rgb_to_hsv(pixel) -> HsvPixel:
    """Hexcone HSV of one 8-bit pixel; achromatic pixels get ``h = s = 0``."""
    h, s, v = rgb_to_hsv_array(np.array([[_check_pixel(pixel)]], dtype=np.uint8))[0, 0]
    return HsvPixel(float(h), float(s), float(v))


def rgb_to_hsv_array(image: np.ndarray) -> np.ndarray:
    """Vectorized hexcone HSV.

    Returns a float array of the same leading shape with channels
    ``(h in degrees [0, 360), s in [0, 1], v in [0, 1])``.
    """
    rgb = np.asarray(image, dtype=np.float64) / 255.0
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    mx = rgb.max(axis=-1)
    mn = rgb.min(axis=-1)
    c = mx - mn
    safe_c = np.where(c > 0, c, 1.0)

    h = np.zeros_like(mx)
    rmax = (mx == r) & (c > 0)
    gmax = (mx == g) & (c > 0) & ~rmax
    bmax = (c > 0) & ~rmax & ~gmax
    h = np.where(rmax, np.mod((g - b) / safe_c, 6.0), h)
    h = np.where(gmax, (b - r) / safe_c + 2.0, h)
    h = np.where(bmax, (r - g) / safe_c + 4.0, h)
    h = h * 60.0
    h = np.where(h >= 360.0, h - 360.0, h)

    s = np.where(mx > 0, c / np.where(mx > 0, mx, 1.0), 0.0)
    return np.stack([h, s, mx], axis=-1)


def hsv_to_rgb_array(hsv: np.ndarray) -> np.ndarray:
    """Inverse of :func:`rgb_to_hsv_array`, rounded to uint8."""
    hsv = np.asarray(hsv, dtype=np.float64)
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    c = v * s
    hp = np.mod(h, 360.0) / 60.0
    x = c * (1 - np.abs(np.mod(hp, 2.0) - 1))
    zero = np.zeros_like(c)
    sector = np.floor(hp).astype(int) % 6
    table = [
        (c, x, zero), (x, c, zero), (zero, c, x),
        (zero, x, c), (x, zero, c), (c, zero, x),
    ]
    out = np.zeros(hsv.shape, dtype=np.float64)
    for i, (rr, gg, bb) in enumerate(table):
        sel = sector == i
        out[..., 0] = np.where(sel, rr, out[..., 0])
        out[..., 1] = np.where(sel, gg, out[..., 1])
        out[..., 2] = np.where(sel, bb, out[..., 2])
    out += (v - c)[..., None]
    return np.clip(np.rint(out * 255.0), 0, 255).astype(np.uint8)


def pixel_features(pixel) -> np.ndarray:
    """Six-feature vector of one pixel, see :func:`feature_image`."""
    return feature_image(np.array([[_check_pixel(pixel)]], dtype=np.uint8))[0, 0]


def feature_image(image: np.ndarray) -> np.ndarray:
    """Per-pixel features ``[h/360, s, v, R/sum, G/sum, chroma]``.

    ``chroma`` is ``(max - min) / 255``.  Black pixels have no defined
    chromaticity; both fractions are set to 1/3 there.
    """
    img = np.asarray(image)
    hsv = rgb_to_hsv_array(img)
    rgb = img.astype(np.float64)
    total = rgb.sum(axis=-1)
    black = total == 0
    denom = np.where(black, 1.0, total)
    r_frac = np.where(black, 1.0 / 3.0, rgb[..., 0] / denom)
    g_frac = np.where(black, 1.0 / 3.0, rgb[..., 1] / denom)
    chroma = (rgb.max(axis=-1) - rgb.min(axis=-1)) / 255.0
    return np.stack([hsv[..., 0] / 360.0, hsv[..., 1], hsv[..., 2], r_frac, g_frac, chroma], axis=-1)


# --- image I/O -------------------------------------------------------------

def _read_netpbm_header(data: bytes, magic: bytes, n_fields: int):
    if not data.startswith(magic):
        raise ValueError(f"not a {magic.decode()} file")
    fields = []
    pos = len(magic)
    while len(fields) < n_fields:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while data[pos:pos + 1] not in (b"\n", b"\r", b""):
                pos += 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    # exactly one whitespace byte separates the header from the raster
    return fields, pos + 1


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    (width, height, maxval), offset = _read_netpbm_header(data, b"P6", 3)
    if maxval != 255:
        raise ValueError("only 8-bit PPM files are supported")
    arr = np.frombuffer(data, dtype=np.uint8, count=width * height * 3, offset=offset)
    return arr.reshape(height, width, 3).copy()


def write_ppm(path, image) -> None:
    img = as_raster(image)
    h, w, _ = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pbm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    (width, height), offset = _read_netpbm_header(data, b"P4", 2)
    row_bytes = (width + 7) // 8
    packed = np.frombuffer(data, dtype=np.uint8, count=row_bytes * height, offset=offset)
    bits = np.unpackbits(packed.reshape(height, row_bytes), axis=1)[:, :width]
    return bits.astype(bool)


def write_pbm(path, mask) -> None:
    m = np.asarray(mask, dtype=bool)
    h, w = m.shape
    with open(path, "wb") as fh:
        fh.write(f"P4\n{w} {h}\n".encode("ascii"))
        fh.write(np.packbits(m, axis=1).tobytes())


def read_png(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def write_png(path, image) -> None:
    from PIL import Image

    Image.fromarray(as_raster(image), mode="RGB").save(path, format="PNG", optimize=False)


def read_image(path) -> np.ndarray:
    """Read a PPM or PNG by extension."""
    suffix = Path(path).suffix.lower()
    if suffix in (".ppm", ".pnm"):
        return read_ppm(path)
    if suffix == ".png":
        return read_png(path)
    raise ValueError(f"unsupported image format: {suffix!r}")

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from texforge.errors import InvalidArgumentError
from texforge.pbr import MaterialSet
from texforge.postprocess import (GarmentMask, RgbaPrint, composite_print, estimate_tiling_scale, extract_alpha,
                                  tile_texture)


# -- extract_alpha ----------------------------------------------------------------------------

@pytest.mark.parametrize("x,rgb,alpha", [
    (1.0, 1.0, 1.0),
    (0.1, 0.0, 1.0),
    (0.55, 0.5, 1.0),
    (0.05, 0.0, 0.5),
    (0.0, 0.0, 0.0),
])
def test_extract_alpha_examples(x, rgb, alpha):
    out = extract_alpha(np.full((2, 2, 3), x))
    np.testing.assert_allclose(out.rgb, rgb, atol=1e-15)
    np.testing.assert_allclose(out.alpha, alpha, atol=1e-15)


def test_extract_alpha_channel_max_and_luma():
    px = np.array([[[0.0, 0.0, 0.5]]])
    assert extract_alpha(px).alpha[0, 0] == 1.0
    # luma of pure blue 0.5 is 0.0361 -> alpha 0.361
    assert extract_alpha(px, reduce="luma").alpha[0, 0] == pytest.approx(0.0722 * 0.5 / 0.1)


def test_extract_alpha_single_channel():
    out = extract_alpha(np.array([[0.55, 0.02]]))
    np.testing.assert_allclose(out.rgb[0, 0], 0.5)
    np.testing.assert_allclose(out.alpha, [[1.0, 0.2]])


def test_extract_alpha_continuous_at_threshold():
    below = extract_alpha(np.full((1, 1), np.nextafter(0.1, 0))).alpha[0, 0]
    at = extract_alpha(np.full((1, 1), 0.1)).alpha[0, 0]
    assert at == 1.0 and abs(below - at) < 1e-12


@settings(max_examples=100, deadline=None)
@given(st.floats(0.1, 1.0))
def test_extract_alpha_idempotent_on_opaque(v):
    again = extract_alpha(np.full((1, 1, 3), v))
    assert again.alpha[0, 0] == 1.0


def test_extract_alpha_not_idempotent_below_threshold():
    # an opaque output color darker than 0.1 re-extracts as partly transparent
    assert extract_alpha(np.full((1, 1, 3), 0.05)).alpha[0, 0] == 0.5


@pytest.mark.parametrize("bad", [1.1, -0.1, np.nan])
def test_extract_alpha_range(bad):
    with pytest.raises(InvalidArgumentError):
        extract_alpha(np.full((2, 2, 3), bad))


def test_rgba_print_transparent_rgb_zero():
    out = extract_alpha(np.zeros((3, 3, 3)))
    np.testing.assert_array_equal(out.rgb, 0.0)
    rgba = out.to_rgba()
    assert rgba.shape == (3, 3, 4)


# -- tile_texture ---------------------------------------------------------------------------

def test_tile_integer_quadrants(rng):
    img = rng.uniform(size=(6, 10, 3))
    out = tile_texture(img, (2, 2))
    assert out.shape == (12, 20, 3)
    for qy in range(2):
        for qx in range(2):
            assert out[qy * 6:(qy + 1) * 6, qx * 10:(qx + 1) * 10].tobytes() == img.tobytes()


def test_tile_identity(rng):
    img = rng.uniform(size=(7, 5, 3))
    assert tile_texture(img, (1, 1)).tobytes() == img.tobytes()


def test_tile_one_and_a_half(rng):
    img = rng.uniform(size=(4, 8, 3))
    out = tile_texture(img, (1.5, 1))
    assert out.shape == (4, 12, 3)
    np.testing.assert_array_equal(out[:, 8:], img[:, :4])
    np.testing.assert_array_equal(out[:, 8:], out[:, :4])


@settings(max_examples=30, deadline=None)
@given(rx=st.integers(1, 4), ry=st.integers(1, 4), h=st.integers(2, 9), w=st.integers(2, 9))
def test_tile_integer_periodic(rx, ry, h, w):
    img = np.random.default_rng(h * 10 + w).uniform(size=(h, w))
    out = tile_texture(img, (rx, ry))
    np.testing.assert_array_equal(out[:, w:], out[:, :-w])
    np.testing.assert_array_equal(out[h:], out[:-h])


def test_tile_material_set(rng):
    mat = MaterialSet(rng.uniform(size=(4, 4, 3)), np.broadcast_to([0, 0, 1.0], (4, 4, 3)).copy(),
                      rng.uniform(size=(4, 4)), rng.uniform(size=(4, 4)))
    out = tile_texture(mat, (3, 3))
    assert out.resolution == 12
    np.testing.assert_array_equal(out.roughness[4:8, 8:12], mat.roughness)
    np.testing.assert_allclose(np.linalg.norm(out.normal, axis=-1), 1.0)


@pytest.mark.parametrize("rep", [(0, 1), (1, -2), (np.inf, 1)])
def test_tile_bad_repeats(rep):
    with pytest.raises(InvalidArgumentError):
        tile_texture(np.zeros((4, 4, 3)), rep)


# -- estimate_tiling_scale ----------------------------------------------------------------------

def _mask(h, w, bbox):
    m = np.zeros((h, w), bool)
    x, y, bw, bh = bbox
    m[y:y + bh, x:x + bw] = True
    return m


def test_tiling_scale_examples():
    m = _mask(600, 600, (40, 20, 512, 512))
    assert estimate_tiling_scale(GarmentMask(m, (100, 100, 64, 64)), (1.0, 1.0)) == (8.0, 8.0)
    assert estimate_tiling_scale(GarmentMask(m, (100, 100, 64, 64)), (0.5, 0.5))[0] == 4.0
    assert estimate_tiling_scale(GarmentMask(m, (40, 20, 512, 512)), (1.0, 1.0)) == (1.0, 1.0)


@settings(max_examples=50, deadline=None)
@given(bw=st.integers(8, 40), bh=st.integers(8, 40), cw=st.integers(1, 8), ch=st.integers(1, 8),
       k=st.integers(1, 5), ex=st.floats(0.1, 2.0))
def test_tiling_scale_rescale_invariant(bw, bh, cw, ch, k, ex):
    base = GarmentMask(_mask(bh + 4, bw + 4, (2, 2, bw, bh)), (2, 2, cw, ch))
    big = GarmentMask(_mask(k * (bh + 4), k * (bw + 4), (2 * k, 2 * k, k * bw, k * bh)), (2 * k, 2 * k, k * cw, k * ch))
    assert estimate_tiling_scale(base, (ex, ex)) == pytest.approx(estimate_tiling_scale(big, (ex, ex)), rel=1e-12)


def test_tiling_scale_errors(tmp_path):
    m = _mask(20, 20, (2, 2, 10, 10))
    with pytest.raises(InvalidArgumentError):
        estimate_tiling_scale(GarmentMask(m, (3, 3, 0, 4)))
    with pytest.raises(InvalidArgumentError):
        estimate_tiling_scale(GarmentMask(m, (8, 8, 8, 8)))
    with pytest.raises(InvalidArgumentError):
        GarmentMask(np.zeros((4, 4)), (0, 0, 1, 1))


def test_mask_png_threshold(tmp_path):
    from PIL import Image
    img = np.zeros((10, 10), np.uint8)
    img[2:8, 3:9] = 128
    img[0, 0] = 127
    Image.fromarray(img).save(tmp_path / "m.png")
    gm = GarmentMask.from_png(tmp_path / "m.png", (3, 2, 2, 2))
    assert gm.bbox == (3, 2, 6, 6)


# -- composite_print --------------------------------------------------------------------------

def _print(alpha, value, size=4):
    return RgbaPrint(np.full((size, size, 3), value), np.full((size, size), alpha))


def test_composite_examples(rng):
    base = rng.uniform(size=(10, 10, 3))
    np.testing.assert_array_equal(composite_print(base, _print(0.0, 0.7), (2, 2, 4, 4)), base)
    out = composite_print(base, _print(1.0, 0.7), (2, 3, 4, 4))
    np.testing.assert_array_equal(out[3:7, 2:6], 0.7)
    np.testing.assert_array_equal(out[:3], base[:3])
    out = composite_print(np.full((10, 10, 3), 0.2), _print(0.5, 0.8), (1, 1, 4, 4))
    np.testing.assert_allclose(out[1:5, 1:5], 0.5, rtol=1e-15)


def test_composite_resamples_print():
    out = composite_print(np.zeros((10, 10, 3)), _print(1.0, 0.4, 2), (0, 0, 8, 8))
    np.testing.assert_allclose(out[:8, :8], 0.4)


def test_composite_out_of_bounds():
    with pytest.raises(InvalidArgumentError):
        composite_print(np.zeros((10, 10, 3)), _print(1.0, 0.4), (8, 8, 4, 4))

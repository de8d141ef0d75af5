"""Raster primitives: grayscale, hue, Otsu, morphology, block reduction."""

from __future__ import annotations

import numpy as np
import pytest
from scipy import ndimage as ndi

from corepath.imageops import (
    GRAY_WEIGHTS,
    binary_close,
    binary_dilate,
    box_reduce,
    connected_components,
    disk_element,
    fill_holes,
    inner_boundary,
    laplacian_response,
    otsu_threshold,
    rgb_to_hue,
    round_half_up,
    to_grayscale,
    um_to_px,
)


def test_round_half_up():
    vals = round_half_up([0.5, 1.5, 2.5, -0.5, -1.5, 0.49])
    assert vals.tolist() == [1.0, 2.0, 3.0, 0.0, -1.0, 0.0]


def test_um_to_px():
    assert um_to_px(50.0, 14.464) == 3
    assert um_to_px(100.0, 14.464) == 7
    assert um_to_px(0.0, 1.0) == 0
    with pytest.raises(ValueError):
        um_to_px(1.0, 0.0)


class TestGrayscale:
    def test_white_fixture(self):
        img = np.full((2, 2, 3), 255, dtype=np.uint8)
        assert np.allclose(to_grayscale(img), 254.9745)

    def test_matches_weight_formula(self):
        img = np.random.default_rng(0).integers(0, 256, (5, 7, 3))
        gray = to_grayscale(img)
        wr, wg, wb = GRAY_WEIGHTS
        want = wr * img[..., 0] + wg * img[..., 1] + wb * img[..., 2]
        assert np.allclose(gray, want, atol=0, rtol=0)

    def test_shape_check(self):
        with pytest.raises(ValueError):
            to_grayscale(np.zeros((4, 4)))


class TestHue:
    def test_primary_colors(self):
        img = np.array([[[255, 0, 0], [0, 255, 0], [0, 0, 255]]], dtype=np.uint8)
        assert np.allclose(rgb_to_hue(img)[0], [0.0, 1 / 3, 2 / 3])

    def test_achromatic_is_zero(self):
        img = np.full((3, 3, 3), 128, dtype=np.uint8)
        assert np.all(rgb_to_hue(img) == 0.0)

    def test_range(self):
        img = np.random.default_rng(2).integers(0, 256, (16, 16, 3))
        hue = rgb_to_hue(img)
        assert np.all((hue >= 0) & (hue < 1))


class TestOtsu:
    def test_separates_two_clusters(self):
        rng = np.random.default_rng(0)
        lo = rng.normal(40, 3, 500)
        hi = rng.normal(200, 3, 500)
        thr = otsu_threshold(np.concatenate([lo, hi]))
        assert lo.max() < thr < hi.min()

    def test_threshold_lies_on_bin_edge(self):
        values = np.array([0.0, 0.0, 0.0, 10.0, 10.0, 10.0])
        thr = otsu_threshold(values)
        # 256 equal bins over [0, 10]; the cut is the upper edge of a bin
        edges = np.linspace(0.0, 10.0, 257)
        assert np.any(np.isclose(edges, thr))
        assert 0.0 < thr < 10.0

    def test_constant_input_raises(self):
        with pytest.raises(ValueError):
            otsu_threshold(np.full(10, 3.0))


def test_laplacian_response_impulse():
    img = np.zeros((5, 5))
    img[2, 2] = 10.0
    resp = laplacian_response(img)
    assert resp[2, 2] == 40.0
    assert resp[2, 1] == resp[1, 2] == resp[2, 3] == resp[3, 2] == 10.0
    assert resp[0, 0] == 0.0


def test_laplacian_response_flat():
    assert np.all(laplacian_response(np.full((6, 6), 9.0)) == 0.0)


class TestMorphology:
    def test_disk_element_counts(self):
        assert disk_element(0).tolist() == [[True]]
        assert disk_element(1).sum() == 5
        assert disk_element(2).sum() == 13

    @pytest.mark.parametrize("radius", [1, 2, 3, 5])
    def test_dilate_matches_structuring_element(self, radius):
        rng = np.random.default_rng(radius)
        mask = rng.random((48, 53)) > 0.92
        want = ndi.binary_dilation(mask, structure=disk_element(radius))
        assert np.array_equal(binary_dilate(mask, radius), want)

    @pytest.mark.parametrize("radius", [1, 2, 3, 5])
    def test_close_matches_structuring_element(self, radius):
        rng = np.random.default_rng(10 + radius)
        mask = rng.random((48, 53)) > 0.8
        element = disk_element(radius)
        # pad so the closing is free of array-border effects
        padded = np.pad(mask, radius + 1)
        want = ndi.binary_erosion(
            ndi.binary_dilation(padded, structure=element), structure=element
        )[radius + 1 : -(radius + 1), radius + 1 : -(radius + 1)]
        assert np.array_equal(binary_close(mask, radius), want)

    def test_close_bridges_gap(self):
        # two thick blocks separated by a 2px slit narrower than the element
        mask = np.zeros((9, 11), dtype=bool)
        mask[2:7, 1:5] = True
        mask[2:7, 7:11] = True
        closed = binary_close(mask, 2)
        assert closed[4, 5] and closed[4, 6]
        assert closed[mask].all()
        assert not closed[0, 0]

    def test_zero_radius_identity(self):
        mask = np.random.default_rng(4).random((12, 12)) > 0.5
        assert np.array_equal(binary_dilate(mask, 0), mask)
        assert np.array_equal(binary_close(mask, 0), mask)


def test_fill_holes():
    mask = np.zeros((9, 9), dtype=bool)
    mask[2:7, 2:7] = True
    mask[4, 4] = False
    filled = fill_holes(mask)
    assert filled[4, 4]
    assert filled.sum() == 25


def test_connected_components_eight_connectivity():
    mask = np.zeros((5, 5), dtype=bool)
    mask[0, 0] = True
    mask[1, 1] = True  # diagonal touch joins
    mask[3, 4] = True
    labels, count = connected_components(mask)
    assert count == 2
    assert labels[0, 0] == labels[1, 1]
    assert labels[3, 4] != labels[0, 0]


def test_inner_boundary():
    mask = np.zeros((8, 8), dtype=bool)
    mask[2:6, 2:6] = True
    boundary = inner_boundary(mask)
    assert boundary[2, 2] and boundary[2, 5] and boundary[5, 2]
    assert not boundary[3, 3] and not boundary[4, 4]
    # pixels on the array border do not count as boundary by themselves
    assert not inner_boundary(np.ones((6, 6), dtype=bool)).any()


class TestBoxReduce:
    def brute(self, arr, factor):
        h, w = arr.shape[:2]
        oh, ow = -(-h // factor), -(-w // factor)
        out = np.zeros((oh, ow) + arr.shape[2:], dtype=np.float64)
        for i in range(oh):
            for j in range(ow):
                block = arr[i * factor : (i + 1) * factor, j * factor : (j + 1) * factor]
                out[i, j] = block.reshape(-1, *arr.shape[2:]).mean(axis=0)
        return out

    @pytest.mark.parametrize("factor", [2, 3, 16])
    def test_matches_block_means(self, factor):
        arr = np.random.default_rng(factor).integers(0, 256, (37, 50, 3), dtype=np.uint8)
        out = box_reduce(arr, factor)
        assert out.dtype == np.float64
        assert np.array_equal(out, self.brute(arr.astype(np.float64), factor))

    def test_uint8_fast_path_is_exact(self):
        # byte input takes a float32 accumulation path; results must be
        # bit-identical to the float64 computation
        arr = np.random.default_rng(9).integers(0, 256, (64, 64), dtype=np.uint8)
        assert np.array_equal(box_reduce(arr, 16), box_reduce(arr.astype(np.float64), 16))

    def test_factor_one(self):
        arr = np.arange(12, dtype=np.uint8).reshape(3, 4)
        out = box_reduce(arr, 1)
        assert out.dtype == np.float64
        assert np.array_equal(out, arr.astype(np.float64))

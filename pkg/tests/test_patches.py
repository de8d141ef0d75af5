"""Patch grid planning, canonical extraction, labeling, sampling, archives."""

from __future__ import annotations

import json

import numpy as np
import pytest

from corepath.patches import (
    PatchGridConfig,
    augment,
    balanced_epoch,
    extract_patch,
    feature_cache_path,
    label_patch,
    load_patch_archive,
    plan_patch_grid,
    save_patch_archive,
)
from corepath.slidepack import BinaryMask, LabelMask, build_pyramid


def full_tissue(base_w, base_h, ds=16):
    shape = (-(-base_h // ds), -(-base_w // ds))
    return BinaryMask(data=np.ones(shape, dtype=bool), downsample=ds)


class TestPatchGridConfig:
    def test_defaults(self):
        cfg = PatchGridConfig()
        assert (cfg.stride_px, cfg.patch_px, cfg.level) == (299, 598, 1)
        assert cfg.min_tissue_frac == 0.5 and cfg.target_pixel_um == 0.904

    def test_scale_and_window(self):
        cfg = PatchGridConfig()
        assert cfg.scale(0.904) == pytest.approx(1.0)
        assert cfg.window_base_px(0.904) == (598, 299)
        # finer scanner pitch doubles the base window, half-up on the stride
        assert cfg.window_base_px(0.452) == (1196, 598)
        assert cfg.window_base_px(1.808) == (299, 150)

    def test_validation(self):
        with pytest.raises(ValueError):
            PatchGridConfig(stride_px=0)
        with pytest.raises(ValueError):
            PatchGridConfig(patch_px=0)
        with pytest.raises(ValueError):
            PatchGridConfig(min_tissue_frac=1.2)
        with pytest.raises(ValueError):
            PatchGridConfig(target_pixel_um=0.0)
        with pytest.raises(ValueError):
            PatchGridConfig().scale(0.0)


class TestPlanPatchGrid:
    def test_897_square_has_four_windows(self):
        coords = plan_patch_grid(full_tissue(897, 897), PatchGridConfig(), 897, 897, 0.904)
        assert coords == [(0, 0), (299, 0), (0, 299), (299, 299)]

    def test_matches_closed_form_on_full_tissue(self):
        cfg = PatchGridConfig()
        rng = np.random.default_rng(0)
        for _ in range(20):
            w = int(rng.integers(300, 3000))
            h = int(rng.integers(300, 3000))
            coords = plan_patch_grid(full_tissue(w, h), cfg, w, h, 0.904)
            nx = 0 if w < 598 else (w - 598) // 299 + 1
            ny = 0 if h < 598 else (h - 598) // 299 + 1
            assert len(coords) == nx * ny
            want = [(x * 299, y * 299) for y in range(ny) for x in range(nx)]
            assert coords == want

    def test_min_tissue_frac_boundary(self):
        # window (0,0) sees 19 of 38 mask columns: exactly 0.5 stays in
        mask = np.zeros((57, 57), dtype=bool)
        mask[:, :19] = True
        tissue = BinaryMask(data=mask, downsample=16)
        coords = plan_patch_grid(tissue, PatchGridConfig(), 897, 897, 0.904)
        assert coords == [(0, 0), (0, 299)]

    def test_slide_smaller_than_window(self):
        assert plan_patch_grid(full_tissue(500, 900), PatchGridConfig(), 500, 900, 0.904) == []


class TestExtractPatch:
    @staticmethod
    @pytest.fixture(scope="class")
    def pyramid():
        rng = np.random.default_rng(1)
        base = rng.integers(0, 256, size=(1200, 1300, 3), dtype=np.uint8)
        return build_pyramid(base, 0.904), base

    def test_native_pitch_is_a_plain_crop(self, pyramid):
        pyr, base = pyramid
        got = extract_patch(pyr, 32, 48, PatchGridConfig())
        assert got.dtype == np.uint8
        assert np.array_equal(got, base[48:646, 32:630])

    def test_whitening_against_tissue_and_pen(self, pyramid):
        pyr, base = pyramid
        cfg = PatchGridConfig()
        none = BinaryMask(data=np.zeros((75, 82), dtype=bool), downsample=16)
        every = BinaryMask(data=np.ones((75, 82), dtype=bool), downsample=16)
        assert (extract_patch(pyr, 0, 0, cfg, tissue=none) == 255).all()
        assert np.array_equal(
            extract_patch(pyr, 0, 0, cfg, tissue=every), base[:598, :598]
        )
        assert (extract_patch(pyr, 0, 0, cfg, tissue=every, pen=every) == 255).all()

    def test_whitening_boundary_uses_pixel_centers(self, pyramid):
        pyr, base = pyramid
        mask = np.zeros((75, 82), dtype=bool)
        mask[:, 4:] = True  # tissue starts at working column 4 = base x 64
        tissue = BinaryMask(data=mask, downsample=16)
        got = extract_patch(pyr, 32, 0, PatchGridConfig(), tissue=tissue)
        assert (got[:, :32] == 255).all()
        assert np.array_equal(got[:, 32:], base[:598, 64:630])

    def test_finer_pitch_resamples_to_canonical_grid(self):
        base = np.full((1300, 1300, 3), (120, 30, 200), dtype=np.uint8)
        pyr = build_pyramid(base, 0.452)
        got = extract_patch(pyr, 0, 0, PatchGridConfig())
        assert got.shape == (598, 598, 3)
        assert (got == (120, 30, 200)).all()

    def test_coarse_target_reads_stored_level(self, pyramid):
        pyr, _ = pyramid
        cfg = PatchGridConfig(patch_px=10, stride_px=10, level=4, target_pixel_um=14.464)
        got = extract_patch(pyr, 0, 0, cfg)
        assert np.array_equal(got, pyr.levels[16][:10, :10])

    def test_out_of_bounds(self, pyramid):
        pyr, _ = pyramid
        with pytest.raises(ValueError, match="out of bounds"):
            extract_patch(pyr, 1300 - 597, 0, PatchGridConfig())


class TestLabelPatch:
    def build(self, cells):
        data = np.array(cells, dtype=np.uint8)
        labels = LabelMask(data=data, downsample=16)
        tissue = BinaryMask(data=np.ones(data.shape, dtype=bool), downsample=16)
        return labels, tissue

    def window(self, labels, tissue, cells_w=4):
        return label_patch(labels, tissue, 0, 0, cells_w * 16)

    def test_majority(self):
        labels, tissue = self.build([[1, 1, 1, 3]] * 4)
        assert self.window(labels, tissue) == 1

    def test_tie_prefers_malignant(self):
        labels, tissue = self.build([[1, 1, 3, 3]] * 4)
        assert self.window(labels, tissue) == 3
        labels, tissue = self.build([[3, 3, 4, 4]] * 4)
        assert self.window(labels, tissue) == 4
        labels, tissue = self.build([[0, 0, 1, 1]] * 4)
        assert self.window(labels, tissue) == 1

    def test_255_wins_ties_but_not_majorities(self):
        # tied with the slide's top coded grade, the overlap label ranks above
        labels, tissue = self.build([[4, 4, 255, 255]] * 4)
        assert self.window(labels, tissue) == 255
        labels, tissue = self.build([[3, 3, 255, 255]] * 4)
        assert self.window(labels, tissue) == 255
        # a clear majority still beats it
        labels, tissue = self.build([[4, 4, 4, 255]] * 4)
        assert self.window(labels, tissue) == 4

    def test_255_without_coded_grades_ranks_above_cancer(self):
        labels, tissue = self.build([[2, 2, 255, 255]] * 4)
        assert self.window(labels, tissue) == 255

    def test_no_tissue_returns_zero(self):
        labels = LabelMask(data=np.ones((4, 4), dtype=np.uint8), downsample=16)
        tissue = BinaryMask(data=np.zeros((4, 4), dtype=bool), downsample=16)
        assert label_patch(labels, tissue, 0, 0, 64) == 0

    def test_downsample_mismatch(self):
        labels = LabelMask(data=np.zeros((4, 4), dtype=np.uint8), downsample=16)
        tissue = BinaryMask(data=np.zeros((4, 4), dtype=bool), downsample=8)
        with pytest.raises(ValueError, match="downsample"):
            label_patch(labels, tissue, 0, 0, 64)


class TestBalancedEpoch:
    def test_counts_and_membership(self):
        refs = {
            0: [("s", i) for i in range(10)],
            1: [("t", i) for i in range(3)],
            2: [("u", i) for i in range(7)],
        }
        drawn = balanced_epoch(refs, np.random.default_rng(0))
        assert len(drawn) == 9
        for c in refs:
            picked = [r for r in drawn if r in refs[c]]
            assert len(picked) == 3
            assert len(set(picked)) == 3  # without replacement
        assert set(refs[1]) <= set(drawn)

    def test_determinism_and_redraw(self):
        refs = {0: list(range(20)), 1: list(range(100, 104))}
        a = balanced_epoch(refs, np.random.default_rng(7))
        b = balanced_epoch(refs, np.random.default_rng(7))
        assert a == b
        rng = np.random.default_rng(7)
        first = balanced_epoch(refs, rng)
        second = balanced_epoch(refs, rng)
        assert first != second  # successive epochs resample

    def test_empty_cases(self):
        assert balanced_epoch({}, np.random.default_rng(0)) == []
        with pytest.raises(ValueError, match="non-empty"):
            balanced_epoch({0: [1], 1: []}, np.random.default_rng(0))


class TestAugment:
    def test_eight_distinct_outcomes(self):
        patch = np.array([[1, 2], [3, 4]], dtype=np.uint8)
        rng = np.random.default_rng(0)
        seen = {augment(patch, rng).tobytes() for _ in range(300)}
        assert len(seen) == 8
        assert patch.tobytes() in seen  # identity is one of them

    def test_outcomes_roughly_uniform(self):
        patch = np.array([[1, 2], [3, 4]], dtype=np.uint8)
        rng = np.random.default_rng(1)
        counts: dict[bytes, int] = {}
        n = 4000
        for _ in range(n):
            key = augment(patch, rng).tobytes()
            counts[key] = counts.get(key, 0) + 1
        for c in counts.values():
            assert abs(c / n - 0.125) < 0.03

    def test_channels_preserved(self):
        rng = np.random.default_rng(2)
        patch = rng.integers(0, 256, size=(6, 6, 3), dtype=np.uint8)
        out = augment(patch, rng)
        assert out.shape == (6, 6, 3)
        assert out.flags["C_CONTIGUOUS"]
        assert sorted(out.ravel()) == sorted(patch.ravel())


class TestArchives:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        patches = rng.integers(0, 256, size=(3, 4, 4, 3), dtype=np.uint8)
        rows = [
            {"slide_id": "s1", "x": 0, "y": 0, "label": 1},
            {"slide_id": "s1", "x": 299, "y": 0, "label": 3},
            {"slide_id": "s1", "x": 0, "y": 299, "label": 0},
        ]
        features = rng.normal(size=(3, 42))
        index = save_patch_archive(tmp_path, "s1", patches, rows, features)
        assert index == tmp_path / "s1.jsonl"
        stack, back = load_patch_archive(tmp_path, "s1")
        assert np.array_equal(stack, patches)
        assert back == rows
        assert np.array_equal(np.load(feature_cache_path(tmp_path, "s1")), features)

    def test_index_lines_have_sorted_keys(self, tmp_path):
        rows = [{"y": 1, "x": 2, "slide_id": "s2", "label": 0}]
        save_patch_archive(tmp_path, "s2", None, rows)
        line = (tmp_path / "s2.jsonl").read_text().strip()
        assert line == json.dumps(rows[0], sort_keys=True)

    def test_index_only_archive(self, tmp_path):
        rows = [{"slide_id": "s3", "x": 0, "y": 0, "label": 1}]
        save_patch_archive(tmp_path, "s3", None, rows)
        assert not (tmp_path / "s3.npy").exists()
        stack, back = load_patch_archive(tmp_path, "s3", pixels=False)
        assert stack is None and back == rows

    def test_count_mismatch(self, tmp_path):
        with pytest.raises(ValueError, match="row counts"):
            save_patch_archive(
                tmp_path, "s4", np.zeros((2, 4, 4, 3), dtype=np.uint8), [{"x": 0}]
            )

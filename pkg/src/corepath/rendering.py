"""Confidence-mask rendering and slide overlays.

Per patch, member probabilities average into one distribution; per pixel,
all covering patches average again. Channels encode R = 1 - P(benign)
from the detection stage, G = P(pattern 3), B = P(pattern 4) + P(pattern 5)
from the grading stage. The float image upsamples bilinearly to the output
downsample and quantizes to 8 bits with round-half-up.
"""

from __future__ import annotations

import numpy as np

from corepath.imageops import round_half_up
from corepath.patch_model import ProbMatrix
from corepath.slidepack import ImagePyramid, ceil_div, read_region

__all__ = ["build_confidence_mask", "render_overlay", "bilinear_resize"]


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Center-aligned bilinear resampling of a float image."""
    arr = np.asarray(img, dtype=np.float64)
    h, w = arr.shape[:2]
    if (h, w) == (out_h, out_w):
        return arr.copy()
    ys = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0, h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0).reshape(-1, 1)
    fx = (xs - x0).reshape(1, -1)
    if arr.ndim == 3:
        fy = fy[..., None]
        fx = fx[..., None]
    top = arr[np.ix_(y0, x0)] * (1 - fx) + arr[np.ix_(y0, x1)] * fx
    bottom = arr[np.ix_(y1, x0)] * (1 - fx) + arr[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bottom * fy


def build_confidence_mask(
    det_members: list[ProbMatrix],
    grade_members: list[ProbMatrix],
    patch_side_base: int,
    base_width: int,
    base_height: int,
    out_downsample: int = 16,
    work_downsample: int = 16,
) -> np.ndarray:
    """Render per-patch probabilities into an RGB confidence raster.

    All matrices must share one patch grid (same coords in the same order);
    members average first, then overlapping patches average per pixel.
    Uncovered pixels stay black.
    """
    if not det_members or not grade_members:
        raise ValueError("need at least one member per stage")
    coords = det_members[0].coords
    for pm in list(det_members) + list(grade_members):
        if not np.array_equal(pm.coords, coords):
            raise ValueError("probability matrices disagree on the patch grid")
    det = np.mean([pm.probs for pm in det_members], axis=0)
    grade = np.mean([pm.probs for pm in grade_members], axis=0)
    if det.shape[1] != 2 or grade.shape[1] != 4:
        raise ValueError("expected detection (n,2) and grading (n,4) matrices")

    channels = np.column_stack(
        [1.0 - det[:, 0], grade[:, 1], grade[:, 2] + grade[:, 3]]
    )
    h16 = ceil_div(base_height, work_downsample)
    w16 = ceil_div(base_width, work_downsample)
    acc = np.zeros((h16, w16, 3), dtype=np.float64)
    cnt = np.zeros((h16, w16, 1), dtype=np.float64)
    for (x, y), channel in zip(coords, channels):
        # a working-grid pixel belongs to the patch when its center does
        x0 = max(int(np.ceil(x / work_downsample - 0.5)), 0)
        y0 = max(int(np.ceil(y / work_downsample - 0.5)), 0)
        x1 = min(int(np.ceil((x + patch_side_base) / work_downsample - 0.5)), w16)
        y1 = min(int(np.ceil((y + patch_side_base) / work_downsample - 0.5)), h16)
        acc[y0:y1, x0:x1] += channel
        cnt[y0:y1, x0:x1] += 1.0
    covered = cnt[..., 0] > 0
    out = np.zeros_like(acc)
    out[covered] = acc[covered] / cnt[..., 0][covered, None]
    if out_downsample != work_downsample:
        out = bilinear_resize(
            out, ceil_div(base_height, out_downsample), ceil_div(base_width, out_downsample)
        )
    return np.clip(round_half_up(out * 255.0), 0, 255).astype(np.uint8)


def render_overlay(
    pyr: ImagePyramid, mask_rgb: np.ndarray, downsample: int, alpha: float = 0.5
) -> np.ndarray:
    """Alpha-blend a confidence raster over the slide at its downsample."""
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must lie in [0, 1]")
    slide = read_region(pyr, downsample).astype(np.float64)
    mask = np.asarray(mask_rgb, dtype=np.float64)
    if slide.shape != mask.shape:
        raise ValueError(
            f"dimension mismatch: slide {slide.shape} vs mask {mask.shape}"
        )
    blended = (1.0 - alpha) * slide + alpha * mask
    return np.clip(round_half_up(blended), 0, 255).astype(np.uint8)

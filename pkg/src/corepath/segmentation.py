"""Tissue and pen-mark segmentation on the downsample-16 working raster.

Tissue responds to a 3x3 Laplacian (texture), pen marks are the dark
complement of the Otsu-thresholded grayscale image. Both pipelines share
Otsu binarization, disk closing, hole filling and area filters; pen marks
additionally require a minimum oriented width and pass hue-based color
filters. All micrometer parameters convert to working-grid pixels through
the slide's pixel size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from corepath.geometry import component_width
from corepath.imageops import (
    binary_close,
    connected_components,
    fill_holes,
    laplacian_response,
    otsu_threshold,
    rgb_to_hue,
    to_grayscale,
    um_to_px,
)
from corepath.slidepack import BinaryMask, ImagePyramid, read_region

__all__ = [
    "SegmentationParams",
    "segment_tissue",
    "segment_penmarks",
    "tissue_mask_from_image",
    "pen_mask_from_image",
    "to_grayscale",
    "otsu_threshold",
]


@dataclass(frozen=True)
class SegmentationParams:
    work_downsample: int = 16
    close_radius_um: float = 50.0
    min_area_um2: float = 100000.0
    min_pen_width_um: float = 400.0
    # tissue components darker than their Otsu split and with mean hue below
    # this cut count as stray pen ink and are removed
    tissue_pen_hue_max: float = 0.7
    # pen candidates with mean hue above this cut are blurred tissue, not ink
    pen_hue_max: float = 0.6


def _read_work_image(pyr: ImagePyramid, params: SegmentationParams) -> tuple[np.ndarray, float]:
    rgb = read_region(pyr, params.work_downsample)
    return rgb, pyr.pixel_size_um * params.work_downsample


def segment_tissue(pyr: ImagePyramid, params: SegmentationParams = SegmentationParams()) -> BinaryMask:
    rgb, um_per_px = _read_work_image(pyr, params)
    mask = tissue_mask_from_image(rgb, um_per_px, params)
    return BinaryMask(data=mask, downsample=params.work_downsample)


def segment_penmarks(
    pyr: ImagePyramid,
    tissue: BinaryMask,
    params: SegmentationParams = SegmentationParams(),
) -> BinaryMask:
    if tissue.downsample != params.work_downsample:
        raise ValueError("tissue mask downsample differs from working downsample")
    rgb, um_per_px = _read_work_image(pyr, params)
    mask = pen_mask_from_image(rgb, tissue.data, um_per_px, params)
    return BinaryMask(data=mask, downsample=params.work_downsample)


def tissue_mask_from_image(
    rgb: np.ndarray, um_per_px: float, params: SegmentationParams = SegmentationParams()
) -> np.ndarray:
    gray = to_grayscale(rgb)
    response = laplacian_response(gray)
    try:
        thr = otsu_threshold(response)
    except ValueError:
        # featureless raster, e.g. an empty slide
        return np.zeros(gray.shape, dtype=bool)
    mask = response > thr
    mask = binary_close(mask, um_to_px(params.close_radius_um, um_per_px))
    mask = fill_holes(mask)
    mask = _drop_small(mask, params.min_area_um2, um_per_px)
    mask = _drop_pen_colored_tissue(mask, rgb, gray, params)
    return mask


def pen_mask_from_image(
    rgb: np.ndarray,
    tissue: np.ndarray,
    um_per_px: float,
    params: SegmentationParams = SegmentationParams(),
) -> np.ndarray:
    gray = to_grayscale(rgb)
    try:
        thr = otsu_threshold(gray)
    except ValueError:
        return np.zeros(gray.shape, dtype=bool)
    dark = gray <= thr
    dark = binary_close(dark, um_to_px(params.close_radius_um, um_per_px))
    dark &= ~tissue
    dark = fill_holes(dark)
    labels, count = connected_components(dark)
    if count == 0:
        return dark
    keep = np.zeros(count + 1, dtype=bool)
    min_area_px = params.min_area_um2 / (um_per_px * um_per_px)
    min_width_px = params.min_pen_width_um / um_per_px
    hue = rgb_to_hue(rgb)
    areas = np.bincount(labels.ravel(), minlength=count + 1)
    hue_sums = np.bincount(labels.ravel(), weights=hue.ravel(), minlength=count + 1)
    for lab in range(1, count + 1):
        if areas[lab] < min_area_px:
            continue
        if component_width(labels == lab) < min_width_px:
            continue
        if hue_sums[lab] / areas[lab] > params.pen_hue_max:
            continue
        keep[lab] = True
    return keep[labels]


def _drop_small(mask: np.ndarray, min_area_um2: float, um_per_px: float) -> np.ndarray:
    labels, count = connected_components(mask)
    if count == 0:
        return mask
    areas = np.bincount(labels.ravel(), minlength=count + 1)
    keep = areas * um_per_px * um_per_px >= min_area_um2
    keep[0] = False
    return keep[labels]


def _drop_pen_colored_tissue(
    mask: np.ndarray, rgb: np.ndarray, gray: np.ndarray, params: SegmentationParams
) -> np.ndarray:
    """Remove components that look like ink: low mean hue and, on average,
    darker than the grayscale Otsu split (real tissue stays even when dark)."""
    labels, count = connected_components(mask)
    if count == 0:
        return mask
    try:
        gray_thr = otsu_threshold(gray)
    except ValueError:
        return mask
    hue = rgb_to_hue(rgb)
    areas = np.bincount(labels.ravel(), minlength=count + 1)
    hue_sums = np.bincount(labels.ravel(), weights=hue.ravel(), minlength=count + 1)
    gray_sums = np.bincount(labels.ravel(), weights=gray.ravel(), minlength=count + 1)
    keep = np.ones(count + 1, dtype=bool)
    keep[0] = False
    for lab in range(1, count + 1):
        mean_hue = hue_sums[lab] / areas[lab]
        mean_gray = gray_sums[lab] / areas[lab]
        if mean_hue < params.tissue_pen_hue_max and mean_gray <= gray_thr:
            keep[lab] = False
    return keep[labels]

"""Digitize hand-drawn pen marks into per-pixel cancer label masks.

A pen stroke drawn beside a tissue section is projected onto the section:
pen-boundary pixels pair with their nearest tissue-boundary pixels, the
pair directions vote for a dominant projection angle, outlier pairs are
discarded, rays marched through the tissue find the far side, and the
convex hull of near+far points (thickened, clipped to tissue) becomes the
annotated region. Pen color optionally encodes the Gleason pattern.

Label values: 0 unknown, 1 benign tissue, 2 cancer, 3/4/5 pattern-coded
cancer, 255 conflicting pattern overlap.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from corepath.geometry import fill_convex_hull
from corepath.imageops import (
    binary_close,
    binary_dilate,
    connected_components,
    fill_holes,
    inner_boundary,
    um_to_px,
)
from corepath.slidepack import BinaryMask, LabelMask

__all__ = [
    "AnnotationWarning",
    "DigitizerParams",
    "DirectionStats",
    "circular_stats",
    "project_penmark",
    "classify_pen_color",
    "build_label_mask",
    "refine_label_mask",
]

PEN_COLOR_GRADES = ((0, 255, 0, 3), (0, 0, 255, 4), (0, 0, 0, 5))

CANCER_LABELS = (2, 3, 4, 5, 255)


class AnnotationWarning(UserWarning):
    """A pen region could not be projected and was skipped."""


@dataclass(frozen=True)
class DigitizerParams:
    smooth_radius_um: float = 100.0
    pair_max_dist_um: float = 2000.0
    angle_floor_deg: float = 20.0
    hull_thicken_px: int = 3
    normal_dilate_um: float = 100.0
    cancer_dilate_um: float = 100.0
    unknown_margin_um: float = 700.0


@dataclass(frozen=True)
class DirectionStats:
    """Circular mean direction and dispersion of a set of 2-D vectors."""

    theta: float  # mean direction, radians in (-pi, pi]
    sigma: float  # 1 - mean resultant length, in [0, 1]
    degenerate: bool  # resultant vanished; theta is reported as 0


def circular_stats(vectors: np.ndarray) -> DirectionStats:
    vecs = np.asarray(vectors, dtype=np.float64)
    if vecs.ndim != 2 or vecs.shape[1] != 2 or len(vecs) == 0:
        raise ValueError("expected a non-empty (n, 2) vector array")
    norms = np.hypot(vecs[:, 0], vecs[:, 1])
    if np.any(norms == 0):
        raise ValueError("zero-length direction vector")
    angles = np.arctan2(vecs[:, 1], vecs[:, 0])
    c = float(np.mean(np.cos(angles)))
    s = float(np.mean(np.sin(angles)))
    resultant = math.hypot(c, s)
    degenerate = resultant < 1e-12
    theta = 0.0 if degenerate else math.atan2(s, c)
    return DirectionStats(theta=theta, sigma=1.0 - resultant, degenerate=degenerate)


def _angle_diff(angles: np.ndarray, theta: float) -> np.ndarray:
    return np.abs(np.mod(angles - theta + np.pi, 2.0 * np.pi) - np.pi)


def project_penmark(
    tissue: np.ndarray,
    pen_region: np.ndarray,
    um_per_px: float,
    params: DigitizerParams = DigitizerParams(),
) -> np.ndarray:
    """Project one pen region onto the tissue it annotates.

    Both masks live on the same working grid (``um_per_px`` micrometers per
    pixel). Returns the annotated tissue region; empty (with an
    AnnotationWarning) when no pen/tissue boundary pair lies within the
    pairing distance.
    """
    tissue = np.asarray(tissue, dtype=bool)
    pen_region = np.asarray(pen_region, dtype=bool)
    if tissue.shape != pen_region.shape:
        raise ValueError("tissue and pen masks must share a grid")
    empty = np.zeros_like(tissue)
    smooth_px = um_to_px(params.smooth_radius_um, um_per_px)
    pen_s = fill_holes(binary_close(pen_region, smooth_px))
    tissue_s = fill_holes(binary_close(tissue, smooth_px))
    overlap = pen_s & tissue_s
    pen_s &= ~overlap
    tissue_s &= ~overlap

    t_boundary = inner_boundary(tissue_s)
    p_boundary = inner_boundary(pen_s)
    t_pts = np.column_stack(np.nonzero(t_boundary)[::-1]).astype(np.float64)
    p_pts = np.column_stack(np.nonzero(p_boundary)[::-1]).astype(np.float64)
    max_px = params.pair_max_dist_um / um_per_px
    if len(t_pts) == 0 or len(p_pts) == 0:
        warnings.warn("pen region skipped: no boundary to pair", AnnotationWarning)
        return empty

    dist, nearest = cKDTree(t_pts).query(p_pts, k=1)
    within = dist <= max_px
    if not within.any():
        warnings.warn(
            "pen region skipped: no tissue boundary within pairing distance",
            AnnotationWarning,
        )
        return empty
    pen_anchor = p_pts[within]
    near_pts = t_pts[nearest[within]]
    vectors = near_pts - pen_anchor

    stats = circular_stats(vectors)
    theta_t = max(math.radians(params.angle_floor_deg), math.pi * stats.sigma)
    diffs = _angle_diff(np.arctan2(vectors[:, 1], vectors[:, 0]), stats.theta)
    keep = diffs <= theta_t
    if not keep.any():
        # fall back to the two pairs best aligned with the mean direction
        keep = np.zeros(len(diffs), dtype=bool)
        keep[np.argsort(diffs, kind="stable")[:2]] = True
    pen_anchor = pen_anchor[keep]
    near_pts = near_pts[keep]
    vectors = vectors[keep]

    far_pts = _march_rays(tissue_s, near_pts, pen_anchor, vectors, max_px)
    points = np.vstack([near_pts, far_pts])
    hull = fill_convex_hull(points, tissue.shape)
    hull = binary_dilate(hull, params.hull_thicken_px)
    return hull & tissue


def _march_rays(tissue_s, near_pts, pen_anchor, vectors, max_px) -> np.ndarray:
    """Step 1 px along each pair direction until leaving tissue or ranging
    out from the pen anchor; returns the last in-tissue pixel per ray."""
    h, w = tissue_s.shape
    out = np.empty_like(near_pts)
    for j in range(len(near_pts)):
        vx, vy = vectors[j]
        norm = math.hypot(vx, vy)
        dx, dy = vx / norm, vy / norm
        px, py = near_pts[j]
        ax, ay = pen_anchor[j]
        last = (px, py)
        x, y = px, py
        while True:
            x += dx
            y += dy
            xi = int(math.floor(x + 0.5))
            yi = int(math.floor(y + 0.5))
            if xi < 0 or yi < 0 or xi >= w or yi >= h:
                break
            if not tissue_s[yi, xi]:
                break
            last = (xi, yi)
            if math.hypot(x - ax, y - ay) > max_px:
                break
        out[j] = last
    return out


def classify_pen_color(image: np.ndarray, region: np.ndarray) -> int:
    """Map a pen region's mean RGB to the nearest reference ink color.

    Green encodes pattern 3, blue 4, black 5; equidistant colors resolve to
    the higher pattern.
    """
    region = np.asarray(region, dtype=bool)
    if not region.any():
        raise ValueError("empty pen region")
    mean_rgb = np.asarray(image, dtype=np.float64)[region].mean(axis=0)
    best_grade = None
    best_dist = None
    for r, g, b, grade in PEN_COLOR_GRADES:
        d = float(np.sum((mean_rgb - (r, g, b)) ** 2))
        if best_dist is None or d < best_dist or (d == best_dist and grade > best_grade):
            best_dist = d
            best_grade = grade
    return best_grade


def build_label_mask(
    tissue: BinaryMask,
    pen: BinaryMask,
    image: np.ndarray,
    pixel_size_um: float,
    grade_coded: bool = False,
    params: DigitizerParams = DigitizerParams(),
) -> LabelMask:
    """Digitize every pen region on a slide into one label mask.

    Slides without pen marks are benign: all tissue becomes label 1. On
    annotated slides, tissue sections containing at least one projected
    cancer pixel get label 1 on their remaining tissue; untouched sections
    stay 0. Overlapping projections of different grades become 255.
    """
    if tissue.downsample != pen.downsample:
        raise ValueError("tissue and pen masks must share a downsample")
    um_per_px = pixel_size_um * tissue.downsample
    t = tissue.data
    out = np.zeros(t.shape, dtype=np.uint8)
    pen_labels, n_pens = connected_components(pen.data)
    if n_pens == 0:
        out[t] = 1
        return LabelMask(data=out, downsample=tissue.downsample)

    by_grade: dict[int, np.ndarray] = {}
    for lab in range(1, n_pens + 1):
        region = pen_labels == lab
        projected = project_penmark(t, region, um_per_px, params)
        if not projected.any():
            continue
        grade = classify_pen_color(image, region) if grade_coded else 2
        if grade in by_grade:
            by_grade[grade] |= projected
        else:
            by_grade[grade] = projected

    cancer_any = np.zeros(t.shape, dtype=bool)
    claim_count = np.zeros(t.shape, dtype=np.uint8)
    for grade in sorted(by_grade):
        out[by_grade[grade]] = grade
        cancer_any |= by_grade[grade]
        claim_count += by_grade[grade].astype(np.uint8)
    out[claim_count > 1] = 255

    section_labels, n_sections = connected_components(t)
    for sec in range(1, n_sections + 1):
        section = section_labels == sec
        if (section & cancer_any).any():
            out[section & (out == 0)] = 1
    return LabelMask(data=out, downsample=tissue.downsample)


def refine_label_mask(
    labels: LabelMask,
    tissue: BinaryMask,
    pixel_size_um: float,
    params: DigitizerParams = DigitizerParams(),
) -> LabelMask:
    """Expand labels into their surroundings and carve an unknown margin.

    Cancer grows by ``cancer_dilate_um`` into tissue (never over other
    cancer; competing grades meeting on the same pixel become 255), benign
    grows by ``normal_dilate_um`` into unknown tissue, and finally all
    non-cancer tissue within ``unknown_margin_um`` of cancer resets to 0.
    """
    if labels.downsample != tissue.downsample:
        raise ValueError("label and tissue masks must share a downsample")
    um_per_px = pixel_size_um * labels.downsample
    lab = labels.data.copy()
    t = tissue.data
    if ((lab != 0) & ~t).any():
        raise ValueError("label mask marks non-tissue pixels")

    r_cancer = um_to_px(params.cancer_dilate_um, um_per_px)
    r_normal = um_to_px(params.normal_dilate_um, um_per_px)
    r_margin = um_to_px(params.unknown_margin_um, um_per_px)

    is_cancer = np.isin(lab, CANCER_LABELS)
    grades_present = [v for v in CANCER_LABELS if (lab == v).any()]
    claims = np.zeros(lab.shape, dtype=np.uint8)
    grown = {}
    for v in grades_present:
        grow = binary_dilate(lab == v, r_cancer) & t & ~is_cancer
        grown[v] = grow
        claims += grow.astype(np.uint8)
    for v in grades_present:
        lab[grown[v] & (claims == 1)] = v
    lab[claims > 1] = 255

    is_cancer = np.isin(lab, CANCER_LABELS)
    benign_grow = binary_dilate(lab == 1, r_normal) & t & (lab == 0)
    lab[benign_grow] = 1

    margin = binary_dilate(is_cancer, r_margin)
    lab[t & margin & ~is_cancer] = 0
    return LabelMask(data=lab, downsample=labels.downsample)

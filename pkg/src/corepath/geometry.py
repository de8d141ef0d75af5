"""Exact 2-D geometry for the annotation digitizer and shape filters."""

from __future__ import annotations

import numpy as np


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Convex hull via the monotone chain, returned in CCW order.

    Input is an (n, 2) float array of (x, y) points. Degenerate inputs
    (fewer than 3 distinct points, or all collinear) return the chain as-is.
    """
    pts = np.unique(np.asarray(points, dtype=np.float64), axis=0)
    if len(pts) <= 2:
        return pts
    # unique() sorts lexicographically, which is the order the chain needs
    def half(seq):
        out = []
        for p in seq:
            while len(out) >= 2 and _cross(out[-2], out[-1], p) <= 0:
                out.pop()
            out.append(p)
        return out

    lower = half(pts)
    upper = half(pts[::-1])
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3:
        return pts if len(hull) == 0 else np.asarray(hull)
    return np.asarray(hull)


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def fill_convex_hull(points: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Rasterize the convex hull of (x, y) points onto a (H, W) grid.

    A pixel belongs to the hull when its center lies inside or on the hull
    boundary. Degenerate hulls mark only the rounded input points; callers
    commonly thicken the result afterwards.
    """
    h, w = shape
    out = np.zeros((h, w), dtype=bool)
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        return out
    hull = convex_hull(pts)
    if len(hull) < 3:
        xs = np.clip(np.floor(pts[:, 0] + 0.5).astype(int), 0, w - 1)
        ys = np.clip(np.floor(pts[:, 1] + 0.5).astype(int), 0, h - 1)
        out[ys, xs] = True
        return out
    x0 = max(int(np.floor(hull[:, 0].min())), 0)
    x1 = min(int(np.ceil(hull[:, 0].max())) + 1, w)
    y0 = max(int(np.floor(hull[:, 1].min())), 0)
    y1 = min(int(np.ceil(hull[:, 1].max())) + 1, h)
    if x0 >= x1 or y0 >= y1:
        return out
    gx, gy = np.meshgrid(np.arange(x0, x1, dtype=np.float64),
                         np.arange(y0, y1, dtype=np.float64))
    inside = np.ones(gx.shape, dtype=bool)
    eps = 1e-9
    for i in range(len(hull)):
        ax, ay = hull[i]
        bx, by = hull[(i + 1) % len(hull)]
        inside &= (bx - ax) * (gy - ay) - (by - ay) * (gx - ax) >= -eps
        if not inside.any():
            break
    out[y0:y1, x0:x1] = inside
    return out


def min_area_rect_dims(points: np.ndarray) -> tuple[float, float]:
    """(short, long) side of the minimum-area oriented bounding rectangle.

    Sides are measured as point extents plus one, i.e. the footprint of the
    unit-square pixels the points represent. A single point reports (1, 1).
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) == 0:
        raise ValueError("expected a non-empty (n, 2) point array")
    hull = convex_hull(pts)
    if len(hull) == 1:
        return 1.0, 1.0
    best = None
    n = len(hull)
    for i in range(n if n > 2 else 1):
        ax, ay = hull[i]
        bx, by = hull[(i + 1) % n]
        dx, dy = bx - ax, by - ay
        norm = float(np.hypot(dx, dy))
        if norm == 0:
            continue
        ux, uy = dx / norm, dy / norm
        proj_u = pts[:, 0] * ux + pts[:, 1] * uy
        proj_v = pts[:, 1] * ux - pts[:, 0] * uy
        du = float(proj_u.max() - proj_u.min()) + 1.0
        dv = float(proj_v.max() - proj_v.min()) + 1.0
        if best is None or du * dv < best[0]:
            best = (du * dv, min(du, dv), max(du, dv))
    if best is None:
        return 1.0, 1.0
    return best[1], best[2]


def component_width(mask: np.ndarray) -> float:
    """Shorter side of the oriented bounding rectangle of a boolean mask, px."""
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        return 0.0
    short, _ = min_area_rect_dims(np.column_stack([xs, ys]).astype(np.float64))
    return short

"""Low-level raster helpers shared by the segmentation and patching stages.

Conventions used throughout the package:

- grayscale luminance uses the 0.2989 / 0.5870 / 0.1140 RGB weights,
- hue lives in [0, 1) with achromatic pixels assigned hue 0,
- connected components are 8-connected,
- micrometer quantities convert to pixels via round-half-up.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage as ndi

GRAY_WEIGHTS = (0.2989, 0.5870, 0.1140)

_EIGHT = np.ones((3, 3), dtype=bool)


def round_half_up(x):
    """Round with .5 always going up, elementwise."""
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5)


def um_to_px(um: float, um_per_px: float) -> int:
    if um_per_px <= 0:
        raise ValueError("um_per_px must be positive")
    return int(round_half_up(um / um_per_px))


def to_grayscale(rgb: np.ndarray) -> np.ndarray:
    """Weighted luminance of an (H, W, 3) image as float64."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got shape {rgb.shape}")
    r, g, b = (rgb[..., i].astype(np.float64) for i in range(3))
    wr, wg, wb = GRAY_WEIGHTS
    return wr * r + wg * g + wb * b


def rgb_to_hue(rgb: np.ndarray) -> np.ndarray:
    """HSV hue in [0, 1); achromatic pixels get hue 0."""
    arr = np.asarray(rgb, dtype=np.float64)
    r, g, b = arr[..., 0], arr[..., 1], arr[..., 2]
    mx = np.max(arr, axis=-1)
    mn = np.min(arr, axis=-1)
    delta = mx - mn
    safe = np.where(delta == 0, 1.0, delta)
    hue = np.zeros(mx.shape, dtype=np.float64)
    is_r = (mx == r) & (delta > 0)
    is_g = (mx == g) & (delta > 0) & ~is_r
    is_b = (delta > 0) & ~is_r & ~is_g
    hue[is_r] = np.mod((g - b)[is_r] / safe[is_r], 6.0)
    hue[is_g] = (b - r)[is_g] / safe[is_g] + 2.0
    hue[is_b] = (r - g)[is_b] / safe[is_b] + 4.0
    return hue / 6.0


def otsu_threshold(values: np.ndarray) -> float:
    """Otsu threshold over a 256-bin histogram spanning the data range.

    Returns the upper edge of the optimal cut bin; callers treat
    ``value > threshold`` as the bright class. Raises ValueError on
    constant input.
    """
    flat = np.asarray(values, dtype=np.float64).ravel()
    if flat.size == 0:
        raise ValueError("degenerate histogram: empty input")
    mn = float(flat.min())
    mx = float(flat.max())
    if mx == mn:
        raise ValueError("degenerate histogram: constant input")
    hist, edges = np.histogram(flat, bins=256, range=(mn, mx))
    hist = hist.astype(np.float64)
    centers = 0.5 * (edges[:-1] + edges[1:])
    w0 = np.cumsum(hist)[:-1]
    w1 = hist.sum() - w0
    s0 = np.cumsum(hist * centers)[:-1]
    valid = (w0 > 0) & (w1 > 0)
    mu0 = np.where(valid, s0 / np.where(w0 == 0, 1, w0), 0.0)
    mu1 = np.where(valid, (hist * centers).sum() - s0, 0.0) / np.where(w1 == 0, 1, w1)
    var_b = np.where(valid, w0 * w1 * (mu0 - mu1) ** 2, -np.inf)
    k = int(np.argmax(var_b))
    return float(edges[k + 1])


def laplacian_response(gray: np.ndarray) -> np.ndarray:
    """Absolute response of the 3x3 Laplacian [[0,1,0],[1,-4,1],[0,1,0]]."""
    kernel = np.array([[0, 1, 0], [1, -4, 1], [0, 1, 0]], dtype=np.float64)
    return np.abs(ndi.convolve(np.asarray(gray, dtype=np.float64), kernel, mode="reflect"))


def disk_element(radius_px: int) -> np.ndarray:
    """Disk structuring element: pixels with center distance <= radius."""
    r = int(radius_px)
    if r < 0:
        raise ValueError("radius must be non-negative")
    y, x = np.ogrid[-r : r + 1, -r : r + 1]
    return x * x + y * y <= r * r


def binary_dilate(mask: np.ndarray, radius_px: int) -> np.ndarray:
    """Dilate by a disk: pixels within Euclidean radius of a true pixel.

    Implemented with a distance transform, which matches structuring-element
    dilation exactly on the integer grid at any radius.
    """
    mask = np.asarray(mask, dtype=bool)
    if radius_px <= 0 or not mask.any():
        return mask.copy()
    return ndi.distance_transform_edt(~mask) <= radius_px


def binary_close(mask: np.ndarray, radius_px: int) -> np.ndarray:
    """Morphological closing with a disk, exact at image borders.

    The input is padded by the disk radius so the closing treats everything
    beyond the frame as background instead of clipping the dilation.
    """
    if radius_px <= 0 or not mask.any():
        return mask.copy()
    r = int(radius_px)
    padded = np.pad(mask, r + 1, mode="constant", constant_values=False)
    dilated = ndi.distance_transform_edt(~padded) <= r
    closed = ndi.distance_transform_edt(dilated) > r
    return closed[r + 1 : -(r + 1), r + 1 : -(r + 1)]


def fill_holes(mask: np.ndarray) -> np.ndarray:
    """Fill complement components not connected to the image border."""
    return ndi.binary_fill_holes(mask)


def connected_components(mask: np.ndarray) -> tuple[np.ndarray, int]:
    """8-connected labeling in scanline discovery order."""
    labels, count = ndi.label(mask, structure=_EIGHT)
    return labels, int(count)


def inner_boundary(mask: np.ndarray) -> np.ndarray:
    """Mask pixels with at least one 4-connected background neighbour."""
    if not mask.any():
        return np.zeros_like(mask)
    cross = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
    return mask & ~ndi.binary_erosion(mask, structure=cross, border_value=1)


def box_reduce(arr: np.ndarray, factor: int) -> np.ndarray:
    """Block-mean downscale to ceil(dim / factor); partial edge blocks
    average over the pixels they actually cover."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    a = np.asarray(arr)
    if factor == 1:
        return a.astype(np.float64)
    h, w = a.shape[:2]
    ry = np.arange(0, h, factor)
    rx = np.arange(0, w, factor)
    # float32 accumulation is exact while block sums fit 24 significand
    # bits; that holds for byte-valued input up to factor 256
    if np.issubdtype(a.dtype, np.integer) and a.itemsize == 1 and factor <= 256:
        work = a.astype(np.float32)
    else:
        work = a.astype(np.float64)
    sums = np.add.reduceat(
        np.add.reduceat(work, ry, axis=0), rx, axis=1
    ).astype(np.float64)
    ny = np.diff(np.append(ry, h)).astype(np.float64)
    nx = np.diff(np.append(rx, w)).astype(np.float64)
    counts = np.outer(ny, nx)
    if a.ndim == 3:
        counts = counts[..., None]
    return sums / counts

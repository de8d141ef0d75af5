"""Patch grid planning, extraction, labeling, sampling, and archives.

Windows tile the slide on a fixed stride, are kept when they hold enough
tissue, and are extracted at a canonical pixel pitch (``target_pixel_um``)
regardless of the scanner's native pitch: window geometry in base pixels is
``round(px * target_pixel_um / base_pixel_um)``, which for a 0.452 um pack
reduces to the nominal stride/size times ``2**level``. Non-tissue and pen
pixels are whitened so downstream features see tissue only.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image
from dataclasses import dataclass

from corepath.imageops import round_half_up
from corepath.slidepack import BinaryMask, ImagePyramid, LabelMask, ceil_div

__all__ = [
    "PatchGridConfig",
    "plan_patch_grid",
    "extract_patch",
    "label_patch",
    "balanced_epoch",
    "augment",
    "save_patch_archive",
    "load_patch_archive",
    "feature_cache_path",
]


@dataclass(frozen=True)
class PatchGridConfig:
    stride_px: int = 299
    patch_px: int = 598
    level: int = 1  # preferred read level as log2(downsample)
    min_tissue_frac: float = 0.5
    target_pixel_um: float = 0.904

    def __post_init__(self):
        if self.stride_px < 1 or self.patch_px < 1:
            raise ValueError("stride_px and patch_px must be >= 1")
        if not 0 <= self.min_tissue_frac <= 1:
            raise ValueError("min_tissue_frac must lie in [0, 1]")
        if self.target_pixel_um <= 0:
            raise ValueError("target_pixel_um must be positive")

    def scale(self, pixel_size_um: float) -> float:
        """Base pixels per output pixel."""
        if pixel_size_um <= 0:
            raise ValueError("pixel_size_um must be positive")
        return self.target_pixel_um / pixel_size_um

    def window_base_px(self, pixel_size_um: float) -> tuple[int, int]:
        """(side, stride) of the window in base pixels."""
        s = self.scale(pixel_size_um)
        return int(round_half_up(self.patch_px * s)), int(round_half_up(self.stride_px * s))


def plan_patch_grid(
    tissue: BinaryMask,
    cfg: PatchGridConfig,
    base_width: int,
    base_height: int,
    pixel_size_um: float,
) -> list[tuple[int, int]]:
    """Base-coordinate (x, y) offsets of windows fully inside the slide with
    a tissue fraction of at least ``min_tissue_frac``, in scanline order."""
    side, stride = cfg.window_base_px(pixel_size_um)
    ds = tissue.downsample
    data = tissue.data
    coords = []
    for y in range(0, base_height - side + 1, stride):
        y0, y1 = y // ds, min(ceil_div(y + side, ds), data.shape[0])
        for x in range(0, base_width - side + 1, stride):
            x0, x1 = x // ds, min(ceil_div(x + side, ds), data.shape[1])
            window = data[y0:y1, x0:x1]
            if window.size and float(window.mean()) >= cfg.min_tissue_frac:
                coords.append((x, y))
    return coords


def extract_patch(
    pyr: ImagePyramid,
    x: int,
    y: int,
    cfg: PatchGridConfig,
    tissue: BinaryMask | None = None,
    pen: BinaryMask | None = None,
) -> np.ndarray:
    """Extract one canonical patch_px x patch_px RGB patch at (x, y).

    Reads from the finest pyramid level no finer than needed (capped at
    2**cfg.level), resamples once with Lanczos when the pack's pitch differs
    from the target, and whitens non-tissue / pen pixels to (255,255,255).
    """
    side, _ = cfg.window_base_px(pyr.pixel_size_um)
    t = cfg.patch_px
    if x < 0 or y < 0 or x + side > pyr.width or y + side > pyr.height:
        raise ValueError(f"window out of bounds: ({x}, {y}, {side})")
    scale = cfg.scale(pyr.pixel_size_um)
    cap = min(scale, float(2**cfg.level))
    src = max(f for f in pyr.factors if f <= max(cap, 1.0))
    level = pyr.levels[src]
    x0, y0 = x // src, y // src
    x1 = min(ceil_div(x + side, src), level.shape[1])
    y1 = min(ceil_div(y + side, src), level.shape[0])
    crop = level[y0:y1, x0:x1]
    if crop.shape[:2] != (t, t):
        crop = np.asarray(
            Image.fromarray(crop, mode="RGB").resize((t, t), Image.LANCZOS),
            dtype=np.uint8,
        )
    else:
        crop = crop.copy()
    if tissue is not None:
        keep = _mask_lookup(tissue, x, y, side, t)
        if pen is not None:
            keep &= ~_mask_lookup(pen, x, y, side, t)
        crop[~keep] = 255
    elif pen is not None:
        crop[_mask_lookup(pen, x, y, side, t)] = 255
    return crop


def _mask_lookup(mask: BinaryMask, x: int, y: int, side: int, t: int) -> np.ndarray:
    """Sample a working-grid mask at the base coordinates of patch centers."""
    ds = mask.downsample
    bx = x + (np.arange(t, dtype=np.float64) + 0.5) * (side / t)
    by = y + (np.arange(t, dtype=np.float64) + 0.5) * (side / t)
    cx = np.clip((bx / ds).astype(np.int64), 0, mask.width - 1)
    cy = np.clip((by / ds).astype(np.int64), 0, mask.height - 1)
    return mask.data[np.ix_(cy, cx)]


def label_patch(
    labels: LabelMask,
    tissue: BinaryMask,
    x: int,
    y: int,
    side: int,
) -> int:
    """Majority label over the window's tissue pixels.

    Unknown (0) participates in the vote; ties break toward the more
    malignant label, with 255 ranking as the slide's highest coded grade
    (and above that grade itself on an exact tie).
    """
    if labels.downsample != tissue.downsample:
        raise ValueError("label and tissue masks must share a downsample")
    ds = labels.downsample
    y0, y1 = y // ds, min(ceil_div(y + side, ds), labels.data.shape[0])
    x0, x1 = x // ds, min(ceil_div(x + side, ds), labels.data.shape[1])
    window = labels.data[y0:y1, x0:x1]
    t_window = tissue.data[y0:y1, x0:x1]
    values = window[t_window]
    if values.size == 0:
        return 0
    counts = np.bincount(values.ravel(), minlength=256)
    top = counts.max()
    candidates = np.flatnonzero(counts == top)
    coded = [v for v in (3, 4, 5) if (labels.data == v).any()]
    mixed_rank = (max(coded) if coded else 2) + 0.5
    return int(max(candidates, key=lambda v: mixed_rank if v == 255 else float(v)))


def balanced_epoch(refs_by_class: dict, rng: np.random.Generator) -> list:
    """One class-balanced draw: every item of the rarest class plus an
    equal-sized uniform sample without replacement from each other class,
    shuffled. Successive calls on the same generator redraw independently."""
    classes = sorted(refs_by_class)
    if not classes:
        return []
    sizes = {c: len(refs_by_class[c]) for c in classes}
    if min(sizes.values()) == 0:
        raise ValueError("balanced_epoch requires non-empty classes")
    m = min(sizes.values())
    chosen = []
    for c in classes:
        refs = refs_by_class[c]
        if sizes[c] == m:
            chosen.extend(refs)
        else:
            idx = rng.choice(sizes[c], size=m, replace=False)
            chosen.extend(refs[i] for i in idx)
    order = rng.permutation(len(chosen))
    return [chosen[i] for i in order]


def augment(patch: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Uniform 0/90/180/270 rotation followed by a fair vertical flip."""
    k = int(rng.integers(0, 4))
    out = np.rot90(patch, k)
    if rng.random() < 0.5:
        out = out[::-1]
    return np.ascontiguousarray(out)


# -- per-slide archives ----------------------------------------------------


def save_patch_archive(
    out_dir: str | Path,
    slide_id: str,
    patches: np.ndarray | None,
    rows: list[dict],
    features: np.ndarray | None = None,
) -> Path:
    """Write a lossless pixel stack plus a JSONL index (and an optional
    feature matrix) for one slide. ``patches=None`` writes the index and
    features only."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if patches is not None:
        if len(patches) != len(rows):
            raise ValueError("pixel stack and index row counts differ")
        np.save(out_dir / f"{slide_id}.npy", np.asarray(patches, dtype=np.uint8))
    with open(out_dir / f"{slide_id}.jsonl", "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    if features is not None:
        np.save(feature_cache_path(out_dir, slide_id), np.asarray(features, dtype=np.float64))
    return out_dir / f"{slide_id}.jsonl"


def load_patch_archive(
    out_dir: str | Path, slide_id: str, pixels: bool = True
) -> tuple[np.ndarray | None, list[dict]]:
    out_dir = Path(out_dir)
    rows = [
        json.loads(line)
        for line in (out_dir / f"{slide_id}.jsonl").read_text().splitlines()
        if line
    ]
    stack = np.load(out_dir / f"{slide_id}.npy") if pixels else None
    return stack, rows


def feature_cache_path(out_dir: str | Path, slide_id: str) -> Path:
    return Path(out_dir) / f"{slide_id}.features.npy"

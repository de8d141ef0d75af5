"""SlidePack: a directory-based pyramidal slide format plus mask sidecars.

Layout::

    <pack>/meta.json          {"schema_version", "pixel_size_um", "width",
                               "height", "levels": [{"factor", "file"}, ...]}
    <pack>/level_<factor>.png 8-bit RGB raster per pyramid level

Masks are single-channel PNGs with a ``<stem>.mask.json`` sidecar recording
the kind ("binary" or "label") and the downsample they live at.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from corepath.imageops import box_reduce, round_half_up

SCHEMA_VERSION = 1
REQUIRED_FACTORS = (1, 16)
LABEL_VALUES = frozenset({0, 1, 2, 3, 4, 5, 255})


class SlidePackError(ValueError):
    """Malformed pack, mask, or read request."""


@dataclass
class ImagePyramid:
    """In-memory multi-level slide; levels keyed by integer downsample factor."""

    pixel_size_um: float
    levels: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    @property
    def width(self) -> int:
        return self.levels[1].shape[1]

    @property
    def height(self) -> int:
        return self.levels[1].shape[0]

    @property
    def factors(self) -> list[int]:
        return sorted(self.levels)

    def validate(self) -> None:
        if self.pixel_size_um <= 0:
            raise SlidePackError("pixel_size_um must be positive")
        if 1 not in self.levels:
            raise SlidePackError("base level required")
        base = self.levels[1]
        for factor, arr in self.levels.items():
            if int(factor) != factor or factor < 1:
                raise SlidePackError(f"invalid level factor {factor}")
            if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
                raise SlidePackError("levels must be 8-bit RGB arrays")
            want = (ceil_div(base.shape[0], factor), ceil_div(base.shape[1], factor))
            if arr.shape[:2] != want:
                raise SlidePackError(
                    f"level dimension mismatch at factor {factor}: "
                    f"{arr.shape[:2]} != {want}"
                )


@dataclass
class BinaryMask:
    data: np.ndarray  # (H, W) bool
    downsample: int

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=bool)
        if self.data.ndim != 2:
            raise SlidePackError("mask data must be 2-D")
        if self.downsample < 1:
            raise SlidePackError("downsample must be >= 1")

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass
class LabelMask:
    """Per-pixel annotation labels.

    0 unknown/background, 1 benign tissue, 2 cancer (not grade-coded),
    3/4/5 Gleason-pattern cancer, 255 mixed grade-coded overlap.
    """

    data: np.ndarray  # (H, W) uint8
    downsample: int

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.uint8)
        if self.data.ndim != 2:
            raise SlidePackError("mask data must be 2-D")
        if self.downsample < 1:
            raise SlidePackError("downsample must be >= 1")
        bad = set(np.unique(self.data)) - LABEL_VALUES
        if bad:
            raise SlidePackError(f"invalid label value {sorted(bad)}")

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def save_slidepack(pyr: ImagePyramid, path: str | Path) -> Path:
    pyr.validate()
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    levels_meta = []
    for factor in pyr.factors:
        fname = f"level_{factor}.png"
        # low deflate effort: level rasters are large and read-often
        Image.fromarray(pyr.levels[factor], mode="RGB").save(
            root / fname, compress_level=1
        )
        levels_meta.append({"factor": factor, "file": fname})
    meta = {
        "schema_version": SCHEMA_VERSION,
        "pixel_size_um": pyr.pixel_size_um,
        "width": pyr.width,
        "height": pyr.height,
        "levels": levels_meta,
    }
    (root / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")
    return root


def load_slidepack(path: str | Path) -> ImagePyramid:
    root = Path(path)
    meta_path = root / "meta.json"
    if not meta_path.is_file():
        raise SlidePackError(f"missing slide descriptor: {meta_path}")
    meta = json.loads(meta_path.read_text())
    if meta.get("schema_version") != SCHEMA_VERSION:
        raise SlidePackError(f"unsupported schema_version {meta.get('schema_version')}")
    levels: dict[int, np.ndarray] = {}
    factors = [entry["factor"] for entry in meta.get("levels", [])]
    if sorted(factors) != sorted(set(factors)):
        raise SlidePackError("duplicate level factors")
    for entry in meta["levels"]:
        img = Image.open(root / entry["file"])
        if img.mode != "RGB":
            raise SlidePackError(f"unsupported bit depth or mode: {img.mode}")
        levels[int(entry["factor"])] = np.asarray(img, dtype=np.uint8)
    for factor in REQUIRED_FACTORS:
        if factor not in levels:
            raise SlidePackError(f"required level missing: {factor}")
    pyr = ImagePyramid(pixel_size_um=float(meta["pixel_size_um"]), levels=levels)
    if pyr.width != meta["width"] or pyr.height != meta["height"]:
        raise SlidePackError("level dimension mismatch against descriptor")
    return pyr


def load_meta(path: str | Path) -> dict:
    """Read and validate just the pack descriptor."""
    meta_path = Path(path) / "meta.json"
    if not meta_path.is_file():
        raise SlidePackError(f"missing slide descriptor: {meta_path}")
    meta = json.loads(meta_path.read_text())
    if meta.get("schema_version") != SCHEMA_VERSION:
        raise SlidePackError(f"unsupported schema_version {meta.get('schema_version')}")
    return meta


def read_level(path: str | Path, factor: int) -> tuple[np.ndarray, dict]:
    """Decode a single stored level without touching the rest of the pack."""
    root = Path(path)
    meta = load_meta(root)
    for entry in meta["levels"]:
        if int(entry["factor"]) == factor:
            img = Image.open(root / entry["file"])
            if img.mode != "RGB":
                raise SlidePackError(f"unsupported bit depth or mode: {img.mode}")
            return np.asarray(img, dtype=np.uint8), meta
    raise SlidePackError(f"required level missing: {factor}")


def read_region(
    pyr: ImagePyramid,
    downsample: int,
    rect: tuple[int, int, int, int] | None = None,
) -> np.ndarray:
    """Read a base-coordinate rect (x, y, w, h) at the requested downsample.

    Uses the exact pyramid level when present, otherwise the nearest finer
    level followed by a Lanczos resample. Output dims are
    ceil(w / downsample) x ceil(h / downsample).
    """
    if int(downsample) != downsample or downsample < 1:
        raise SlidePackError(f"invalid downsample {downsample}")
    downsample = int(downsample)
    if rect is None:
        rect = (0, 0, pyr.width, pyr.height)
    x, y, w, h = (int(v) for v in rect)
    if w <= 0 or h <= 0 or x < 0 or y < 0 or x + w > pyr.width or y + h > pyr.height:
        raise SlidePackError(f"region out of bounds: {rect}")
    finer = [f for f in pyr.factors if f <= downsample]
    src_factor = max(finer)
    level = pyr.levels[src_factor]
    out_w = ceil_div(w, downsample)
    out_h = ceil_div(h, downsample)
    x0 = x // src_factor
    y0 = y // src_factor
    x1 = min(ceil_div(x + w, src_factor), level.shape[1])
    y1 = min(ceil_div(y + h, src_factor), level.shape[0])
    crop = level[y0:y1, x0:x1]
    if src_factor == downsample and crop.shape[:2] == (out_h, out_w):
        return crop.copy()
    img = Image.fromarray(crop, mode="RGB").resize((out_w, out_h), Image.LANCZOS)
    return np.asarray(img, dtype=np.uint8)


def build_pyramid(
    base: np.ndarray, pixel_size_um: float, factors: tuple[int, ...] = REQUIRED_FACTORS
) -> ImagePyramid:
    """Assemble a pyramid from a base raster via block-mean reduction."""
    base = np.asarray(base, dtype=np.uint8)
    levels = {}
    for factor in sorted(set(factors) | {1}):
        if factor == 1:
            levels[1] = base
        else:
            reduced = round_half_up(box_reduce(base.astype(np.float64), factor))
            levels[factor] = np.clip(reduced, 0, 255).astype(np.uint8)
    return ImagePyramid(pixel_size_um=pixel_size_um, levels=levels)


def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(".mask.json")


def save_mask(mask: BinaryMask | LabelMask, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(mask, BinaryMask):
        kind = "binary"
        arr = np.where(mask.data, 255, 0).astype(np.uint8)
    elif isinstance(mask, LabelMask):
        kind = "label"
        arr = mask.data
    else:
        raise SlidePackError(f"unsupported mask type {type(mask).__name__}")
    Image.fromarray(arr, mode="L").save(path)
    sidecar = {"kind": kind, "downsample": mask.downsample}
    _sidecar_path(path).write_text(json.dumps(sidecar, sort_keys=True) + "\n")
    return path


def load_mask(path: str | Path) -> BinaryMask | LabelMask:
    path = Path(path)
    sidecar_path = _sidecar_path(path)
    if not sidecar_path.is_file():
        raise SlidePackError(f"missing mask sidecar: {sidecar_path}")
    sidecar = json.loads(sidecar_path.read_text())
    img = Image.open(path)
    if img.mode != "L":
        raise SlidePackError(f"unsupported mask mode: {img.mode}")
    arr = np.asarray(img, dtype=np.uint8)
    kind = sidecar.get("kind")
    downsample = int(sidecar.get("downsample", 0))
    if kind == "binary":
        return BinaryMask(data=arr > 0, downsample=downsample)
    if kind == "label":
        return LabelMask(data=arr, downsample=downsample)
    raise SlidePackError(f"unknown mask kind: {kind}")

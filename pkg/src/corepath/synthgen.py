"""Synthetic biopsy slides with exact ground truth.

Each slide renders one elongated tissue core (a stadium shape, optionally
rotated) on a white canvas at a configurable base pixel size, with
procedural textures per Gleason pattern:

- benign: sparse large glands (wide bright lumens in thick purple rings),
- pattern 3: dense small well-separated glands,
- pattern 4: fused glandular blobs with several small lumens each,
- pattern 5: solid darker sheets peppered with bare nuclei, no lumens.

A pen stroke runs parallel to the core under each annotated span, offset a
few hundred micrometers from the edge, colored by pattern when grade-coded
ink is requested. Truth (tissue / pen / label masks at the working
downsample, cancer length, ISUP grade) is computed analytically from the
same geometry that drives the renderer.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from corepath.slidepack import (
    BinaryMask,
    ImagePyramid,
    LabelMask,
    build_pyramid,
    save_mask,
    save_slidepack,
)

__all__ = [
    "SynthSpec",
    "SynthTruth",
    "DatasetConfig",
    "ISUP_PATTERNS",
    "generate_slide",
    "core_geometry",
    "generate_dataset",
    "split_by_man",
]

ISUP_PATTERNS = {1: (3, 3), 2: (3, 4), 3: (4, 3), 4: (4, 4), 5: (5, 5)}

PATTERN_INK = {3: (0, 200, 60), 4: (0, 100, 200), 5: (20, 20, 20)}
PLAIN_INK = (30, 30, 30)

_STROMA = (233, 205, 223)
_RING = (95, 62, 138)
_LUMEN = (246, 243, 248)
_BLOB = (110, 75, 150)
_SHEET = (205, 160, 195)
_NUCLEUS = (70, 45, 110)

_WORK_DS = 16
_STROKE_GAP_UM = 120.0  # along-axis gap between grade-coded strokes
_STROKE_END_TRIM_UM = 50.0  # strokes stop short of the span ends


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for one synthetic slide; rendering is a pure function of it."""

    slide_id: str
    seed: int
    grade: int  # 0 benign, 1..5 ISUP
    core_length_mm: float = 15.0
    core_width_mm: float = 1.0
    cancer_span: tuple[float, float] | None = None  # fractions of core length
    secondary_fraction: float = 0.0
    rotation_deg: float = 0.0
    pixel_size_um: float = 0.904
    grade_coded: bool = True
    pen_gap_um: float = 200.0
    pen_width_um: float = 600.0
    margin_um: float = 100.0

    def __post_init__(self):
        if self.grade not in (0, 1, 2, 3, 4, 5):
            raise ValueError("grade must be 0 (benign) or ISUP 1..5")
        if self.grade > 0:
            if self.cancer_span is None:
                raise ValueError("malignant slides need a cancer_span")
            a, b = self.cancer_span
            if not 0 <= a < b <= 1:
                raise ValueError("cancer_span must satisfy 0 <= a < b <= 1")
        if not 0 <= self.secondary_fraction < 1:
            raise ValueError("secondary_fraction must lie in [0, 1)")

    @property
    def patterns(self) -> tuple[int, ...]:
        if self.grade == 0:
            return ()
        primary, secondary = ISUP_PATTERNS[self.grade]
        if self.secondary_fraction <= 0 or primary == secondary:
            return (primary,)
        return (primary, secondary)

    @property
    def cancer_length_mm(self) -> float:
        if self.grade == 0 or self.cancer_span is None:
            return 0.0
        a, b = self.cancer_span
        return (b - a) * self.core_length_mm


@dataclass
class SynthTruth:
    """Exact per-slide ground truth at the working downsample."""

    label_mask: LabelMask
    tissue_mask: BinaryMask
    pen_mask: BinaryMask
    cancer_length_mm: float
    isup: int
    patterns: tuple[int, ...]


class _Frame:
    """Core placement in base pixels: centerline, canvas size, span layout."""

    def __init__(self, spec: SynthSpec):
        px = spec.pixel_size_um
        self.length = spec.core_length_mm * 1000.0 / px
        self.half_width = spec.core_width_mm * 1000.0 / px / 2.0
        self.seg_half = max(self.length / 2.0 - self.half_width, 1.0)
        phi = math.radians(spec.rotation_deg)
        self.u = np.array([math.cos(phi), math.sin(phi)])
        self.n = np.array([-math.sin(phi), math.cos(phi)])
        gap = spec.pen_gap_um / px
        pen_w = spec.pen_width_um / px
        self.pen_half = pen_w / 2.0
        self.pen_offset = self.half_width + gap + self.pen_half
        margin = spec.margin_um / px

        core_pts = []
        pen_pts = []
        for s in (-self.length / 2.0, self.length / 2.0):
            p = s * self.u
            # scalar offset shifts both axes: bounding box of the cap circle
            core_pts.append(p - self.half_width)
            core_pts.append(p + self.half_width)
            # strokes are square-ended rectangles, so exact corners suffice
            for off in (self.pen_offset - self.pen_half, self.pen_offset + self.pen_half):
                pen_pts.append(p + off * self.n)
        corners = np.asarray(core_pts + pen_pts)
        lo = corners.min(axis=0) - margin
        hi = corners.max(axis=0) + margin
        self.center = -lo
        self.width = int(math.ceil(hi[0] - lo[0]))
        self.height = int(math.ceil(hi[1] - lo[1]))
        self._core_rows = self._row_band(core_pts)
        self._pen_rows = self._row_band(pen_pts)

    def _row_band(self, pts: list[np.ndarray]) -> tuple[int, int]:
        """Clipped canvas row range covering the given shape corners."""
        ys = [p[1] + self.center[1] for p in pts]
        y0 = max(int(math.floor(min(ys))) - 1, 0)
        y1 = min(int(math.ceil(max(ys))) + 2, self.height)
        return y0, y1

    def axial(self, xs: np.ndarray, ys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(s, d) coordinates of canvas points relative to the centerline."""
        # python-float scalars keep float32 grids in float32
        dx = xs - float(self.center[0])
        dy = ys - float(self.center[1])
        s = dx * float(self.u[0]) + dy * float(self.u[1])
        d = dx * float(self.n[0]) + dy * float(self.n[1])
        return s, d

    def to_canvas(self, s, d) -> tuple[np.ndarray, np.ndarray]:
        x = self.center[0] + s * self.u[0] + d * self.n[0]
        y = self.center[1] + s * self.u[1] + d * self.n[1]
        return x, y

    def core_dist(self, s: np.ndarray, d: np.ndarray) -> np.ndarray:
        over = np.maximum(np.abs(s) - self.seg_half, 0.0)
        return np.hypot(over, d)

    def span_s(self, spec: SynthSpec) -> tuple[float, float]:
        a, b = spec.cancer_span
        return (a - 0.5) * self.length, (b - 0.5) * self.length

    def pattern_spans(self, spec: SynthSpec) -> list[tuple[float, float, int]]:
        """(s0, s1, pattern) sub-spans; the secondary pattern occupies the
        trailing fraction of the annotated span."""
        if spec.grade == 0:
            return []
        s0, s1 = self.span_s(spec)
        patterns = spec.patterns
        if len(patterns) == 1:
            return [(s0, s1, patterns[0])]
        mid = s0 + (1.0 - spec.secondary_fraction) * (s1 - s0)
        return [(s0, mid, patterns[0]), (mid, s1, patterns[1])]

    def stroke_spans(self, spec: SynthSpec) -> list[tuple[float, float, int]]:
        """Pen stroke extents: one stroke per pattern sub-span, separated by
        a small gap so strokes stay distinct components; ends pull in
        slightly to offset the outward flare of boundary-pair projection."""
        spans = self.pattern_spans(spec)
        trim = _STROKE_END_TRIM_UM / spec.pixel_size_um
        if len(spans) == 0:
            return spans
        if len(spans) == 1:
            s0, s1, p = spans[0]
            return [(s0 + trim, s1 - trim, p)]
        half_gap = _STROKE_GAP_UM / spec.pixel_size_um / 2.0
        (a0, a1, pa), (b0, b1, pb) = spans
        return [(a0 + trim, a1 - half_gap, pa), (b0 + half_gap, b1 - trim, pb)]


def _stroke_mask(s, d, s0, s1, offset, half_width):
    """Square-ended stroke along the core axis at the given normal offset.

    Square ends keep adjacent strokes of a mixed annotation from touching
    and keep the marked extent equal to the annotated span.
    """
    return (s >= s0) & (s <= s1) & (np.abs(d - offset) <= half_width)


def core_geometry(spec: SynthSpec) -> SynthTruth:
    """Analytic truth masks at the working downsample, no texture pass."""
    frame = _Frame(spec)
    h = -(-frame.height // _WORK_DS)
    w = -(-frame.width // _WORK_DS)
    xs = (np.arange(w, dtype=np.float64) * _WORK_DS + (_WORK_DS - 1) / 2.0)[None, :]
    ys = (np.arange(h, dtype=np.float64) * _WORK_DS + (_WORK_DS - 1) / 2.0)[:, None]
    s, d = frame.axial(xs, ys)
    tissue = frame.core_dist(s, d) <= frame.half_width

    labels = np.zeros((h, w), dtype=np.uint8)
    pen = np.zeros((h, w), dtype=bool)
    if spec.grade == 0:
        labels[tissue] = 1
    else:
        labels[tissue] = 1
        for s0, s1, pattern in frame.pattern_spans(spec):
            region = tissue & (s >= s0) & (s < s1)
            labels[region] = pattern if spec.grade_coded else 2
        for s0, s1, _pattern in frame.stroke_spans(spec):
            pen |= _stroke_mask(s, d, s0, s1, frame.pen_offset, frame.pen_half)
    return SynthTruth(
        label_mask=LabelMask(data=labels, downsample=_WORK_DS),
        tissue_mask=BinaryMask(data=tissue, downsample=_WORK_DS),
        pen_mask=BinaryMask(data=pen, downsample=_WORK_DS),
        cancer_length_mm=spec.cancer_length_mm,
        isup=spec.grade,
        patterns=spec.patterns,
    )


def generate_slide(spec: SynthSpec) -> tuple[ImagePyramid, SynthTruth]:
    """Render one slide (levels 1 and 16) plus its analytic truth."""
    frame = _Frame(spec)
    rng = np.random.default_rng(spec.seed)
    base = _render_base(spec, frame, rng)
    pyr = build_pyramid(base, spec.pixel_size_um, (1, _WORK_DS))
    return pyr, core_geometry(spec)


def _texture_field(rng: np.random.Generator, h: int, w: int, grain: int, amp: int) -> np.ndarray:
    """Blocky stain-density modulation that survives block-mean downsampling.

    Darkening only (values in [-2*amp, 0]) so bright structures such as
    lumens stay unambiguous; equal across channels so hue is preserved.
    The per-block response keeps the working-scale texture statistics of
    tissue in one continuum with gland edges, which is what the response
    thresholding stage expects of real slides.
    """
    ch = -(-h // grain)
    cw = -(-w // grain)
    cells = rng.integers(-2 * amp, 1, size=(ch, cw, 1), dtype=np.int16)
    cells = np.repeat(cells, 3, axis=2)
    return np.repeat(np.repeat(cells, grain, axis=0), grain, axis=1)[:h, :w]


def _render_base(spec: SynthSpec, frame: _Frame, rng: np.random.Generator) -> np.ndarray:
    h, w = frame.height, frame.width
    canvas = np.full((h, w, 3), 255, dtype=np.uint8)
    field = _texture_field(rng, h, w, grain=16, amp=24)

    # per-pixel work stays inside the rows the stadium can reach
    cy0, cy1 = frame._core_rows
    xs = np.arange(w, dtype=np.float32)[None, :]
    ys = np.arange(cy0, cy1, dtype=np.float32)[:, None]
    s, d = frame.axial(xs, ys)
    core = frame.core_dist(s, d) <= frame.half_width
    band = canvas[cy0:cy1]
    band_field = field[cy0:cy1]

    n_core = int(core.sum())
    stroma = np.asarray(_STROMA, dtype=np.int16)
    band[core] = np.clip(
        stroma
        + band_field[core]
        + rng.integers(-10, 11, size=(n_core, 3), dtype=np.int16),
        0,
        255,
    ).astype(np.uint8)

    spans = frame.pattern_spans(spec)
    for s0, s1, pattern in spans:
        if pattern == 5:
            region = core & (s >= s0) & (s < s1)
            n_px = int(region.sum())
            sheet = np.asarray(_SHEET, dtype=np.int16)
            band[region] = np.clip(
                sheet
                + band_field[region]
                + rng.integers(-8, 9, size=(n_px, 3), dtype=np.int16),
                0,
                255,
            ).astype(np.uint8)

    benign_blocked = [(s0, s1) for s0, s1, _ in spans]
    _stamp_benign(canvas, frame, rng, benign_blocked)
    for s0, s1, pattern in spans:
        if pattern == 3:
            _stamp_g3(canvas, frame, rng, s0, s1)
        elif pattern == 4:
            _stamp_g4(canvas, frame, rng, s0, s1)
        elif pattern == 5:
            _stamp_g5(canvas, frame, rng, s0, s1)

    stroke_spans = frame.stroke_spans(spec)
    if stroke_spans:
        py0, py1 = frame._pen_rows
        pys = np.arange(py0, py1, dtype=np.float32)[:, None]
        ps, pd = frame.axial(xs, pys)
        in_band = np.abs(pd - frame.pen_offset) <= frame.pen_half
        pen_band = canvas[py0:py1]
        for s0, s1, pattern in stroke_spans:
            ink = PATTERN_INK[pattern] if spec.grade_coded else PLAIN_INK
            pen_band[in_band & (ps >= s0) & (ps <= s1)] = ink
    return canvas


def _gland_centers(frame, rng, s0, s1, cell, inset):
    """Jittered grid of gland centers in core coordinates, kept away from
    the core edge by ``inset`` pixels."""
    s_lo = max(s0, -frame.seg_half - frame.half_width) + inset
    s_hi = min(s1, frame.seg_half + frame.half_width) - inset
    d_hi = frame.half_width - inset
    if s_hi <= s_lo or d_hi <= -d_hi:
        return np.empty((0, 2))
    s_grid = np.arange(s_lo, s_hi, cell)
    d_grid = np.arange(-d_hi, d_hi, cell)
    if len(s_grid) == 0 or len(d_grid) == 0:
        return np.empty((0, 2))
    ss, dd = np.meshgrid(s_grid, d_grid)
    jitter = rng.uniform(-cell * 0.4, cell * 0.4, size=(ss.size, 2))
    pts = np.column_stack([ss.ravel(), dd.ravel()]) + jitter
    pts = pts[(pts[:, 0] >= s_lo) & (pts[:, 0] <= s_hi) & (np.abs(pts[:, 1]) <= d_hi)]
    # keep centers inside the stadium, not just the bounding band
    over = np.maximum(np.abs(pts[:, 0]) - frame.seg_half, 0.0)
    keep = np.hypot(over, pts[:, 1]) <= frame.half_width - inset
    return pts[keep]


def _paint_disk(canvas, cx, cy, r_in, r_out, color, rng):
    """Paint an annulus (or full disk when r_in <= 0) with mild noise."""
    h, w = canvas.shape[:2]
    r = int(math.ceil(r_out))
    x0, x1 = int(cx) - r, int(cx) + r + 1
    y0, y1 = int(cy) - r, int(cy) + r + 1
    if x0 < 0 or y0 < 0 or x1 > w or y1 > h:
        return
    yy, xx = np.ogrid[y0:y1, x0:x1]
    dist2 = (xx - cx) ** 2 + (yy - cy) ** 2
    sel = dist2 <= r_out * r_out
    if r_in > 0:
        sel &= dist2 >= r_in * r_in
    n = int(sel.sum())
    if n == 0:
        return
    col = np.asarray(color, dtype=np.int16)
    patch = canvas[y0:y1, x0:x1]
    patch[sel] = np.clip(
        col + rng.integers(-6, 7, size=(n, 3), dtype=np.int16), 0, 255
    ).astype(np.uint8)


def _stamp_benign(canvas, frame, rng, blocked):
    centers = _gland_centers(frame, rng, -frame.length / 2, frame.length / 2, 170.0, 60.0)
    for sc, dc in centers:
        if any(s0 - 40 <= sc <= s1 + 40 for s0, s1 in blocked):
            continue
        r_out = rng.uniform(38.0, 55.0)
        r_in = r_out - rng.uniform(8.0, 12.0)
        cx, cy = frame.to_canvas(sc, dc)
        _paint_disk(canvas, cx, cy, 0.0, r_in, _LUMEN, rng)
        _paint_disk(canvas, cx, cy, r_in, r_out, _RING, rng)


def _stamp_g3(canvas, frame, rng, s0, s1):
    for sc, dc in _gland_centers(frame, rng, s0, s1, 52.0, 22.0):
        r_out = rng.uniform(13.0, 19.0)
        r_in = r_out - rng.uniform(4.0, 6.0)
        cx, cy = frame.to_canvas(sc, dc)
        _paint_disk(canvas, cx, cy, 0.0, r_in, _LUMEN, rng)
        _paint_disk(canvas, cx, cy, r_in, r_out, _RING, rng)


def _stamp_g4(canvas, frame, rng, s0, s1):
    # fused morphology: rings overlapping within each cluster
    for sc, dc in _gland_centers(frame, rng, s0, s1, 120.0, 58.0):
        cx, cy = frame.to_canvas(sc, dc)
        for _ in range(int(rng.integers(3, 6))):
            ang = rng.uniform(0, 2 * math.pi)
            rad = rng.uniform(0, 22.0)
            gx = cx + rad * math.cos(ang)
            gy = cy + rad * math.sin(ang)
            r_out = rng.uniform(18.0, 26.0)
            r_in = rng.uniform(5.0, 8.0)
            _paint_disk(canvas, gx, gy, 0.0, r_in, _LUMEN, rng)
            _paint_disk(canvas, gx, gy, r_in, r_out, _BLOB, rng)


def _stamp_g5(canvas, frame, rng, s0, s1):
    centers = _gland_centers(frame, rng, s0, s1, 11.0, 6.0)
    if len(centers) == 0:
        return
    radii = rng.uniform(2.2, 3.8, size=len(centers))
    xs, ys = frame.to_canvas(centers[:, 0], centers[:, 1])
    h, w = canvas.shape[:2]
    col = np.asarray(_NUCLEUS, dtype=np.uint8)
    r_max = 4
    for dy in range(-r_max, r_max + 1):
        for dx in range(-r_max, r_max + 1):
            rr = math.hypot(dx, dy)
            hit = rr <= radii
            if not hit.any():
                continue
            px = (xs[hit] + dx).astype(np.int64)
            py = (ys[hit] + dy).astype(np.int64)
            ok = (px >= 0) & (py >= 0) & (px < w) & (py < h)
            canvas[py[ok], px[ok]] = col


# -- datasets ----------------------------------------------------------------


@dataclass(frozen=True)
class DatasetConfig:
    """Recipe for a reproducible multi-slide dataset grouped into men."""

    counts: dict[int, int] = field(
        default_factory=lambda: {0: 8, 1: 2, 2: 2, 3: 2, 4: 2, 5: 4}
    )
    seed: int = 0
    cores_per_man: tuple[int, int] = (10, 12)
    core_length_mm: tuple[float, float] = (2.6, 4.2)
    core_width_mm: float = 0.75
    rotation_deg: tuple[float, float] = (-3.0, 3.0)
    grade_coded: bool = True
    pixel_size_um: float = 0.904


def build_specs(config: DatasetConfig) -> list[dict]:
    """Deterministic slide specs plus man assignments for a dataset.

    Returns manifest-style dicts carrying a SynthSpec each. Mixed-grade
    spans are long enough that each pattern's stroke passes the pen width
    and area filters.
    """
    rng = np.random.default_rng(config.seed)
    entries = []
    for grade in sorted(config.counts):
        for _ in range(int(config.counts[grade])):
            length = float(rng.uniform(*config.core_length_mm))
            rotation = float(rng.uniform(*config.rotation_deg))
            secondary = 0.0
            span = None
            if grade > 0:
                mixed = len(set(ISUP_PATTERNS[grade])) > 1
                if mixed:
                    span_frac = float(rng.uniform(0.72, 0.9))
                    secondary = float(rng.uniform(0.34, 0.45))
                else:
                    span_frac = float(rng.uniform(0.3, 0.85))
                lo = 0.05
                hi = 0.95 - span_frac
                start = float(rng.uniform(lo, max(hi, lo + 1e-6)))
                span = (start, start + span_frac)
            entries.append(
                {
                    "grade": grade,
                    "core_length_mm": length,
                    "rotation_deg": rotation,
                    "cancer_span": span,
                    "secondary_fraction": secondary,
                    "seed": int(rng.integers(0, 2**31 - 1)),
                }
            )
    order = rng.permutation(len(entries))
    entries = [entries[i] for i in order]

    manifest = []
    man_idx = 0
    cursor = 0
    while cursor < len(entries):
        take = int(rng.integers(config.cores_per_man[0], config.cores_per_man[1] + 1))
        for entry in entries[cursor : cursor + take]:
            entry["man_id"] = f"m{man_idx:03d}"
        cursor += take
        man_idx += 1
    for i, entry in enumerate(entries):
        entry["slide_id"] = f"s{i:04d}"
        spec = SynthSpec(
            slide_id=entry["slide_id"],
            seed=entry["seed"],
            grade=entry["grade"],
            core_length_mm=entry["core_length_mm"],
            core_width_mm=config.core_width_mm,
            cancer_span=entry["cancer_span"],
            secondary_fraction=entry["secondary_fraction"],
            rotation_deg=entry["rotation_deg"],
            pixel_size_um=config.pixel_size_um,
            grade_coded=config.grade_coded,
        )
        entry["spec"] = spec
        manifest.append(entry)
    return manifest


def generate_dataset(out_dir: str | Path, config: DatasetConfig) -> dict:
    """Write slides, truth masks, truth.jsonl, and manifest.json."""
    out_dir = Path(out_dir)
    slides_dir = out_dir / "slides"
    truth_dir = out_dir / "truth"
    rows = []
    for entry in build_specs(config):
        spec: SynthSpec = entry["spec"]
        pyr, truth = generate_slide(spec)
        pack_path = slides_dir / spec.slide_id
        save_slidepack(pyr, pack_path)
        save_mask(truth.label_mask, truth_dir / f"{spec.slide_id}.png")
        rows.append(
            {
                "slide_id": spec.slide_id,
                "man_id": entry["man_id"],
                "grade": spec.grade,
                "patterns": list(spec.patterns),
                "length_mm": round(truth.cancer_length_mm, 6),
                "path": str(Path("slides") / spec.slide_id),
                "seed": spec.seed,
            }
        )
    manifest = {
        "schema_version": 1,
        "seed": config.seed,
        "pixel_size_um": config.pixel_size_um,
        "slides": rows,
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=1) + "\n"
    )
    with open(out_dir / "truth.jsonl", "w") as fh:
        for row in rows:
            fh.write(
                json.dumps(
                    {
                        "slide_id": row["slide_id"],
                        "man_id": row["man_id"],
                        "label": int(row["grade"] > 0),
                        "grade": row["grade"],
                        "length_mm": row["length_mm"],
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    return manifest


def split_by_man(manifest: dict, test_fraction: float, seed: int = 0) -> tuple[list[str], list[str]]:
    """Man-level train/test split: every core of a man lands on one side."""
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    slides = manifest["slides"]
    men: dict[str, list[str]] = {}
    for row in slides:
        men.setdefault(row["man_id"], []).append(row["slide_id"])
    man_ids = sorted(men)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(man_ids))
    target = test_fraction * len(slides)
    test_ids: list[str] = []
    for idx in order:
        if len(test_ids) >= target:
            break
        test_ids.extend(men[man_ids[idx]])
    test_set = set(test_ids)
    train_ids = [row["slide_id"] for row in slides if row["slide_id"] not in test_set]
    return sorted(train_ids), sorted(test_ids)

"""Patch-level classification: handcrafted features + boosted-tree ensemble.

The classifier interface is pluggable: anything exposing
``predict_proba(features) -> (n, c)`` over the canonical feature vector (or
``classify(patch)`` over raw pixels) can stand in. The reference
implementation extracts 42 handcrafted features per patch and trains one
gradient-boosted model per ensemble member on independent class-balanced
draws of the training set.

Stages and class orders:

- ``detection``: classes (1, 2) = (benign, malignant)
- ``grading``:   classes (1, 3, 4, 5) = (benign, pattern 3, 4, 5)
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from corepath.gbt import GradientBoostedTrees
from corepath.imageops import box_reduce, connected_components, otsu_threshold, rgb_to_hue, to_grayscale
from corepath.patches import balanced_epoch

__all__ = [
    "FEATURE_NAMES",
    "extract_patch_features",
    "PatchClassifier",
    "assemble_stage_classes",
    "train_patch_ensemble",
    "predict_prob_matrix",
    "ProbMatrix",
    "write_prob_matrices",
    "read_prob_matrices",
]

STAGE_CLASSES = {"detection": (1, 2), "grading": (1, 3, 4, 5)}

FEATURE_VERSION = 1

_WORK_SIZE = 150  # features are defined on a Lanczos reduction to this size
_WHITE_MIN = 250  # whitened (non-tissue) pixels have every channel >= this
_LUMEN_MIN = 220  # luminance above this inside tissue counts as lumen
_GLCM_LEVELS = 16
_BLOB_FACTORS = (1, 2, 4)
_PERCENTILES = (5, 25, 50, 75, 95)

FEATURE_NAMES = (
    ["mean_r", "mean_g", "mean_b", "std_r", "std_g", "std_b"]
    + [f"hue_hist_{i}" for i in range(8)]
    + ["grad_mean", "grad_std", "tissue_frac"]
    + [
        f"blob_{stat}_x{f}"
        for f in _BLOB_FACTORS
        for stat in ("count", "area_mean", "area_std")
    ]
    + ["glcm_contrast_h", "glcm_homogeneity_h", "glcm_contrast_v", "glcm_homogeneity_v"]
    + [f"lum_p{p}" for p in _PERCENTILES]
    + [
        "lumen_tissue_frac",
        "lumen_count",
        "lumen_area_mean",
        "lumen_area_std",
        "lumen_area_max",
        "lumen_mean_lum",
        "lumen_patch_frac",
    ]
)


def extract_patch_features(patch: np.ndarray) -> np.ndarray:
    """42-dimensional handcrafted descriptor of one RGB patch.

    Channel statistics, a hue histogram over tissue, gradient energy,
    tissue fraction, dark-blob statistics at three scales, co-occurrence
    texture, luminance percentiles, and bright-lumen statistics. Computed
    on a fixed 150x150 Lanczos reduction of the patch.
    """
    arr = np.asarray(patch)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) patch, got {arr.shape}")
    if arr.shape[:2] != (_WORK_SIZE, _WORK_SIZE):
        arr = np.asarray(
            Image.fromarray(arr.astype(np.uint8), mode="RGB").resize(
                (_WORK_SIZE, _WORK_SIZE), Image.LANCZOS
            )
        )
    rgb = arr.astype(np.float64)
    out = []

    out.extend(rgb[..., c].mean() for c in range(3))
    out.extend(rgb[..., c].std() for c in range(3))

    tissue = ~np.all(rgb >= _WHITE_MIN, axis=2)
    hue = rgb_to_hue(rgb)
    if tissue.any():
        hist, _ = np.histogram(hue[tissue], bins=8, range=(0.0, 1.0))
        out.extend(hist / hist.sum())
    else:
        out.extend([0.0] * 8)

    lum = to_grayscale(rgb)
    gy, gx = np.gradient(lum)
    mag = np.hypot(gx, gy)
    out.extend([mag.mean(), mag.std()])
    out.append(float(tissue.mean()))

    for factor in _BLOB_FACTORS:
        reduced = box_reduce(lum, factor)
        out.extend(_blob_stats(_dark_mask(reduced)))

    q = np.clip((lum / (256 // _GLCM_LEVELS)).astype(np.int64), 0, _GLCM_LEVELS - 1)
    out.extend(_cooccurrence(q[:, :-1], q[:, 1:]))
    out.extend(_cooccurrence(q[:-1, :], q[1:, :]))

    out.extend(np.percentile(lum, _PERCENTILES))

    lumen = (lum > _LUMEN_MIN) & tissue
    n_tissue = int(tissue.sum())
    out.append(float(lumen.sum() / n_tissue) if n_tissue else 0.0)
    count, mean_a, std_a, max_a = _blob_stats(lumen, with_max=True)
    out.extend([count, mean_a, std_a, max_a])
    out.append(float(lum[lumen].mean()) if lumen.any() else 0.0)
    out.append(float(lumen.mean()))

    vec = np.asarray(out, dtype=np.float64)
    if vec.shape != (len(FEATURE_NAMES),):
        raise AssertionError(f"feature vector length {vec.shape}")
    return vec


def _dark_mask(lum: np.ndarray) -> np.ndarray:
    try:
        thr = otsu_threshold(lum)
    except ValueError:
        return np.zeros(lum.shape, dtype=bool)
    return lum <= thr


def _blob_stats(mask: np.ndarray, with_max: bool = False):
    labels, count = connected_components(mask)
    if count == 0:
        return (0.0, 0.0, 0.0, 0.0) if with_max else (0.0, 0.0, 0.0)
    areas = np.bincount(labels.ravel())[1:].astype(np.float64)
    stats = (float(count), float(areas.mean()), float(areas.std()))
    return stats + (float(areas.max()),) if with_max else stats


def _cooccurrence(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    pairs = np.bincount(
        (a.ravel() * _GLCM_LEVELS + b.ravel()), minlength=_GLCM_LEVELS * _GLCM_LEVELS
    ).astype(np.float64)
    p = pairs / pairs.sum()
    i, j = np.divmod(np.arange(_GLCM_LEVELS * _GLCM_LEVELS), _GLCM_LEVELS)
    d = np.abs(i - j).astype(np.float64)
    contrast = float((p * d * d).sum())
    homogeneity = float((p / (1.0 + d)).sum())
    return contrast, homogeneity


@dataclass
class PatchClassifier:
    """One ensemble member: a trained model plus its stage metadata."""

    stage: str
    classes: tuple[int, ...]
    model: GradientBoostedTrees
    feature_version: int = FEATURE_VERSION

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        probs = self.model.predict_proba(features)
        if probs.shape[1] != len(self.classes):
            raise ValueError("model class count does not match stage classes")
        return probs

    def classify(self, patch: np.ndarray) -> np.ndarray:
        return self.predict_proba(extract_patch_features(patch)[None, :])[0]

    def to_obj(self) -> dict:
        return {
            "stage": self.stage,
            "classes": list(self.classes),
            "feature_version": self.feature_version,
            "model": self.model.to_obj(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_obj(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_obj(cls, obj: dict) -> "PatchClassifier":
        return cls(
            stage=obj["stage"],
            classes=tuple(obj["classes"]),
            model=GradientBoostedTrees.from_obj(obj["model"]),
            feature_version=int(obj["feature_version"]),
        )

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json() + "\n")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "PatchClassifier":
        return cls.from_obj(json.loads(Path(path).read_text()))


def assemble_stage_classes(
    labels: np.ndarray,
    stage: str,
    slide_ids: np.ndarray | None = None,
    slide_patterns: dict[str, tuple[int, ...]] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Map patch labels to stage class indices; returns (class_idx, keep).

    Detection keeps benign (1) vs any cancer (2/3/4/5/255). Grading keeps
    benign plus pattern-coded cancer; plain cancer (2) resolves through the
    slide's pattern set when it is single-pattern, mixed (255) resolves to
    the slide's highest pattern. Unknown (0) never trains.
    """
    if stage not in STAGE_CLASSES:
        raise ValueError(f"unknown stage: {stage}")
    labels = np.asarray(labels, dtype=np.int64)
    keep = np.zeros(len(labels), dtype=bool)
    cls = np.zeros(len(labels), dtype=np.int64)
    if stage == "detection":
        keep = labels != 0
        cls = (labels != 1).astype(np.int64)
        return cls, keep
    class_index = {1: 0, 3: 1, 4: 2, 5: 3}
    for i, lab in enumerate(labels):
        if lab in class_index:
            keep[i] = True
            cls[i] = class_index[lab]
            continue
        if lab in (2, 255):
            if slide_ids is None or slide_patterns is None:
                continue
            patterns = slide_patterns.get(str(slide_ids[i]), ())
            if lab == 2 and len(set(patterns)) == 1:
                keep[i] = True
                cls[i] = class_index[patterns[0]]
            elif lab == 255 and patterns:
                keep[i] = True
                cls[i] = class_index[max(patterns)]
    return cls, keep


_STAGE_GBT_DEFAULTS = {
    "detection": dict(objective="binary_logistic", n_rounds=60, max_depth=5),
    "grading": dict(objective="softmax", n_classes=4, n_rounds=60, max_depth=5),
}


def train_patch_ensemble(
    features: np.ndarray,
    class_idx: np.ndarray,
    stage: str,
    n_members: int = 5,
    epochs: int = 2,
    seed: int = 0,
    **gbt_params,
) -> list[PatchClassifier]:
    """Train one classifier per member on independent balanced draws.

    Member ``i`` seeds its sampler with ``seed + i`` and concatenates
    ``epochs`` balanced draws into its training set; two calls with equal
    inputs produce byte-identical serialized members.
    """
    if stage not in STAGE_CLASSES:
        raise ValueError(f"unknown stage: {stage}")
    features = np.asarray(features, dtype=np.float64)
    class_idx = np.asarray(class_idx, dtype=np.int64)
    if len(features) != len(class_idx):
        raise ValueError("features and class_idx lengths differ")
    params = dict(_STAGE_GBT_DEFAULTS[stage])
    params.update(gbt_params)
    by_class = {
        int(c): np.flatnonzero(class_idx == c).tolist()
        for c in np.unique(class_idx)
    }
    members = []
    for i in range(n_members):
        rng = np.random.default_rng(seed + i)
        rows = []
        for _ in range(epochs):
            rows.extend(balanced_epoch(by_class, rng))
        rows = np.asarray(rows, dtype=np.int64)
        model = GradientBoostedTrees(**params)
        model.fit(features[rows], class_idx[rows])
        members.append(
            PatchClassifier(stage=stage, classes=STAGE_CLASSES[stage], model=model)
        )
    return members


def save_patch_ensemble(path: str | Path, members: list[PatchClassifier]) -> Path:
    """Serialize an ensemble to one JSON file (stable byte layout)."""
    if not members:
        raise ValueError("empty ensemble")
    obj = {
        "format": "corepath-patch-ensemble",
        "version": 1,
        "stage": members[0].stage,
        "members": [m.to_obj() for m in members],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n")
    return path


def load_patch_ensemble(path: str | Path) -> list[PatchClassifier]:
    obj = json.loads(Path(path).read_text())
    if obj.get("format") != "corepath-patch-ensemble":
        raise ValueError("not a patch ensemble file")
    return [PatchClassifier.from_obj(m) for m in obj["members"]]


@dataclass
class ProbMatrix:
    """Per-patch class probabilities for one slide, rows in grid order."""

    slide_id: str
    stage: str
    coords: np.ndarray  # (n, 2) int64 base-coordinate (x, y)
    probs: np.ndarray  # (n, c) float64

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.int64).reshape(-1, 2)
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if len(self.coords) != len(self.probs):
            raise ValueError("coords and probs row counts differ")


def predict_prob_matrix(
    classifier: PatchClassifier,
    features: np.ndarray,
    coords: np.ndarray,
    slide_id: str,
) -> ProbMatrix:
    features = np.asarray(features, dtype=np.float64)
    if len(features):
        probs = classifier.predict_proba(features)
    else:
        probs = np.zeros((0, len(classifier.classes)), dtype=np.float64)
    return ProbMatrix(slide_id=slide_id, stage=classifier.stage, coords=coords, probs=probs)


def write_prob_matrices(path: str | Path, matrices: list[ProbMatrix]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for pm in matrices:
            for (x, y), row in zip(pm.coords, pm.probs):
                fh.write(
                    json.dumps(
                        {
                            "slide_id": pm.slide_id,
                            "x": int(x),
                            "y": int(y),
                            "probs": [float(v) for v in row],
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )
    return path


def read_prob_matrices(path: str | Path, stage: str) -> list[ProbMatrix]:
    """Load JSONL prob rows grouped by consecutive slide_id runs."""
    matrices = []
    current_id = None
    coords: list[tuple[int, int]] = []
    probs: list[list[float]] = []

    def flush():
        if current_id is not None:
            matrices.append(
                ProbMatrix(
                    slide_id=current_id,
                    stage=stage,
                    coords=np.asarray(coords, dtype=np.int64).reshape(-1, 2),
                    probs=np.asarray(probs, dtype=np.float64),
                )
            )

    for line in Path(path).read_text().splitlines():
        if not line:
            continue
        row = json.loads(line)
        if row["slide_id"] != current_id:
            flush()
            current_id = row["slide_id"]
            coords, probs = [], []
        coords.append((row["x"], row["y"]))
        probs.append(row["probs"])
    flush()
    return matrices

"""Slide-level aggregation: pooled features, per-member heads, Bayes grading.

Patch probability matrices pool into a fixed-length slide descriptor
(per class: sum, median, max, nine upper/lower percentiles and three
high-confidence counts; plus the patch count and per-class argmax counts,
giving 16c+1 values). Each patch-ensemble member gets its own head; slide
predictions average the member heads. Grading picks the ISUP grade that
minimizes expected cost under an asymmetric penalty favoring overcalls.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from corepath.gbt import GradientBoostedTrees
from corepath.validation import check_consistent_length

__all__ = [
    "PERCENTILES",
    "COUNT_CUTS",
    "slide_features",
    "LossMatrix",
    "bayes_grade",
    "calibrate_threshold",
    "HeadEnsemble",
    "train_detection_heads",
    "train_length_heads",
    "train_grading_heads",
    "predict_slide",
    "aggregate_patient",
]

PERCENTILES = (99.75, 99.5, 99.25, 99.0, 98.0, 95.0, 90.0, 80.0, 10.0)
COUNT_CUTS = (0.999, 0.99, 0.9)


def slide_features(probs: np.ndarray, n_classes: int | None = None) -> np.ndarray:
    """Pool an (n, c) patch probability matrix into a 16c+1 vector.

    Order: per-class sums, medians, maxima, the nine percentiles
    (linear interpolation between closest ranks), the three
    strictly-greater count cuts, then the patch count, then per-class
    argmax counts. Zero patches yield the zero vector.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        if probs.size == 0 and n_classes:
            probs = probs.reshape(0, n_classes)
        else:
            raise ValueError("probs must be a 2-D matrix")
    c = probs.shape[1]
    if n_classes is not None and c != n_classes:
        raise ValueError(f"expected {n_classes} classes, got {c}")
    n = len(probs)
    if n == 0:
        return np.zeros(16 * c + 1, dtype=np.float64)
    blocks = [probs.sum(axis=0), np.median(probs, axis=0), probs.max(axis=0)]
    for q in PERCENTILES:
        blocks.append(np.percentile(probs, q, axis=0, method="linear"))
    for cut in COUNT_CUTS:
        blocks.append((probs > cut).sum(axis=0).astype(np.float64))
    blocks.append(np.asarray([float(n)]))
    argmax_counts = np.bincount(np.argmax(probs, axis=1), minlength=c).astype(np.float64)
    blocks.append(argmax_counts)
    return np.concatenate(blocks)


@dataclass(frozen=True)
class LossMatrix:
    """Asymmetric grading cost: overcalls cost less than undercalls.

    L[y, a] = 0 when a == y, overcall_rate*(a-y) when a > y, and
    undercall_rate*(y-a) when a < y, over grades 1..n_grades.
    """

    overcall_rate: float = 0.1
    undercall_rate: float = 0.2
    n_grades: int = 5

    def matrix(self) -> np.ndarray:
        idx = np.arange(self.n_grades)
        diff = idx[None, :] - idx[:, None]  # a - y
        return np.where(
            diff > 0, self.overcall_rate * diff, -self.undercall_rate * diff
        ).astype(np.float64)


def bayes_grade(probs: np.ndarray, loss: LossMatrix = LossMatrix()) -> int:
    """Grade minimizing expected cost; exact risk ties resolve upward."""
    p = np.asarray(probs, dtype=np.float64)
    if p.shape != (loss.n_grades,):
        raise ValueError(f"expected {loss.n_grades} grade probabilities")
    if np.any(p < 0) or not math.isclose(float(p.sum()), 1.0, abs_tol=1e-6):
        raise ValueError("probabilities must be non-negative and sum to 1")
    risks = p @ loss.matrix()
    best = int(np.flatnonzero(risks == risks.min()).max())
    return best + 1


def grade_risks(probs: np.ndarray, loss: LossMatrix = LossMatrix()) -> np.ndarray:
    """Expected cost of calling each grade under the loss matrix."""
    return np.asarray(probs, dtype=np.float64) @ loss.matrix()


def calibrate_threshold(scores, labels, target_sensitivity: float) -> float:
    """Largest decision threshold (call malignant when score >= threshold)
    whose sensitivity on the given cores is at least the target."""
    if not 0 < target_sensitivity <= 1:
        raise ValueError("target_sensitivity must lie in (0, 1]")
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    check_consistent_length(scores, labels)
    pos = np.sort(scores[labels == 1])[::-1]
    if len(pos) == 0:
        raise ValueError("no positive cores to calibrate on")
    k = max(1, math.ceil(target_sensitivity * len(pos) - 1e-12))
    return float(pos[k - 1])


@dataclass
class HeadEnsemble:
    """Per-member slide heads for one task, plus an optional threshold."""

    task: str  # "detection" | "length" | "grading"
    members: list[GradientBoostedTrees] = field(default_factory=list)
    threshold: float | None = None

    def predict(self, member_features: list[np.ndarray]) -> np.ndarray:
        """Average member predictions; ``member_features[i]`` is the slide
        feature matrix built from member i's patch probabilities."""
        if len(member_features) != len(self.members):
            raise ValueError("one feature matrix per member required")
        preds = [
            m.predict(np.atleast_2d(f)) for m, f in zip(self.members, member_features)
        ]
        return np.mean(preds, axis=0)

    def save(self, out_dir: str | Path) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        files = []
        for i, member in enumerate(self.members):
            name = f"member_{i:02d}.json"
            member.save(out_dir / name)
            files.append(name)
        manifest = {"task": self.task, "members": files, "threshold": self.threshold}
        (out_dir / "heads.json").write_text(
            json.dumps(manifest, sort_keys=True, indent=1) + "\n"
        )
        return out_dir

    @classmethod
    def load(cls, out_dir: str | Path) -> "HeadEnsemble":
        out_dir = Path(out_dir)
        manifest = json.loads((out_dir / "heads.json").read_text())
        members = [
            GradientBoostedTrees.load(out_dir / name) for name in manifest["members"]
        ]
        return cls(
            task=manifest["task"], members=members, threshold=manifest["threshold"]
        )


_HEAD_PARAMS = {
    "detection": dict(objective="binary_logistic", max_depth=5, n_rounds=100),
    "length": dict(objective="squared_error", max_depth=2, n_rounds=200),
    "grading": dict(objective="softmax", n_classes=5, max_depth=3, n_rounds=300),
}


def train_detection_heads(
    member_features: list[np.ndarray], malignant: np.ndarray, **gbt_params
) -> HeadEnsemble:
    """One binary head per member on that member's slide features."""
    y = np.asarray(malignant, dtype=np.int64)
    params = dict(_HEAD_PARAMS["detection"])
    params.update(gbt_params)
    members = [
        GradientBoostedTrees(**params).fit(np.asarray(f, dtype=np.float64), y)
        for f in member_features
    ]
    return HeadEnsemble(task="detection", members=members)


def train_length_heads(
    member_features: list[np.ndarray], length_mm: np.ndarray, **gbt_params
) -> HeadEnsemble:
    y = np.asarray(length_mm, dtype=np.float64)
    params = dict(_HEAD_PARAMS["length"])
    params.update(gbt_params)
    members = [
        GradientBoostedTrees(**params).fit(np.asarray(f, dtype=np.float64), y)
        for f in member_features
    ]
    return HeadEnsemble(task="length", members=members)


def grading_class_weights(isup: np.ndarray) -> np.ndarray:
    """Per-slide weights proportional to 1/count of the slide's grade,
    normalized to mean 1."""
    isup = np.asarray(isup, dtype=np.int64)
    counts = np.bincount(isup, minlength=6)
    w = 1.0 / counts[isup]
    return w * (len(w) / w.sum())


def train_grading_heads(
    member_features: list[np.ndarray], isup: np.ndarray, **gbt_params
) -> HeadEnsemble:
    """Five-way grade heads trained on malignant slides with inverse-count
    class weights."""
    isup = np.asarray(isup, dtype=np.int64)
    if np.any((isup < 1) | (isup > 5)):
        raise ValueError("grading heads train on malignant slides (ISUP 1..5)")
    weights = grading_class_weights(isup)
    params = dict(_HEAD_PARAMS["grading"])
    params.update(gbt_params)
    members = [
        GradientBoostedTrees(**params).fit(
            np.asarray(f, dtype=np.float64), isup - 1, sample_weight=weights
        )
        for f in member_features
    ]
    return HeadEnsemble(task="grading", members=members)


def predict_slide(
    slide_id: str,
    det_features: list[np.ndarray],
    grade_features: list[np.ndarray],
    detection: HeadEnsemble,
    length: HeadEnsemble,
    grading: HeadEnsemble,
    threshold: float | None = None,
    loss: LossMatrix = LossMatrix(),
) -> dict:
    """Fuse member heads into one slide record.

    Malignancy is the mean detection probability; length predictions clamp
    at zero; the grade is 0 below the threshold, else the Bayes grade of
    the mean grading distribution.
    """
    thr = detection.threshold if threshold is None else threshold
    if thr is None:
        raise ValueError("no calibrated threshold available")
    p = float(detection.predict(det_features)[0])
    length_mm = max(0.0, float(length.predict(det_features)[0]))
    grade_probs = grading.predict(grade_features)[0]
    grade_if_malignant = bayes_grade(grade_probs / grade_probs.sum(), loss)
    return {
        "slide_id": slide_id,
        "p_malignant": p,
        "length_mm": length_mm,
        "grade": int(grade_if_malignant) if p >= thr else 0,
        "grade_if_malignant": int(grade_if_malignant),
    }


def aggregate_patient(predictions: list[dict]) -> dict:
    """Roll slide records up to one man: max probability, summed length."""
    if not predictions:
        raise ValueError("no slide predictions to aggregate")
    return {
        "p_malignant": max(p["p_malignant"] for p in predictions),
        "length_mm": float(sum(p["length_mm"] for p in predictions)),
        "grade": max(int(p["grade"]) for p in predictions),
    }

"""Small utilities shared by the test modules."""

from __future__ import annotations

import numpy as np

from corepath.synthgen import SynthSpec

WORK_UM = 0.904 * 16  # micrometers per working-grid pixel


def iou(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def small_spec(
    slide_id: str = "s0",
    seed: int = 11,
    grade: int = 3,
    span: tuple[float, float] | None = (0.15, 0.8),
    **kw,
) -> SynthSpec:
    """A compact core that renders in well under a second."""
    defaults = dict(
        slide_id=slide_id,
        seed=seed,
        grade=grade,
        core_length_mm=2.8,
        core_width_mm=0.75,
        cancer_span=span if grade else None,
        rotation_deg=1.5,
    )
    defaults.update(kw)
    return SynthSpec(**defaults)


def cancer_pixels(label_data: np.ndarray) -> np.ndarray:
    return np.isin(label_data, (2, 3, 4, 5, 255))

"""Session-wide fixtures: pre-rendered synthetic slides reused across modules."""

from __future__ import annotations

import pytest

from corepath.synthgen import generate_slide
from helpers import small_spec


@pytest.fixture(scope="session")
def malignant_slide():
    """One grade-coded ISUP 3 core (patterns 4+3) with its exact truth."""
    spec = small_spec(grade=3, span=(0.12, 0.86), secondary_fraction=0.4)
    return spec, *generate_slide(spec)


@pytest.fixture(scope="session")
def benign_slide():
    spec = small_spec(slide_id="b0", seed=5, grade=0, span=None, rotation_deg=-2.0)
    return spec, *generate_slide(spec)

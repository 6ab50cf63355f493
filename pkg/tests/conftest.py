from __future__ import annotations

import pytest

from bgforensics.pipeline.manifest import synth_dataset

DESK_N = 200
DESK_SIZE = (320, 180)
DESK_SEED = 0


@pytest.fixture(scope="session")
def desk_dataset(tmp_path_factory):
    """The desk-scale synthetic set: 200 frames per class at 320x180."""
    out = tmp_path_factory.mktemp("desk")
    return synth_dataset(DESK_N, DESK_SIZE, DESK_SEED, out), out


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """Twelve frames per class at 64x48, enough for end-to-end plumbing tests."""
    out = tmp_path_factory.mktemp("small")
    return synth_dataset(12, (64, 48), 1, out), out

import numpy as np
import pytest

from bracketforge.rng import Rng
from bracketforge.synthetic import blob_scene


@pytest.fixture
def gen():
    return np.random.default_rng(20240601)


@pytest.fixture
def scene():
    """A small single-frame synthetic HDR scene."""
    return blob_scene(Rng(11).generator(), 24, 24)


def write_hdr_dir(directory, frames=3, size=24, seed=11):
    from bracketforge.hdrio import write_pfm

    directory.mkdir(parents=True, exist_ok=True)
    video = blob_scene(Rng(seed).generator(), size, size, n_frames=frames)
    for i, f in enumerate(video):
        write_pfm(f, directory / f"frame_{i:04d}.pfm")
    return video


@pytest.fixture
def hdr_dir(tmp_path):
    """Directory of small synthetic .pfm frames."""
    write_hdr_dir(tmp_path / "hdr")
    return tmp_path / "hdr"

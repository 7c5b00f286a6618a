import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Six short videos, enough for trainer and evaluator unit tests."""
    from motionseg.synth import generate_dataset, SyntheticDataset

    root = tmp_path_factory.mktemp("data") / "tiny"
    generate_dataset(root, n_videos=6, seed=99, hw=(64, 64), n_frames=8, n_parts=2)
    return SyntheticDataset(root)

import numpy as np
import pytest

from haarboost import dataset
from haarboost import imaging


@pytest.fixture(scope="session")
def synth_small():
    return dataset.synth(7, 50, 50)


@pytest.fixture(scope="session")
def synth_medium():
    return dataset.synth(7, 100, 100)


@pytest.fixture(scope="session")
def noise():
    """A balanced dataset of random windows with arbitrary labels."""
    return noise_dataset(seed=11, l=40, m=40)


def noise_dataset(seed, l, m, window=24):  # noqa: E741
    rng = np.random.default_rng(seed)
    pixels = rng.integers(0, 256, (l + m, window, window), dtype=np.uint8)
    sums = np.stack([imaging.integral_of(imaging.Image(p)).sums
                     for p in pixels])
    labels = np.r_[np.ones(l, np.uint8), np.zeros(m, np.uint8)]
    names = ["noise-{:03d}".format(i) for i in range(l + m)]
    return dataset.Dataset(sums, labels, names)

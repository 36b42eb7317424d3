import numpy as np
import pytest

from epiglab.data import SyntheticSpec, make_synthetic, split
from epiglab.loop import DataBundle


def random_cube(rng, k, n, c):
    """Random probability cube via normalized exponentials."""
    raw = rng.exponential(size=(k, n, c))
    return raw / raw.sum(axis=2, keepdims=True)


@pytest.fixture(scope="session")
def small_data():
    """3-class separable clusters: (latent, raw, labels)."""
    return make_synthetic(
        SyntheticSpec(classes=3, per_class=120, latent_dim=4, raw_dim=8,
                      noise_scale=1.0), seed=7,
    )


@pytest.fixture(scope="session")
def small_bundle(small_data):
    latent, raw, labels = small_data
    splits = split(latent.n, {"target": 50, "validation": 30, "test": 80},
                   labels, seed=3)
    return DataBundle(tables={"latent": latent, "raw": raw}, oracle=labels,
                      splits=splits)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)

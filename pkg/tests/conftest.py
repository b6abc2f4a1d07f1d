import numpy as np
import pytest

from gfm.harness import generate_synthetic


def two_family_spec(seed=0, count=10, length=60, horizon=6, noise=0.1):
    return {
        "families": [
            {"ar": [0.9], "level": 3.0, "count": count, "name": "A"},
            {"ar": [-0.7], "level": 3.0, "count": count, "name": "B"},
        ],
        "length": length,
        "noise_sd": noise,
        "horizon": horizon,
        "seed": seed,
    }


@pytest.fixture
def small_ds():
    return generate_synthetic(two_family_spec())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

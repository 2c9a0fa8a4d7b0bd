import numpy as np
import pytest

from sc2codec.checkpoint import new_codec
from sc2codec.model import variant_config
from sc2codec.synth import synth_dataset


@pytest.fixture(scope="session")
def toy_codec():
    return new_codec(variant_config("toy_student"), seed=11)


@pytest.fixture(scope="session")
def short_utterances():
    return synth_dataset(seed=101, count=6, seconds=0.4)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)

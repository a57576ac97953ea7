import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mixassist import synth
from mixassist.audio import ENGINE_RATE, AudioBuffer


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def sine_1k():
    t = np.arange(ENGINE_RATE) / ENGINE_RATE
    return AudioBuffer(np.sin(2 * np.pi * 1000.0 * t)[np.newaxis, :], ENGINE_RATE)


@pytest.fixture
def short_tracks(rng):
    return [synth.random_test_signal(rng, 0.25) for _ in range(2)]


@pytest.fixture
def stem_quartet(rng):
    return synth.make_stem_session(rng, 4, 2.0)

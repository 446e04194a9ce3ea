import os

# training and timing criteria are stated for one CPU core
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from posemon.synth import CorruptionSpec, SceneConfig, default_template, generate_sequences, mixed_specs

# one line per acceptance criterion, filled by tests/test_acceptance.py
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: int(k)):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture(scope="session")
def template():
    return default_template()


@pytest.fixture(scope="session")
def clean_frames(template):
    """Two uncorrupted subjects, four frames each."""
    return generate_sequences(template, SceneConfig(), 2, 4, CorruptionSpec(0.0, 0.0, 0.0), seed=11)


@pytest.fixture(scope="session")
def mixed_frames(template):
    """A small cluttered, mixed-corruption set (3 subjects x 24 frames)."""
    return generate_sequences(template, SceneConfig(clutter_density=0.5, clutter_seed=5), 3, 24,
                              mixed_specs([0.0, 0.1, 0.2, 0.3]), seed=5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

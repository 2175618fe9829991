import sys

import numpy as np
import pytest

from woundseg.data import SynthConfig, generate_synthetic


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tiny_records():
    """A few small patients; arrays are attached, nothing touches disk."""
    return generate_synthetic(SynthConfig(n_patients=6, images_per_patient_range=(2, 3)), seed=3)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny")
    generate_synthetic(SynthConfig(n_patients=6, images_per_patient_range=(2, 3)), seed=3, out_dir=out)
    return out


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.summary_line(n))

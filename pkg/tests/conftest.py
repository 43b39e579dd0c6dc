import numpy as np
import pytest

from hitlfusion.dataset import SynthSpec, synth_generate


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def small_data():
    spec = SynthSpec(n_classes=4, n_tags=6, feature_dim=5, samples_per_class=25, informative_tags=4)
    return synth_generate(spec, seed=3)


def random_simplex(rng, shape):
    p = rng.dirichlet(np.ones(shape[-1]), size=shape[:-1])
    return p


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)

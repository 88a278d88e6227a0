import numpy as np
import pytest

from scoretensor import autodiff as ad
from scoretensor.energy import build_model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tape():
    return ad.Tape()


@pytest.fixture(params=["tabular", "temporal", "implicit"])
def any_model(request):
    return build_model(request.param, (5, 4), 3, 8, seed=7)


class StubBound:
    """Minimal stand-in for a bound energy whose dE/dx is supplied directly."""

    def __init__(self, score_fn=None, energy_fn=None, variant="tabular"):
        self.score_fn = score_fn
        self.energy_fn = energy_fn
        self.variant = variant

    def factor_of(self, indices, coord_noise=None):
        n = len(np.asarray(indices).reshape(len(indices), -1))
        return ad.constant(np.zeros((n, 1)))

    def score(self, x, z, t=None):
        return ad.constant(self.score_fn(np.asarray(x, dtype=np.float64)))

    def energy(self, x, z, t=None):
        x = x.value if isinstance(x, ad.Node) else np.asarray(x, dtype=np.float64)
        return ad.constant(self.energy_fn(x))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

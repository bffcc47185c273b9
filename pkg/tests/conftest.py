
import numpy as np
import pytest

from mdlrelu.estimator import CodedDirections
from mdlrelu.model import NetworkModel, make_rng, sample_true_param, sample_weights
from mdlrelu.risk import RenyiConfig, simulate
from mdlrelu.spectral import approx_basis, gram_report, monte_carlo_fim
from mdlrelu.twostage import build_code

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


class ReluRun:
    """d=2, m=500 ReLU model fitted at n=1000 with alpha=2 over 200 trials."""

    d, m, n, alpha, sigma2, order, trials, seed = 2, 500, 1000, 2.0, 1.0, 0.5, 200, 2024

    def __init__(self):
        self.model = NetworkModel(sample_weights(self.d, self.m, make_rng(self.seed, 0)), self.sigma2)
        self.vstar = sample_true_param(self.m, make_rng(self.seed, 1))
        basis = approx_basis(self.model)
        self.gram = gram_report(basis)
        self.dirs = CodedDirections.from_approx_basis(basis, self.gram)
        self.fim = monte_carlo_fim(self.model, 100_000, make_rng(self.seed, 2))
        self.cfg = RenyiConfig(self.order, 20_000, self.seed)
        self.spec = build_code(self.dirs.lambdas, self.alpha, self.sigma2, self.n, self.dirs.radius)
        self.results = simulate(self.model, self.vstar, self.spec, self.dirs, self.trials, self.n,
                                self.seed, self.cfg, stream=(4,))


@pytest.fixture(scope="session")
def relu_run():
    return ReluRun()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

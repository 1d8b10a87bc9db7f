import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


def random_spd(p, rng, lo=0.5, hi=3.0):
    q, _ = np.linalg.qr(rng.standard_normal((p, p)))
    return (q * rng.uniform(lo, hi, p)) @ q.T


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def latent_data(rng, n, p, k, n_i, covs=None, side=10.0):
    """Classes with uniform means and covariances drawn from K latent matrices.

    ``n_i`` may be an int or a sequence of per-class sizes.
    """
    from lcda.stats import ClassBlock, LabeledDataset

    if covs is None:
        covs = np.stack([random_spd(p, rng) for _ in range(k)])
    sizes = [n_i] * n if np.isscalar(n_i) else list(n_i)
    z = np.arange(n) % k
    blocks = []
    for i in range(n):
        chol = np.linalg.cholesky(covs[z[i]])
        x = rng.uniform(0, side, p) + rng.standard_normal((sizes[i], p)) @ chol.T
        blocks.append(ClassBlock(f"c{i}", x))
    return LabeledDataset(p, blocks), z, covs


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

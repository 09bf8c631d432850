from __future__ import annotations

import numpy as np
import pytest
import scipy.sparse as sp

from cwpotts.lumped_chain import ChainSpec

# Lines collected by the acceptance module, echoed in the terminal summary.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):  # noqa: ARG001
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def random_reversible_chain(seed: int, n: int = 30, density: float = 0.25) -> ChainSpec:
    """Connected random reversible chain: random weights and symmetric conductances."""
    rng = np.random.default_rng(seed)
    log_w = rng.normal(0.0, 1.5, size=n)
    w = np.exp(log_w)
    mask = np.triu(rng.random((n, n)) < density, k=1)
    perm = rng.permutation(n)
    for a, b in zip(perm[:-1], perm[1:]):  # spanning path keeps it irreducible
        mask[min(a, b), max(a, b)] = True
    c = np.where(mask, rng.uniform(0.1, 1.0, size=(n, n)), 0.0)
    c = c + c.T
    rates = c / w[:, None]
    rates /= 1.1 * rates.sum(axis=1).max()
    kernel = rates + np.diag(1.0 - rates.sum(axis=1))
    return ChainSpec(np.arange(n), log_w, sp.csr_matrix(kernel)).verify()


@pytest.fixture
def small_chain() -> ChainSpec:
    return random_reversible_chain(0)

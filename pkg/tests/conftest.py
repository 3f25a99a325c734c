import numpy as np
import pytest

from dsse.complexstats import ComplexGaussian
from dsse.netmodel import Branch, Bus, RadialNetwork

# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def random_radial_network(rng, n_buses=10, phase_count=1, base_voltage=230.0):
    """Random tree: every new bus hangs off a uniformly chosen earlier bus."""
    ids = [str(k) for k in range(n_buses)]
    branches = []
    for k in range(1, n_buses):
        parent = ids[rng.integers(0, k)]
        r = rng.uniform(0.05, 1.0, phase_count)
        x = rng.uniform(0.05, 1.0, phase_count)
        z = np.diag(r + 1j * x)
        if phase_count > 1:
            m = rng.uniform(0.0, 0.2, (phase_count, phase_count)) * (1 + 1j)
            m = np.triu(m, 1)
            z = z + m + m.T
        # random orientation; the network must re-orient itself
        if rng.random() < 0.5:
            branches.append(Branch(parent, ids[k], z))
        else:
            branches.append(Branch(ids[k], parent, z))
    perm = rng.permutation(len(branches))
    return RadialNetwork(tuple(Bus(i, phase_count) for i in ids),
                         tuple(branches[j] for j in perm), "0", base_voltage)


def random_complex_gaussian(rng, n, rank=None):
    """Valid improper complex Gaussian from a random real composite covariance."""
    rank = 2 * n if rank is None else rank
    f = rng.standard_normal((2 * n, rank))
    k = f @ f.T / rank
    mean = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return ComplexGaussian.from_composite(mean, k)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])

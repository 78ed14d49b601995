import numpy as np
import pytest

from risas.channels import FadingSpec, generate_realization
from risas.model import SystemConfig


_ACCEPTANCE_LINES: dict[int, str] = {}


def report(n, name, ok, detail=""):
    """Print and remember one PASS/FAIL line for an acceptance criterion."""
    line = f"criterion {n} ({name}): {'PASS' if ok else 'FAIL'} - {detail}"
    _ACCEPTANCE_LINES[n] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(_ACCEPTANCE_LINES[n])


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def random_psd(rng, n, rank=None):
    A = crandn(rng, n, rank or n)
    return A @ A.conj().T


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def desk_config():
    return SystemConfig.uniform(N=8, T=3, M=8, K=2, Nk=2, Lk=2, p=10 ** -0.5,
                                sigma2=1e-12, q_bits=3)


@pytest.fixture
def desk_channels(desk_config):
    return generate_realization(desk_config, FadingSpec(), seed=7)


def random_pdd_state(rng, config, rho=None):
    """A generic (infeasible) PDD iterate with nonzero duals."""
    from risas.model import WmmseState, nearest_phase
    from risas.pdd import DualVariables, PddState

    N, M, L = config.N, config.M, config.L
    s = rng.uniform(-0.3, 1.3, N)
    phi = crandn(rng, M)
    A = crandn(rng, L, L)
    W = A @ A.conj().T + 0.1 * np.eye(L)
    U = crandn(rng, N, L) * 1e5
    P = []
    for nk, lk, pk in zip(config.Nk, config.Lk, config.pk):
        X = crandn(rng, nk, lk)
        P.append(X * np.sqrt(pk * rng.uniform(0.2, 1.0) / np.vdot(X, X).real))
    duals = DualVariables(float(rng.standard_normal()), 0.3 * rng.standard_normal(N),
                          0.3 * rng.standard_normal(N), 0.3 * crandn(rng, M))
    return PddState(
        wmmse=WmmseState(W=0.5 * (W + W.conj().T), U=U),
        s=s, sbar=rng.uniform(-0.3, 1.3, N), phi=phi,
        v=np.asarray(nearest_phase(crandn(rng, M), config.q_bits)), P=P, duals=duals,
        rho=float(rho if rho is not None else 10 ** rng.uniform(-1, 1)))

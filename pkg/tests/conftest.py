import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import settings

from lrtdvp.lindblad import LindbladModel
from lrtdvp.numerics import PinvConfig
from lrtdvp.state import LowRankState, orthonormalize

settings.register_profile("default", max_examples=30, deadline=None)
settings.load_profile("default")

# qubit convention: index 0 is spin up, sigma^- maps up to down
SIGMA_MINUS = np.array([[0, 0], [1, 0]], dtype=complex)
SIGMA_Z = np.diag([1.0, -1.0]).astype(complex)


def random_hermitian(n, rng, scale=1.0):
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return scale * 0.5 * (a + a.conj().T)


def random_model(n, n_jumps, rng, scale=0.5, density=None):
    """Random model with dense-ish sparse operators normalized to unit spectral scale."""
    H = random_hermitian(n, rng)
    H *= scale / np.linalg.norm(H, 2)
    jumps = []
    for _ in range(n_jumps):
        g = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        if density is not None:
            g *= rng.random((n, n)) < density
        jumps.append(sp.csr_matrix(scale * g / max(np.linalg.norm(g, 2), 1e-12)))
    return LindbladModel(sp.csr_matrix(H), jumps)


def random_state(n, m, rng, orthonormal=True, pinv=None):
    z = rng.standard_normal((n, m)) + 1j * rng.standard_normal((n, m))
    if orthonormal:
        z = orthonormalize(z)
    w = rng.random(m) + 0.1
    u = np.linalg.qr(rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m)))[0]
    B = u @ np.diag(w) @ u.conj().T
    st = LowRankState(z, B, pinv or PinvConfig())
    st.B = st.B / st.trace()
    return st


def decay_model(gamma=1.0):
    return LindbladModel(sp.csr_matrix((2, 2), dtype=complex), [np.sqrt(gamma) * sp.csr_matrix(SIGMA_MINUS)])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one PASS/FAIL line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)

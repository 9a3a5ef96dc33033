"""Bias-preserving Z-type gates on dissipative cat qubits and their readout."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln

from ..hilbert import FockSpec, ProductOperator, boson_annihilate, canonical
from ..lindblad import LindbladModel
from ..numerics import PinvConfig
from ..records import Observable
from ..state import LowRankState
from .bosonic import coherent_amplitudes, product_basis, seed_basis

GATES = {"Z": 1, "ZZ": 2, "ZZZ": 3}
Q_MAX_DEFAULT = 15
SERIES_TOL = 1e-8


def bessel_iv(q: int, x: float, rtol: float = 1e-16) -> float:
    """Modified Bessel function ``I_q(x)`` of integer order from its ascending series."""
    q = abs(int(q))
    if x == 0:
        return 1.0 if q == 0 else 0.0
    half = 0.5 * x
    term = math.exp(q * math.log(half) - math.lgamma(q + 1))
    total = term
    k = 0
    while True:
        k += 1
        term *= half * half / (k * (k + q))
        total += term
        if term <= rtol * total:
            return total


def log_double_factorial(n):
    """``ln(n!!)`` element-wise for integers ``n >= -1`` with ``(-1)!! = 0!! = 1``."""
    n = np.asarray(n)
    if np.any(n < -1):
        raise ValueError("double factorial defined here for n >= -1")
    k = (n + 1) // 2
    even = gammaln(n // 2 + 1) + (n // 2) * math.log(2.0)
    odd = gammaln(2 * k + 1) - k * math.log(2.0) - gammaln(k + 1)
    return np.where(n % 2 == 0, even, odd)


def cutoff_for(alpha: float) -> int:
    return max(20, math.ceil(4.5 * alpha * alpha))


@dataclass(frozen=True)
class CatGateParams:
    """Gate on ``N`` cat qubits; rates in units of the two-photon loss ``kappa2``."""

    N: int = 1
    alpha: float = 2.0
    kappa1: float = 1e-3
    kappa2: float = 1.0
    T: float = 10.0
    M_pm: int = 3
    cutoff: int | None = None
    initial: str = "plus"

    def __post_init__(self):
        if self.N not in (1, 2, 3):
            raise ValueError(f"cat gates defined for N in (1, 2, 3), got {self.N}")
        if not self.alpha > 0 or not self.T > 0:
            raise ValueError("alpha and T must be positive")
        if self.initial not in ("plus", "zero"):
            raise ValueError(f"initial must be 'plus' or 'zero', got {self.initial!r}")

    @classmethod
    def from_epsilon(cls, eps: float, **kw) -> CatGateParams:
        """Choose ``T`` so that the rate ``pi / (4 alpha^N T)`` equals ``eps``."""
        n = kw.get("N", 1)
        alpha = kw.get("alpha", 2.0)
        return cls(T=math.pi / (4 * alpha**n * eps), **kw)

    @property
    def epsilon(self) -> float:
        return math.pi / (4 * self.alpha**self.N * self.T)

    @property
    def n_cut(self) -> int:
        return self.cutoff or cutoff_for(self.alpha)

    @property
    def fock(self) -> FockSpec:
        return FockSpec(self.N, self.n_cut)


def gate_hamiltonian(p: CatGateParams, gate: str) -> sp.csr_matrix:
    if GATES.get(gate) != p.N:
        raise ValueError(f"gate {gate!r} does not act on {p.N} modes")
    a = [boson_annihilate(p.fock, j) for j in range(p.N)]
    ad = [x.conj().T for x in a]
    if p.N == 1:
        H = a[0] + ad[0]
    elif p.N == 2:
        H = a[0] @ ad[1] + ad[0] @ a[1]
    else:
        H = a[0] @ a[1] @ ad[2] + ad[0] @ ad[1] @ a[2]
    return canonical(p.epsilon * H)


def cat_state(alpha: float, cutoff: int, parity: int) -> np.ndarray:
    """Normalized ``|alpha> + parity |-alpha>`` in the truncated space."""
    v = coherent_amplitudes(alpha, cutoff, False) + parity * coherent_amplitudes(-alpha, cutoff, False)
    return v / np.linalg.norm(v)


def logical_state(alpha: float, cutoff: int, which: str) -> np.ndarray:
    """``plus``/``minus`` are the even/odd cats; ``zero`` is their normalized sum."""
    if which == "plus":
        return cat_state(alpha, cutoff, +1)
    if which == "minus":
        return cat_state(alpha, cutoff, -1)
    if which == "zero":
        v = cat_state(alpha, cutoff, +1) + cat_state(alpha, cutoff, -1)
        return v / np.linalg.norm(v)
    raise ValueError(f"unknown logical state {which!r}")


def build_cat_gate(p: CatGateParams, gate: str = "Z", pinv: PinvConfig | None = None):
    """Model with two-photon confinement, single-photon loss and the gate drive.

    The initial state is the product of ``p.initial`` logical states; each
    mode's basis is Gram-Schmidt of that state followed by displaced seeds.
    """
    H = gate_hamiltonian(p, gate)
    fock = p.fock
    eye = sp.identity(fock.dim, dtype=complex, format="csr")
    jumps = []
    for j in range(p.N):
        a = boson_annihilate(fock, j)
        jumps.append(math.sqrt(p.kappa2) * (a @ a - p.alpha**2 * eye))
        if p.kappa1 > 0:
            jumps.append(math.sqrt(p.kappa1) * a)
    model = LindbladModel(H, jumps)
    psi = logical_state(p.alpha, fock.cutoff, p.initial)
    local = seed_basis(p.alpha, fock.cutoff, p.M_pm, first=psi)
    z = product_basis([local] * p.N)
    B = np.zeros((z.shape[1],) * 2, dtype=complex)
    B[0, 0] = 1.0
    return model, LowRankState(z, B, pinv or PinvConfig())


def initial_density(p: CatGateParams) -> np.ndarray:
    psi = logical_state(p.alpha, p.n_cut, p.initial)
    v = np.ones(1, dtype=complex)
    for _ in range(p.N):
        v = np.kron(v, psi)
    return np.outer(v, v.conj())


@dataclass(frozen=True)
class KernelOperators:
    """Single-mode conserved quantities of the two-photon dissipator."""

    pp: sp.csr_matrix
    mm: sp.csr_matrix
    pm: sp.csr_matrix
    remainder: float

    @property
    def mp(self) -> sp.csr_matrix:
        return canonical(self.pm.conj().T)


def _j_q(q: int, cutoff: int) -> sp.csr_matrix:
    """One term of the off-diagonal kernel series as a sparse single-mode matrix."""
    rows, cols, vals = [], [], []
    if q >= 0:
        # <n| ... |n + 2q + 1> with n even
        n = np.arange(0, cutoff - 2 * q - 1, 2)
        m = n + 2 * q + 1
        logv = (log_double_factorial(n - 1) - log_double_factorial(n + 2 * q)
                + 0.5 * (gammaln(m + 1) - gammaln(n + 1)))
        rows, cols = n, m
    else:
        k = -q
        # <m + 2k - 1| ... |m> with m odd
        m = np.arange(1, cutoff - 2 * k + 1, 2)
        n = m + 2 * k - 1
        logv = (log_double_factorial(m) - log_double_factorial(m + 2 * k - 1)
                + 0.5 * (gammaln(n + 1) - gammaln(m + 1)))
        rows, cols = n, m
    vals = np.exp(logv)
    return sp.csr_matrix((vals.astype(complex), (rows, cols)), shape=(cutoff, cutoff))


def cat_kernel_operators(alpha: float, cutoff: int, q_max: int = Q_MAX_DEFAULT) -> KernelOperators:
    """Parity projectors and the truncated series for ``J_{+-}``.

    Warns when the last retained coefficient exceeds ``SERIES_TOL`` relative
    to the leading one; the ratio is returned as ``remainder``.
    """
    if q_max < 1:
        raise ValueError("q_max must be at least 1")
    x = alpha * alpha
    n = np.arange(cutoff)
    pp = sp.diags((n % 2 == 0).astype(complex)).tocsr()
    mm = sp.diags((n % 2 == 1).astype(complex)).tocsr()
    amp = math.sqrt(2 * x / math.sinh(2 * x))
    a0 = bessel_iv(0, x)
    pm = sp.csr_matrix((cutoff, cutoff), dtype=complex)
    for q in range(-q_max, q_max + 1):
        aq = (-1) ** q * bessel_iv(q, x) / (2 * q + 1)
        pm = pm + aq * _j_q(q, cutoff)
    remainder = bessel_iv(q_max, x) / (2 * q_max + 1) / a0
    if remainder > SERIES_TOL:
        warnings.warn(f"kernel series truncated at q_max={q_max} with relative tail {remainder:.2e}",
                      RuntimeWarning, stacklevel=2)
    return KernelOperators(canonical(pp), canonical(mm), canonical(amp * pm), remainder)


def sign_x_operator(k: KernelOperators) -> sp.csr_matrix:
    """Hermitian stand-in for ``sgn(x)``: ``J_{+-} + J_{-+}``."""
    return canonical(k.pm + k.mp)


def q_max_for(alpha: float, minimum: int = Q_MAX_DEFAULT) -> int:
    """Smallest series order, at least ``minimum``, whose relative tail is below ``SERIES_TOL``."""
    x = alpha * alpha
    a0 = bessel_iv(0, x)
    q = minimum
    while bessel_iv(q, x) / (2 * q + 1) / a0 > SERIES_TOL:
        q += 1
    return q


def readout_observables(p: CatGateParams, q_max: int | None = None) -> dict[str, Observable]:
    """``P_Z = <prod J_{++}>`` and ``P_X = 1 - <prod sgn(x)>`` on every mode."""
    k = cat_kernel_operators(p.alpha, p.n_cut, q_max or q_max_for(p.alpha))
    dims = p.fock.local_dims
    Jpp = ProductOperator([(j, k.pp) for j in range(p.N)], dims)
    Sx = ProductOperator([(j, sign_x_operator(k)) for j in range(p.N)], dims)
    return {
        "P_Z": Observable("P_Z", (Jpp,)),
        "P_X": Observable("P_X", (Sx,), lambda e: 1.0 - e[0].real),
    }


def gate_error_probabilities(final, p: CatGateParams, q_max: int | None = None):
    """``(P_Z, P_X)`` of a final low-rank state or dense density matrix."""
    obs = readout_observables(p, q_max)
    if isinstance(final, LowRankState):
        return obs["P_Z"].of_state(final), obs["P_X"].of_state(final)
    return obs["P_Z"].of_dense(final), obs["P_X"].of_dense(final)


def analytic_phase_flip(p: CatGateParams) -> float:
    """Leading-order single-qubit estimate ``kappa1 T alpha^2 + eps^2 T / alpha^2``."""
    a2 = p.alpha**2
    return p.kappa1 * p.T * a2 + p.epsilon**2 * p.T / a2

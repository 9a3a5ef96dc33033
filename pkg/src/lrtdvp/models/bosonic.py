"""Coupled quadratically driven Kerr cavities with one- and two-photon loss."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln

from ..hilbert import FockSpec, boson_annihilate, canonical
from ..lindblad import LindbladModel
from ..numerics import PinvConfig
from ..records import Observable
from ..state import LowRankState, orthonormalize

PHOTON_FLOOR = 1e-10


def coherent_amplitudes(alpha: complex, cutoff: int, normalize: bool = True) -> np.ndarray:
    """Fock amplitudes of ``|alpha>`` truncated to ``cutoff`` levels."""
    n = np.arange(cutoff)
    if alpha == 0:
        out = np.zeros(cutoff, dtype=complex)
        out[0] = 1.0
        return out
    r, phi = abs(alpha), np.angle(alpha)
    logmag = -0.5 * r * r + n * math.log(r) - 0.5 * gammaln(n + 1)
    out = np.exp(logmag) * np.exp(1j * phi * n)
    return out / np.linalg.norm(out) if normalize else out


def product_basis(local: list[np.ndarray]) -> np.ndarray:
    """Columns are all Kronecker products of the per-mode columns, first index slowest."""
    cols = []
    for idx in itertools.product(*(range(b.shape[1]) for b in local)):
        v = np.ones(1, dtype=complex)
        for b, k in zip(local, idx):
            v = np.kron(v, b[:, k])
        cols.append(v)
    return np.stack(cols, axis=1)


@dataclass(frozen=True)
class FAFParams:
    """Parameters in units of the single-photon loss rate."""

    N: int = 2
    Delta: float = -10.0
    U: float = 10.0
    G: complex = 0.0
    J: float = -10.0
    gamma: float = 1.0
    eta: float = 1.0
    M_pm: int = 2
    cutoff: int | None = None

    def __post_init__(self):
        if self.N not in (2, 3):
            raise ValueError(f"FAF model supports N in (2, 3), got {self.N}")
        if self.M_pm < 1:
            raise ValueError("M_pm must be at least 1")
        if self.cutoff is not None and self.cutoff < self.auto_cutoff:
            raise ValueError(
                f"cutoff {self.cutoff} below the drive-dependent minimum {self.auto_cutoff} "
                f"(G={abs(self.G):g}, W={self.W:g})")

    @property
    def W(self) -> float:
        return math.hypot(self.U, self.eta)

    @property
    def auto_cutoff(self) -> int:
        return max(10, math.ceil(5 * abs(self.G) / self.W)) if self.W > 0 else 10

    @property
    def n_cut(self) -> int:
        return self.cutoff or self.auto_cutoff

    @property
    def fock(self) -> FockSpec:
        return FockSpec(self.N, self.n_cut)


def faf_hamiltonian(p: FAFParams) -> sp.csr_matrix:
    fock = p.fock
    a = [boson_annihilate(fock, j) for j in range(p.N)]
    ad = [x.conj().T for x in a]
    H = sp.csr_matrix((fock.dim, fock.dim), dtype=complex)
    for j in range(p.N):
        H = H - p.Delta * (ad[j] @ a[j]) + 0.5 * p.U * (ad[j] @ ad[j] @ a[j] @ a[j])
        H = H + 0.5 * p.G * (ad[j] @ ad[j]) + 0.5 * np.conj(p.G) * (a[j] @ a[j])
    # ordered pairs, as written: each unordered pair enters twice
    for j, k in itertools.permutations(range(p.N), 2):
        H = H - 0.5 * p.J * (ad[j] @ a[k] + ad[k] @ a[j])
    return canonical(H)


def build_faf(p: FAFParams, pinv: PinvConfig | None = None):
    """Model plus a vacuum initial state on a per-mode Fock ladder basis of size ``M_pm``."""
    fock = p.fock
    if p.M_pm > fock.cutoff:
        raise ValueError("M_pm exceeds the Fock cutoff")
    jumps = []
    for j in range(p.N):
        a = boson_annihilate(fock, j)
        jumps.append(math.sqrt(p.gamma) * a)
        jumps.append(math.sqrt(p.eta) * (a @ a))
    model = LindbladModel(faf_hamiltonian(p), jumps)
    ladder = np.eye(fock.cutoff, p.M_pm, dtype=complex)
    z = product_basis([ladder] * p.N)
    B = np.zeros((z.shape[1],) * 2, dtype=complex)
    B[0, 0] = 1.0
    return model, LowRankState(z, B, pinv or PinvConfig())


def vacuum_density(fock: FockSpec) -> np.ndarray:
    rho = np.zeros((fock.dim, fock.dim), dtype=complex)
    rho[0, 0] = 1.0
    return rho


def _g1_combine(values):
    num, den = values
    if abs(den.real) < PHOTON_FLOOR:
        return math.nan
    return float((num / den).real)


def g1_observable(fock: FockSpec, i: int = 0, j: int = 1) -> Observable:
    """``<a_i^dagger a_j> / <a_i^dagger a_i>``; ``nan`` below ``PHOTON_FLOOR`` photons."""
    if i == j:
        raise ValueError("g1 needs two distinct modes")
    ai = boson_annihilate(fock, i)
    aj = boson_annihilate(fock, j)
    return Observable(f"g1_{i}{j}", (canonical(ai.conj().T @ aj), canonical(ai.conj().T @ ai)),
                      _g1_combine)


def photon_number(fock: FockSpec, mode: int) -> Observable:
    a = boson_annihilate(fock, mode)
    return Observable(f"n_{mode}", (canonical(a.conj().T @ a),))


def seed_basis(alpha: complex, cutoff: int, count: int, first: np.ndarray | None = None) -> np.ndarray:
    """Orthonormal single-mode basis from ``[first,] |a>, |-a>, a^+|a>, a^+|-a>, ...``."""
    from ..hilbert import local_annihilator

    adag = local_annihilator(cutoff).conj().T
    plus = coherent_amplitudes(alpha, cutoff)
    minus = coherent_amplitudes(-alpha, cutoff)
    cands = [] if first is None else [np.asarray(first, dtype=complex)]
    while len(cands) < 4 * count + 2:
        cands += [plus, minus]
        plus = adag @ plus
        minus = adag @ minus
    q = orthonormalize(np.stack(cands, axis=1))
    if q.shape[1] < count:
        # cat-like seeds span few directions at small alpha; pad with Fock states
        q = orthonormalize(np.column_stack([q, np.eye(cutoff, dtype=complex)]))
    return q[:, :count]

"""Dissipative XYZ Heisenberg lattice and its transverse-field Ising limit."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..hilbert import LatticeSpec, canonical, grid_edges, pauli_site
from ..lindblad import LindbladModel
from ..numerics import PinvConfig
from ..records import Observable
from ..state import LowRankState


@dataclass(frozen=True)
class XYZParams:
    """Couplings and fields in units of the decay rate ``gamma``."""

    Lx: int = 2
    Ly: int = 2
    J_x: float = 0.9
    J_y: float = 1.0
    J_z: float = 1.0
    h_z: float = 0.0
    h_x: float = 0.0
    gamma: float = 1.0
    initial_rank: int | None = None

    @property
    def lattice(self) -> LatticeSpec:
        return LatticeSpec(self.Lx, self.Ly)

    @property
    def n_sites(self) -> int:
        return self.Lx * self.Ly


def tfim_params(Lx=3, Ly=2, h_x=0.75, gamma=1.0, initial_rank=6) -> XYZParams:
    """Transverse-field Ising point: ``J_x = J_y = 0``, ``J_z = gamma``."""
    return XYZParams(Lx, Ly, 0.0, 0.0, 1.0, 0.0, h_x, gamma, initial_rank)


def _total(lattice: LatticeSpec, which: str) -> sp.csr_matrix:
    out = sp.csr_matrix((lattice.dim, lattice.dim), dtype=complex)
    for j in range(lattice.n_sites):
        out = out + pauli_site(lattice, j, which)
    return canonical(out)


def xyz_hamiltonian(p: XYZParams) -> sp.csr_matrix:
    lat = p.lattice
    n = lat.dim
    H = sp.csr_matrix((n, n), dtype=complex)
    paulis = {a: [pauli_site(lat, j, a) for j in range(lat.n_sites)] for a in "xyz"}
    for i, j in grid_edges(lat):
        for a, J in (("x", p.J_x), ("y", p.J_y), ("z", p.J_z)):
            if J != 0:
                H = H + J * (paulis[a][i] @ paulis[a][j])
    if p.h_z != 0:
        H = H + p.h_z * _total(lat, "z")
    if p.h_x != 0:
        H = H + p.h_x * _total(lat, "x")
    return canonical(H)


def hamming_basis(n_sites: int, count: int) -> np.ndarray:
    """All-down state followed by states of increasing Hamming distance from it.

    Basis index bit ``n_sites - 1 - j`` is site ``j``; a set bit means spin down.
    """
    dim = 2**n_sites
    if not 1 <= count <= dim:
        raise ValueError(f"cannot pick {count} basis states out of {dim}")
    all_down = dim - 1
    cols = []
    for k in range(n_sites + 1):
        for flipped in itertools.combinations(range(n_sites), k):
            idx = all_down
            for j in flipped:
                idx &= ~(1 << (n_sites - 1 - j))
            cols.append(idx)
            if len(cols) == count:
                z = np.zeros((dim, count), dtype=complex)
                z[cols, np.arange(count)] = 1.0
                return z
    raise AssertionError("unreachable")


def build_xyz(p: XYZParams, pinv: PinvConfig | None = None):
    """Model and initial state: all spins down, rank ``N + 1`` unless overridden."""
    lat = p.lattice
    H = xyz_hamiltonian(p)
    jumps = [math.sqrt(p.gamma) * pauli_site(lat, j, "minus") for j in range(lat.n_sites)]
    model = LindbladModel(H, jumps)
    m0 = p.initial_rank or lat.n_sites + 1
    z = hamming_basis(lat.n_sites, m0)
    B = np.zeros((m0, m0), dtype=complex)
    B[0, 0] = 1.0
    return model, LowRankState(z, B, pinv or PinvConfig())


def all_down_density(n_sites: int) -> np.ndarray:
    rho = np.zeros((2**n_sites,) * 2, dtype=complex)
    rho[-1, -1] = 1.0
    return rho


def xyz_observables(lattice: LatticeSpec) -> dict[str, Observable]:
    """``M_y``, ``dM_y = sqrt(<M_y^2>)``, ``S_xx`` and ``M_z`` for the lattice."""
    n = lattice.n_sites
    Sx = _total(lattice, "x")
    Sy = _total(lattice, "y")
    Sz = _total(lattice, "z")
    My = canonical(Sy / n)
    My2 = canonical((Sy @ Sy) / n**2)
    obs = {
        "M_y": Observable("M_y", (My,)),
        "dM_y": Observable("dM_y", (My2,), lambda e: math.sqrt(max(e[0].real, 0.0))),
        "M_z": Observable("M_z", (canonical(Sz / n),)),
    }
    if n > 1:
        Sxx = canonical((Sx @ Sx - n * sp.identity(lattice.dim, dtype=complex)) / (n * (n - 1)))
        obs["S_xx"] = Observable("S_xx", (Sxx,))
    return obs

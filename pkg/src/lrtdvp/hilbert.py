"""Sparse operators on spin lattices and truncated bosonic Fock spaces.

Ordering convention: site 0 is the leftmost Kronecker factor; lattice sites
are numbered row-major, ``site = row * Lx + col``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

_PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
    # basis order (|up>, |down>); sigma^- maps up -> down
    "minus": np.array([[0, 0], [1, 0]], dtype=complex),
    "plus": np.array([[0, 1], [0, 0]], dtype=complex),
}


@dataclass(frozen=True)
class LatticeSpec:
    """Open rectangular lattice of spin-1/2 sites."""

    Lx: int
    Ly: int = 1

    def __post_init__(self):
        if self.Lx < 1 or self.Ly < 1:
            raise ValueError(f"invalid lattice dimensions {self.Lx}x{self.Ly}")

    @property
    def n_sites(self) -> int:
        return self.Lx * self.Ly

    @property
    def local_dims(self) -> tuple[int, ...]:
        return (2,) * self.n_sites

    @property
    def dim(self) -> int:
        return 2**self.n_sites


@dataclass(frozen=True)
class FockSpec:
    """``modes`` bosonic modes, each truncated to ``cutoff`` number states."""

    modes: int
    cutoff: int

    def __post_init__(self):
        if self.modes < 1 or self.cutoff < 1:
            raise ValueError(f"invalid Fock space: {self.modes} modes, cutoff {self.cutoff}")

    @property
    def local_dims(self) -> tuple[int, ...]:
        return (self.cutoff,) * self.modes

    @property
    def dim(self) -> int:
        return self.cutoff**self.modes


def canonical(op) -> sp.csr_matrix:
    """CSR form with summed duplicates, sorted indices and explicit zeros removed."""
    out = sp.csr_matrix(op, dtype=complex)
    out.sum_duplicates()
    out.eliminate_zeros()
    out.sort_indices()
    return out


def triplets(op) -> list[tuple[int, int, complex]]:
    coo = canonical(op).tocoo()
    return sorted(zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist()))


def tensor_embed(ops, spec) -> sp.csr_matrix:
    """Kronecker embedding of local operators, identities elsewhere.

    Args:
        ops: iterable of ``(site, local_operator)`` with distinct sites.
        spec: a :class:`LatticeSpec` or :class:`FockSpec`.
    """
    dims = spec.local_dims
    local = {}
    for site, op in ops:
        if not 0 <= site < len(dims):
            raise IndexError(f"site {site} out of range for {len(dims)} sites")
        if site in local:
            raise ValueError(f"site {site} repeated in tensor_embed")
        op = sp.csr_matrix(op, dtype=complex)
        if op.shape != (dims[site], dims[site]):
            raise ValueError(f"local operator on site {site} has shape {op.shape}")
        local[site] = op
    out = sp.identity(1, dtype=complex, format="csr")
    # group consecutive identities into one factor to keep kron cheap
    run = 1
    for site, d in enumerate(dims):
        if site in local:
            if run > 1:
                out = sp.kron(out, sp.identity(run, dtype=complex), format="csr")
                run = 1
            out = sp.kron(out, local[site], format="csr")
        else:
            run *= d
    if run > 1:
        out = sp.kron(out, sp.identity(run, dtype=complex), format="csr")
    return canonical(out)


def pauli_site(lattice: LatticeSpec, site: int, which: str) -> sp.csr_matrix:
    if which not in _PAULI:
        raise ValueError(f"unknown Pauli operator {which!r}")
    if not 0 <= site < lattice.n_sites:
        raise IndexError(f"site {site} out of range for {lattice.n_sites} sites")
    return tensor_embed([(site, _PAULI[which])], lattice)


def local_annihilator(cutoff: int) -> sp.csr_matrix:
    n = np.arange(1, cutoff)
    return sp.csr_matrix(sp.diags(np.sqrt(n).astype(complex), offsets=1, shape=(cutoff, cutoff)))


def boson_annihilate(fock: FockSpec, mode: int) -> sp.csr_matrix:
    if not 0 <= mode < fock.modes:
        raise IndexError(f"mode {mode} out of range for {fock.modes} modes")
    return tensor_embed([(mode, local_annihilator(fock.cutoff))], fock)


def grid_edges(lattice: LatticeSpec) -> list[tuple[int, int]]:
    """Nearest-neighbour pairs (i < j) of the open Lx x Ly grid."""
    edges = []
    for row in range(lattice.Ly):
        for col in range(lattice.Lx):
            i = row * lattice.Lx + col
            if col + 1 < lattice.Lx:
                edges.append((i, i + 1))
            if row + 1 < lattice.Ly:
                edges.append((i, i + lattice.Lx))
    return edges


def sparse_apply(a, x: np.ndarray) -> np.ndarray:
    """Sparse (or product) operator times a dense tall matrix."""
    x = np.asarray(x)
    if a.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: operator {a.shape} vs block {x.shape}")
    return np.asarray(a @ x)


def is_hermitian(op, tol: float = 1e-12) -> bool:
    diff = sp.csr_matrix(op) - sp.csr_matrix(op).conj().T
    return diff.nnz == 0 or float(np.max(np.abs(diff.data))) <= tol


class ProductOperator:
    """Tensor product of dense single-mode factors, applied mode by mode.

    Used for readout operators such as the parity projector on every mode,
    whose explicit sparse form would be needlessly large.
    """

    def __init__(self, factors, local_dims):
        self.local_dims = tuple(int(d) for d in local_dims)
        self.factors = {}
        for site, op in factors:
            op = np.asarray(op.toarray() if sp.issparse(op) else op, dtype=complex)
            if op.shape != (self.local_dims[site],) * 2:
                raise ValueError(f"factor on site {site} has shape {op.shape}")
            self.factors[site] = op
        self.dim = int(np.prod(self.local_dims))
        self.shape = (self.dim, self.dim)

    def __matmul__(self, x):
        x = np.asarray(x)
        vec = x.ndim == 1
        block = x.reshape(self.dim, -1)
        m = block.shape[1]
        t = block.reshape(self.local_dims + (m,))
        for site, op in self.factors.items():
            t = np.moveaxis(np.tensordot(op, t, axes=([1], [site])), 0, site)
        out = t.reshape(self.dim, m)
        return out[:, 0] if vec else out

    def dot(self, x):
        return self @ x

    def toarray(self) -> np.ndarray:
        out = np.ones((1, 1), dtype=complex)
        for site, d in enumerate(self.local_dims):
            out = np.kron(out, self.factors.get(site, np.eye(d)))
        return out

    @property
    def H(self) -> ProductOperator:
        return ProductOperator(
            [(s, f.conj().T) for s, f in self.factors.items()], self.local_dims
        )

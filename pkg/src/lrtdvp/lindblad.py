"""Lindblad generators and their action on low-rank and dense states."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .hilbert import canonical, is_hermitian


@dataclass(frozen=True)
class LindbladModel:
    """Hamiltonian plus jump operators; ``H_eff = H - i/2 sum G^dagger G`` is precomputed."""

    H: sp.csr_matrix
    jumps: tuple
    H_eff: sp.csr_matrix = field(init=False, repr=False)

    def __post_init__(self):
        H = canonical(self.H)
        jumps = tuple(canonical(g) for g in self.jumps)
        n = H.shape[0]
        if H.shape != (n, n):
            raise ValueError(f"Hamiltonian must be square, got {H.shape}")
        for g in jumps:
            if g.shape != (n, n):
                raise ValueError(f"jump operator shape {g.shape} does not match {H.shape}")
        if not is_hermitian(H, 1e-10 * max(1.0, abs(H).max() if H.nnz else 1.0)):
            raise ValueError("Hamiltonian is not Hermitian")
        decay = sp.csr_matrix((n, n), dtype=complex)
        for g in jumps:
            decay = decay + g.conj().T @ g
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "jumps", jumps)
        object.__setattr__(self, "H_eff", canonical(H - 0.5j * decay))

    @property
    def dim(self) -> int:
        return self.H.shape[0]


def _check_block(model: LindbladModel, z: np.ndarray):
    if z.ndim != 2 or z.shape[0] != model.dim:
        raise ValueError(f"state block shape {z.shape} incompatible with dimension {model.dim}")


def apply_Ltilde(model: LindbladModel, z: np.ndarray, B: np.ndarray, S: np.ndarray | None = None):
    """``L(z B z^dagger) z`` using only sparse-times-tall products.

    ``S`` is the Gram matrix ``z^dagger z``; it is computed if not given.
    """
    _check_block(model, z)
    if B.shape != (z.shape[1], z.shape[1]):
        raise ValueError(f"B has shape {B.shape}, expected {(z.shape[1],) * 2}")
    if S is None:
        S = z.conj().T @ z
    HzB = model.H_eff @ (z @ B)
    out = -1j * (HzB @ S) + 1j * (z @ (HzB.conj().T @ z))
    for g in model.jumps:
        gz = g @ z
        out += gz @ (B @ (gz.conj().T @ z))
    return out


def apply_liouvillian_dense(model: LindbladModel, rho: np.ndarray) -> np.ndarray:
    """Dense ``-i[H, rho] + sum D[G] rho``; reference path for small systems."""
    rho = np.asarray(rho)
    if rho.shape != (model.dim, model.dim):
        raise ValueError(f"rho has shape {rho.shape}, expected {(model.dim,) * 2}")
    Hr = np.asarray(model.H_eff @ rho)
    # rho H_eff^dagger evaluated as (conj(H_eff) rho^T)^T, valid for any rho
    out = -1j * (Hr - np.asarray(model.H_eff.conj() @ rho.T).T)
    for g in model.jumps:
        gr = np.asarray(g @ rho)
        out += np.asarray(g.conj() @ gr.T).T
    return out


def kraus_operators(model: LindbladModel, dt: float) -> list[sp.csr_matrix]:
    """First-order Kraus set ``K0 = 1 - i H_eff dt``, ``K_s = sqrt(dt) G_s``."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    K0 = sp.identity(model.dim, dtype=complex, format="csr") - 1j * dt * model.H_eff
    return [canonical(K0)] + [canonical(np.sqrt(dt) * g) for g in model.jumps]

"""Variational equations of motion for ``rho = z B z^dagger``.

    dB/dt = (S^-1 L - Tr(S^-1 L)/M) S^-1
    dz/dt = (Lt - z S^-1 L) S^-1 B^+

with ``Lt = L(rho) z`` and ``L = z^dagger Lt``. ``S^-1`` is the cached
regularized Gram inverse; ``B^+`` is regularized with the same filter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lindblad import LindbladModel, apply_Ltilde
from .numerics import NotPositiveError, regularized_pinv
from .state import LowRankState


@dataclass
class RHS:
    """Derivatives plus the intermediate blocks other diagnostics reuse."""

    dB: np.ndarray
    dz: np.ndarray
    Ltil: np.ndarray
    L: np.ndarray
    SiL: np.ndarray
    # (1 - P) Lt, the out-of-manifold part of Lt
    leak: np.ndarray
    # max|dB - dB^dagger| before symmetrization
    hermiticity_defect: float
    min_B_eigenvalue: float

    @property
    def chi_projected(self) -> float:
        return float(abs(np.trace(self.SiL)))


def eom_rhs(
    state: LowRankState,
    model: LindbladModel,
    trace_preserving: bool = True,
    z: np.ndarray | None = None,
    B: np.ndarray | None = None,
) -> RHS:
    """Right-hand side at ``(z, B)`` (defaults to the state's own arrays).

    ``S_inv`` always comes from ``state``; pass ``trace_preserving=False`` to
    drop the Lagrange term, which leaves ``dB = S^-1 L S^-1``.
    """
    z = state.z if z is None else z
    B = state.B if B is None else B
    m = z.shape[1]
    if z.shape[0] != model.dim:
        raise ValueError(f"state dimension {z.shape[0]} does not match model {model.dim}")
    if B.shape != (m, m) or state.S_inv.shape != (m, m):
        raise ValueError("inconsistent rank between z, B and cached S_inv")
    Si = state.S_inv
    Ltil = apply_Ltilde(model, z, B)
    L = z.conj().T @ Ltil
    SiL = Si @ L
    if trace_preserving:
        dB = (SiL - (np.trace(SiL) / m) * np.eye(m)) @ Si
    else:
        dB = SiL @ Si
    defect = float(np.max(np.abs(dB - dB.conj().T))) if m else 0.0
    dB = 0.5 * (dB + dB.conj().T)
    Bh = 0.5 * (B + B.conj().T)
    wmin = float(np.linalg.eigvalsh(Bh)[0]) if m else 0.0
    B_inv = regularized_pinv(Bh, state.pinv, check_psd=False)
    leak = Ltil - z @ SiL
    # second projection pass removes the cancellation error of the first
    leak -= z @ (Si @ (z.conj().T @ leak))
    dz = leak @ (Si @ B_inv)
    return RHS(dB, dz, Ltil, L, SiL, leak, defect, wmin)


def pack(z: np.ndarray, B: np.ndarray) -> np.ndarray:
    return np.concatenate([z.ravel(), B.ravel()])


def unpack(y: np.ndarray, dim: int, rank: int):
    nz = dim * rank
    return y[:nz].reshape(dim, rank), y[nz:].reshape(rank, rank)


def check_positive(rhs: RHS, atol: float):
    if rhs.min_B_eigenvalue < -atol:
        raise NotPositiveError(
            f"population matrix has eigenvalue {rhs.min_B_eigenvalue:.3e} below -{atol:.1e}"
        )

"""Control quantities and rank changes of the variational basis."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .eom import RHS, eom_rhs
from .lindblad import LindbladModel
from .numerics import matrix_sqrt_psd
from .state import LowRankState, refresh_gram

CHI_VARIANTS = ("projected_trace", "residual_norm", "probability_ratio")
INFLATION_RULES = ("leakage_svd", "random_orthogonal")


@dataclass(frozen=True)
class RankPolicy:
    """Thresholds and bounds driving basis inflation and deflation.

    ``checkpoint_interval = 0`` inflates in place at the crossing; a positive
    value rewinds to the last checkpoint and inflates there.
    """

    chi_variant: str = "projected_trace"
    eps_max: float = 1e-4
    eps_min: float = 0.0
    M_min: int = 1
    M_max: int = 10**9
    checkpoint_interval: float = 0.0
    inflation_rule: str = "leakage_svd"
    retry_budget: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.chi_variant not in CHI_VARIANTS:
            raise ValueError(f"unknown chi variant {self.chi_variant!r}; choose from {CHI_VARIANTS}")
        if self.inflation_rule not in INFLATION_RULES:
            raise ValueError(f"unknown inflation rule {self.inflation_rule!r}")
        if not self.eps_max > 0 or not 0 <= self.eps_min < self.eps_max:
            raise ValueError(f"need 0 <= eps_min < eps_max, got {self.eps_min}, {self.eps_max}")
        if not 1 <= self.M_min <= self.M_max:
            raise ValueError(f"need 1 <= M_min <= M_max, got {self.M_min}, {self.M_max}")
        if self.checkpoint_interval < 0:
            raise ValueError("checkpoint_interval must be non-negative")

    @classmethod
    def fixed(cls, rank: int, chi_variant: str = "projected_trace") -> RankPolicy:
        """A policy that never changes the rank but still records chi."""
        return cls(chi_variant=chi_variant, eps_max=np.inf, eps_min=0.0, M_min=rank, M_max=rank)


def chi_projected_trace(state: LowRankState, model: LindbladModel, rhs: RHS | None = None) -> float:
    """``|Tr(S^-1 L)|``, the weight of ``L(rho)`` on the variational manifold."""
    rhs = rhs or eom_rhs(state, model)
    return rhs.chi_projected


def chi_residual(state: LowRankState, model: LindbladModel, rhs: RHS | None = None) -> float:
    """Frobenius norm of ``d rho/dt (variational) - L(rho)``.

    The difference is written as ``U V^dagger`` with ``M (D + 2)`` columns;
    with ``V = Q R`` its norm is ``||U R^dagger||``, so nothing of size
    ``N_H x N_H`` is formed and no squared norms are differenced.
    """
    rhs = rhs or eom_rhs(state, model)
    z, B = state.z, state.B
    zB = z @ B
    HzB = model.H_eff @ zB
    us = [z @ rhs.dB + rhs.dz @ B + 1j * HzB, zB]
    vs = [z, rhs.dz + 1j * (model.H_eff @ z)]
    for g in model.jumps:
        gz = g @ z
        us.append(-(gz @ B))
        vs.append(gz)
    U = np.hstack(us)
    V = np.hstack(vs)
    _, R = np.linalg.qr(V)
    return float(np.linalg.norm(U @ R.conj().T))


def chi_probability_ratio(state: LowRankState) -> float:
    """Smallest over largest eigenvalue of rho on the manifold; 0 for rank one."""
    if state.rank < 2:
        return 0.0
    p = _spectrum(state)[0]
    if p[0] <= 0:
        return 0.0
    return float(max(p[-1], 0.0) / p[0])


def compute_chi(variant: str, state: LowRankState, model: LindbladModel, rhs: RHS | None = None) -> float:
    if variant == "projected_trace":
        return chi_projected_trace(state, model, rhs)
    if variant == "residual_norm":
        return chi_residual(state, model, rhs)
    if variant == "probability_ratio":
        return chi_probability_ratio(state)
    raise ValueError(f"unknown chi variant {variant!r}")


def _spectrum(state: LowRankState):
    """Full spectrum (descending) and orthonormal eigenvectors of rho within span(z)."""
    q, r = np.linalg.qr(state.z)
    small = r @ state.B @ r.conj().T
    w, v = np.linalg.eigh(0.5 * (small + small.conj().T))
    return w[::-1], q @ v[:, ::-1]


def _project_out(state: LowRankState, v: np.ndarray) -> np.ndarray:
    for _ in range(2):
        v = v - state.z @ (state.S_inv @ (state.z.conj().T @ v))
    return v


def leakage_factor(state: LowRankState, model: LindbladModel) -> np.ndarray:
    """``F`` with ``F F^dagger = (1 - P) L(rho) (1 - P)``, the residual no tangent motion absorbs.

    Only the jump terms survive the two-sided projection, so
    ``F = (1 - P) [G_1 C, ..., G_D C]`` with ``C = z sqrt(B)``.
    """
    C = state.z @ matrix_sqrt_psd(state.B, atol=max(state.pinv.atol, 1e-9))
    if not model.jumps:
        return np.zeros((state.dim, 0), dtype=complex)
    return _project_out(state, np.hstack([g @ C for g in model.jumps]))


def new_direction(state: LowRankState, model: LindbladModel, rule: str,
                  rng: np.random.Generator | None = None, rhs: RHS | None = None) -> np.ndarray:
    """Unit vector orthogonal to the manifold, chosen by ``rule``."""
    v = None
    if rule == "leakage_svd":
        leak = leakage_factor(state, model)
        if leak.size and np.linalg.norm(leak) > 1e-14:
            u, s, _ = np.linalg.svd(leak, full_matrices=False)
            v = _project_out(state, u[:, 0])
            if np.linalg.norm(v) < 1e-8:
                v = None
    elif rule != "random_orthogonal":
        raise ValueError(f"unknown inflation rule {rule!r}")
    while v is None or np.linalg.norm(v) < 1e-8:
        rng = rng or np.random.default_rng(0)
        w = rng.standard_normal(state.dim) + 1j * rng.standard_normal(state.dim)
        v = _project_out(state, w / np.linalg.norm(w))
    return v / np.linalg.norm(v)


def inflate(state: LowRankState, model: LindbladModel, rule: str = "leakage_svd",
            rng: np.random.Generator | None = None, rhs: RHS | None = None) -> LowRankState:
    """Append one zero-population state; rho is unchanged."""
    if state.rank >= state.dim:
        raise ValueError("basis already spans the full Hilbert space")
    v = new_direction(state, model, rule, rng, rhs)
    m = state.rank
    B = np.zeros((m + 1, m + 1), dtype=complex)
    B[:m, :m] = state.B
    out = LowRankState(np.column_stack([state.z, v]), B, state.pinv,
                       S=np.zeros((m + 1, m + 1)), S_inv=np.zeros((m + 1, m + 1)))
    return refresh_gram(out)


def deflate(state: LowRankState):
    """Drop the least populated eigenstate of rho and renormalize the trace.

    Returns ``(new_state, discarded_probability)``; the new state is in
    diagonal form with orthonormal columns.
    """
    if state.rank < 2:
        raise ValueError("cannot deflate a rank-one state")
    p, eta = _spectrum(state)
    keep = np.clip(p[:-1], 0.0, None)
    kept_mass = float(np.sum(keep))
    if kept_mass <= 0:
        raise ValueError("no population left after deflation")
    out = LowRankState(eta[:, :-1].copy(), np.diag(keep / kept_mass).astype(complex), state.pinv)
    return out, float(p[-1])

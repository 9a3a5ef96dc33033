"""Kraus-step-then-truncate ensemble scheme, used as a baseline.

One step maps ``C -> T = [K_0 C, K_1 C, ..., K_D C]`` with the first-order
Kraus set and keeps the leading spectral factors of ``T T^dagger``, found by
diagonalizing the small matrix ``T^dagger T``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .eom import eom_rhs
from .lindblad import LindbladModel, kraus_operators
from .numerics import matrix_sqrt_psd
from .records import Observable, RunRecord
from .state import LowRankState, entropy_from_probabilities
from .tdvp import SolverConfig


class TruncationError(RuntimeError):
    pass


@dataclass
class TruncationState:
    """``rho = C C^dagger``; column norms squared are the probabilities."""

    C: np.ndarray

    @property
    def rank(self) -> int:
        return self.C.shape[1]

    @property
    def p(self) -> np.ndarray:
        return np.sum(np.abs(self.C) ** 2, axis=0)

    def trace(self) -> float:
        return float(np.sum(self.p))

    def dense(self) -> np.ndarray:
        return self.C @ self.C.conj().T

    def expectation(self, op) -> complex:
        return complex(np.sum(self.C.conj() * np.asarray(op @ self.C)))

    @classmethod
    def from_lowrank(cls, state: LowRankState) -> TruncationState:
        return cls(state.z @ matrix_sqrt_psd(state.B, atol=max(state.pinv.atol, 1e-9)))

    @classmethod
    def from_vectors(cls, vectors: np.ndarray, weights) -> TruncationState:
        return cls(np.asarray(vectors, dtype=complex) * np.sqrt(np.asarray(weights, dtype=float)))


@dataclass
class StepInfo:
    p_all: np.ndarray
    kept: int
    discarded: float


def truncation_step(ts: TruncationState, model: LindbladModel, dt: float, eps_max: float,
                    rank: int | None = None, normalize: bool = True):
    """One Euler Kraus step followed by spectral truncation.

    Keeps the smallest number of states with ``1 - sum(kept p) <= eps_max``,
    or exactly ``rank`` states if given. With ``normalize`` the spectrum is
    divided by its sum first, so the truncation error equals the discarded
    weight exactly. Returns ``(new_state, StepInfo)``.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    T = np.hstack([np.asarray(K @ ts.C) for K in kraus_operators(model, dt)])
    G = T.conj().T @ T
    w, v = np.linalg.eigh(0.5 * (G + G.conj().T))
    w, v = w[::-1], v[:, ::-1]
    w = np.clip(w, 0.0, None)
    total = float(np.sum(w))
    if normalize and total > 0:
        w = w / total
        v_scale = 1.0 / math.sqrt(total)
    else:
        v_scale = 1.0
    if rank is not None:
        if not 1 <= rank <= len(w):
            raise ValueError(f"rank {rank} outside [1, {len(w)}]")
        keep = rank
    else:
        err = (1.0 if normalize else total) - np.cumsum(w)
        ok = np.nonzero(err <= eps_max)[0]
        if ok.size == 0:
            raise TruncationError(
                f"truncation error {err[-1]:.3e} exceeds eps_max={eps_max:g} even at rank {len(w)}")
        keep = int(ok[0]) + 1
    keep = max(1, min(keep, int(np.count_nonzero(w > 0)) or 1))
    # columns sqrt(p_j) eta_j = T v_j (scaled by the normalization)
    C = (T @ v[:, :keep]) * v_scale
    discarded = float(np.sum(w[keep:]))
    return TruncationState(C), StepInfo(w, keep, discarded)


def integrate_truncation(ts: TruncationState, model: LindbladModel, cfg: SolverConfig, dt: float,
                         eps_max: float, observables: tuple[Observable, ...] = (),
                         max_rank: int | None = None) -> RunRecord:
    """Fixed-step baseline run; outputs are taken at the step nearest each output time."""
    wall = time.perf_counter()
    n_steps = max(1, int(round((cfg.t1 - cfg.t0) / dt)))
    h = (cfg.t1 - cfg.t0) / n_steps
    out_idx = {int(round((t - cfg.t0) / h)) for t in cfg.outputs()}
    rec = RunRecord("baseline", [o.name for o in observables])
    discarded = 0.0

    def emit(k, st):
        p = st.p
        rec.add_output(cfg.t0 + k * h, st.rank, math.nan, st.trace() - 1.0,
                       entropy_from_probabilities(p / max(p.sum(), 1e-300)),
                       [o.combine([st.expectation(op) for op in o.operators]) for o in observables])

    if 0 in out_idx:
        emit(0, ts)
    try:
        for k in range(1, n_steps + 1):
            ts, info = truncation_step(ts, model, h, eps_max)
            if max_rank is not None and ts.rank > max_rank:
                ts = TruncationState(ts.C[:, :max_rank] / math.sqrt(np.sum(info.p_all[:max_rank])))
                info.discarded = float(np.sum(info.p_all[max_rank:]))
            discarded += info.discarded
            rec.step_t.append(cfg.t0 + k * h)
            rec.step_rank.append(ts.rank)
            rec.step_trace_dev.append(ts.trace() - 1.0)
            if k in out_idx:
                emit(k, ts)
    except TruncationError as exc:
        rec.status = "aborted"
        rec.message = str(exc)
    rec.final_state = ts
    rec.final_time = rec.step_t[-1] if rec.step_t else cfg.t0
    rec.stats = {"n_steps": len(rec.step_t), "discarded_mass": discarded,
                 "peak_rank": max(rec.step_rank or [ts.rank]), "wall_time": time.perf_counter() - wall}
    return rec


@dataclass
class EquivalenceReport:
    dts: np.ndarray
    diffs: np.ndarray
    slope: float
    # max_j |(p~_j - p_j) - L_jj dt| per dt
    shift_errors: np.ndarray = field(default_factory=lambda: np.zeros(0))
    skipped: bool = False
    reason: str = ""


def _tdvp_euler(state: LowRankState, model: LindbladModel, dt: float) -> np.ndarray:
    rhs = eom_rhs(state, model, trace_preserving=False)
    z = state.z + dt * rhs.dz
    B = state.B + dt * rhs.dB
    return z @ B @ z.conj().T


def equivalence_probe(state: LowRankState, model: LindbladModel, dt_list,
                      degeneracy_tol: float = 1e-6) -> EquivalenceReport:
    """Compare one unconstrained TDVP Euler step with one truncation step at equal rank.

    ``state`` must be in diagonal form (orthonormal ``z``, diagonal ``B``).
    The report carries ``||rho_tdvp - rho_trunc||_F`` per ``dt`` and the
    fitted log-log slope.
    """
    dts = np.asarray(sorted(dt_list, reverse=True), dtype=float)
    z, B = state.z, state.B
    if np.max(np.abs(z.conj().T @ z - np.eye(state.rank))) > 1e-10:
        raise ValueError("probe requires orthonormal z")
    if np.max(np.abs(B - np.diag(np.diag(B)))) > 1e-12:
        raise ValueError("probe requires diagonal B")
    p = np.real(np.diag(B))
    gaps = np.abs(p[:, None] - p[None, :]) + np.eye(len(p))
    if len(p) > 1 and gaps.min() < degeneracy_tol:
        return EquivalenceReport(dts, np.full(len(dts), np.nan), math.nan, skipped=True,
                                 reason=f"populations within {degeneracy_tol:g} of each other")
    ts = TruncationState.from_vectors(z, p)
    Ljj = np.real(np.diag(z.conj().T @ (eom_rhs(state, model, trace_preserving=False).Ltil)))
    diffs, shifts = [], []
    order = np.argsort(-p)
    for dt in dts:
        new, info = truncation_step(ts, model, dt, 0.0, rank=state.rank, normalize=False)
        diffs.append(float(np.linalg.norm(_tdvp_euler(state, model, dt) - new.dense())))
        shifts.append(float(np.max(np.abs(info.p_all[:state.rank] - (p + Ljj * dt)[order]))))
    diffs = np.array(diffs)
    good = diffs > 0
    if good.sum() >= 2:
        slope = float(np.polyfit(np.log(dts[good]), np.log(diffs[good]), 1)[0])
    else:
        slope = math.nan
    return EquivalenceReport(dts, diffs, slope, np.array(shifts))

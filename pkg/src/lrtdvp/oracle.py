"""Dense full-space integration of the master equation, used as reference."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .lindblad import LindbladModel, apply_liouvillian_dense
from .records import Observable, RunRecord
from .state import DENSE_LIMIT, dense_entropy
from .tdvp import SolverConfig


class DenseLimitExceeded(ValueError):
    pass


@dataclass
class DenseRun:
    """Density matrices at the output times plus the matching record."""

    times: np.ndarray
    rhos: list
    record: RunRecord
    max_trace_dev: float = 0.0
    max_herm_defect: float = 0.0
    stats: dict = field(default_factory=dict)

    @property
    def final(self) -> np.ndarray:
        return self.rhos[-1]


def _check_dim(model: LindbladModel, limit: int):
    if model.dim > limit:
        raise DenseLimitExceeded(f"dense oracle limited to dimension {limit}, model has {model.dim}")


def integrate_dense(
    rho0: np.ndarray,
    model: LindbladModel,
    cfg: SolverConfig,
    observables: tuple[Observable, ...] = (),
    limit: int = DENSE_LIMIT,
) -> DenseRun:
    """Evolve a dense ``rho`` with an 8th-order adaptive Runge-Kutta scheme."""
    _check_dim(model, limit)
    n = model.dim
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape != (n, n):
        raise ValueError(f"rho0 has shape {rho0.shape}, expected {(n, n)}")
    wall = time.perf_counter()

    def rhs(t, y):
        return apply_liouvillian_dense(model, y.reshape(n, n)).ravel()

    ts = cfg.outputs()
    sol = solve_ivp(rhs, (cfg.t0, cfg.t1), rho0.ravel(), method="DOP853", t_eval=ts,
                    rtol=cfg.rel_tol, atol=cfg.abs_tol, max_step=cfg.max_step)
    rec = RunRecord("oracle", [o.name for o in observables])
    rhos = []
    tr_dev = herm = 0.0
    for k, t in enumerate(sol.t):
        rho = sol.y[:, k].reshape(n, n)
        rhos.append(rho)
        dev = float(np.real(np.trace(rho))) - 1.0
        tr_dev = max(tr_dev, abs(dev))
        herm = max(herm, float(np.max(np.abs(rho - rho.conj().T))))
        rec.add_output(t, n, np.nan, dev, dense_entropy(rho), [o.of_dense(rho) for o in observables])
    if not sol.success:
        rec.status = "aborted"
        rec.message = sol.message
    rec.final_time = float(sol.t[-1]) if len(sol.t) else cfg.t0
    rec.stats = {"n_rhs": int(sol.nfev), "wall_time": time.perf_counter() - wall}
    return DenseRun(np.asarray(sol.t), rhos, rec, tr_dev, herm, rec.stats)


@dataclass
class SteadyState:
    rho: np.ndarray
    residual: float
    time: float
    converged: bool


def steady_state_by_integration(
    model: LindbladModel,
    rho0: np.ndarray,
    cfg: SolverConfig,
    residual_tol: float = 1e-6,
    max_time: float = 1e3,
    limit: int = DENSE_LIMIT,
) -> SteadyState:
    """Integrate in windows of length ``cfg.t1 - cfg.t0`` until ``||L(rho)||_F <= residual_tol``.

    If ``max_time`` is reached first the last iterate is returned with
    ``converged = False``.
    """
    _check_dim(model, limit)
    window = cfg.t1 - cfg.t0
    rho = np.asarray(rho0, dtype=complex)
    t = cfg.t0
    while True:
        run = integrate_dense(rho, model, SolverConfig(
            t0=t, t1=t + window, abs_tol=cfg.abs_tol, rel_tol=cfg.rel_tol,
            max_step=cfg.max_step, n_outputs=2), limit=limit)
        rho, t = run.final, t + window
        rho = 0.5 * (rho + rho.conj().T)
        res = float(np.linalg.norm(apply_liouvillian_dense(model, rho)))
        if res <= residual_tol:
            return SteadyState(rho, res, t, True)
        if t >= max_time:
            return SteadyState(rho, res, t, False)

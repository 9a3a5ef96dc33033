"""Adaptive-step integration of the low-rank equations of motion.

One loop serves fixed-rank and rank-adaptive runs. With a positive
checkpoint interval, an upward threshold crossing rewinds to the last
checkpoint before it, enlarges the basis there and integrates again.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .control import RankPolicy, compute_chi, deflate, inflate
from .eom import eom_rhs, pack, unpack
from .lindblad import LindbladModel
from .numerics import NotPositiveError, PinvConfig
from .records import Observable, RankEvent, RunRecord
from .state import LowRankState, diagonalize, entropy_from_probabilities, refresh_gram
from .stepper import DormandPrince, StepSizeUnderflow

log = logging.getLogger(__name__)

TANGENCY_FLOOR = 1e-10


class TraceViolation(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    """Integrator settings shared by the low-rank engine and the dense oracle."""

    t0: float = 0.0
    t1: float = 1.0
    abs_tol: float = 1e-10
    rel_tol: float = 1e-8
    max_step: float = math.inf
    output_times: tuple = ()
    n_outputs: int = 51
    pinv: PinvConfig = field(default_factory=PinvConfig)
    trace_tol: float = 1e-8
    gram_tol: float = 1e-8
    keep_states: bool = False

    def __post_init__(self):
        if not self.t1 > self.t0:
            raise ValueError(f"need t1 > t0, got [{self.t0}, {self.t1}]")
        if not (self.abs_tol > 0 and self.rel_tol > 0 and self.trace_tol > 0):
            raise ValueError("tolerances must be positive")
        if not self.max_step > 0:
            raise ValueError("max_step must be positive")

    def outputs(self) -> np.ndarray:
        if self.output_times:
            ts = np.asarray(sorted(self.output_times), dtype=float)
            if ts[0] < self.t0 or ts[-1] > self.t1:
                raise ValueError("output times must lie in [t0, t1]")
            return ts
        return np.linspace(self.t0, self.t1, max(self.n_outputs, 2))


@dataclass
class Checkpoint:
    time: float
    state: LowRankState
    memory: dict
    lengths: dict
    rewinds: int = 0
    last_crossing: float = -math.inf


def save_checkpoint(state: LowRankState, t: float, memory: dict | None = None,
                    lengths: dict | None = None) -> Checkpoint:
    return Checkpoint(float(t), state.copy(), dict(memory or {}), dict(lengths or {}))


def restore_checkpoint(cp: Checkpoint):
    return cp.state.copy(), cp.time


class _Evaluator:
    """Right-hand side closure over the state's cached Gram inverse."""

    def __init__(self, state: LowRankState, model: LindbladModel):
        self.state = state
        self.model = model
        self.dim = state.dim
        self.rank = state.rank

    def __call__(self, t, y):
        z, B = unpack(y, self.dim, self.rank)
        rhs = eom_rhs(self.state, self.model, z=z, B=B)
        return pack(rhs.dz, rhs.dB), rhs


def tangency(state: LowRankState, rhs) -> float:
    """``||z^dagger dz|| / ||dz||``; ``nan`` when the projected residual is pure roundoff.

    At (numerically) full rank ``(1 - P) Lt`` vanishes to machine precision and
    the ratio of two roundoff quantities carries no information.
    """
    leak = float(np.linalg.norm(rhs.leak))
    if leak <= TANGENCY_FLOOR * float(np.linalg.norm(rhs.Ltil)):
        return math.nan
    return float(np.linalg.norm(state.z.conj().T @ rhs.dz) / np.linalg.norm(rhs.dz))


def _stops(cfg: SolverConfig, outputs: np.ndarray, dt_cp: float) -> np.ndarray:
    pts = set(outputs.tolist()) | {cfg.t1}
    if dt_cp > 0:
        n = int(math.floor((cfg.t1 - cfg.t0) / dt_cp + 1e-9))
        pts |= {cfg.t0 + k * dt_cp for k in range(1, n + 1)}
    out = []
    for p in sorted(pts):
        if p <= cfg.t0:
            continue
        # output and checkpoint grids built by different arithmetic may differ in the last bit
        if out and p - out[-1] <= 1e-12 * max(1.0, abs(p)):
            continue
        out.append(p)
    if out[-1] != cfg.t1 and cfg.t1 - out[-1] <= 1e-12 * max(1.0, abs(cfg.t1)):
        out[-1] = cfg.t1
    return np.array(out)


def _is_member(t, grid, tol=1e-12) -> bool:
    if len(grid) == 0:
        return False
    i = np.searchsorted(grid, t)
    return any(abs(grid[j] - t) <= tol * max(1.0, abs(t)) for j in (i - 1, i) if 0 <= j < len(grid))


def integrate(
    state: LowRankState,
    model: LindbladModel,
    cfg: SolverConfig,
    policy: RankPolicy | None = None,
    observables: tuple[Observable, ...] = (),
    callback=None,
) -> RunRecord:
    """Evolve ``state`` from ``cfg.t0`` to ``cfg.t1``.

    Args:
        policy: rank control; ``None`` keeps the rank fixed.
        callback: called as ``callback(t, state, chi)`` after every accepted
            step that is kept (steps undone by a rewind are not reported).

    The input state is not modified; the final state is ``record.final_state``.
    """
    wall = time.perf_counter()
    policy = policy or RankPolicy.fixed(state.rank)
    state = state.copy()
    if state.pinv != cfg.pinv:
        state.pinv = cfg.pinv
        refresh_gram(state)
    rng = np.random.default_rng(policy.seed)
    outputs = cfg.outputs()
    dt_cp = policy.checkpoint_interval
    cp_grid = np.array([cfg.t0 + k * dt_cp for k in range(1, int((cfg.t1 - cfg.t0) / dt_cp + 1e-9) + 1)]) if dt_cp > 0 else np.array([])
    stops = _stops(cfg, outputs, dt_cp)
    rec = RunRecord("lrtdvp", [o.name for o in observables])
    rec.stats = {"n_accepted": 0, "n_rejected": 0, "n_rhs": 0, "n_gram_refresh": 0, "n_trace_projections": 0,
                 "discarded_mass": 0.0, "peak_rank": state.rank}

    def make_stepper(st, t, memory=None):
        ev = _Evaluator(st, model)
        stp = DormandPrince(ev, t, pack(st.z, st.B), rtol=cfg.rel_tol, atol=cfg.abs_tol,
                            max_step=cfg.max_step, h0=(memory or {}).get("h"))
        if memory and "err_prev" in memory:
            stp.err_prev = memory["err_prev"]
        return stp

    def record_output(t, st, chi):
        p = diagonalize(st).p
        rec.add_output(t, st.rank, chi, st.trace() - 1.0, entropy_from_probabilities(p),
                       [o.of_state(st) for o in observables])
        if cfg.keep_states:
            rec.states.append((float(t), st.copy()))

    def chi_of(st, rhs):
        return compute_chi(policy.chi_variant, st, model, rhs)

    def accumulate(stp):
        rec.stats["n_accepted"] += stp.n_accepted
        rec.stats["n_rejected"] += stp.n_rejected
        rec.stats["n_rhs"] += stp.n_evals

    t = cfg.t0
    stepper = make_stepper(state, t)
    chi = chi_of(state, stepper.aux)
    if _is_member(t, outputs):
        record_output(t, state, chi)
    checkpoints: list[Checkpoint] = []
    if dt_cp > 0:
        checkpoints.append(save_checkpoint(state, t, stepper.memory(), rec.lengths()))
    hold = 0
    warned_max = False

    try:
        while t < cfg.t1 - 1e-12 * max(1.0, abs(cfg.t1)):
            t_stop = stops[np.searchsorted(stops, t, side="right")]
            t = stepper.step(t_stop)
            z, B = unpack(stepper.y, state.dim, state.rank)
            herm = float(np.max(np.abs(B - B.conj().T)))
            state.z = z.copy()
            state.B = 0.5 * (B + B.conj().T)
            rhs = stepper.aux
            if rhs.min_B_eigenvalue < -cfg.pinv.atol:
                raise NotPositiveError(
                    f"population matrix eigenvalue {rhs.min_B_eigenvalue:.3e} at t={t:.6g}")
            chi = chi_of(state, rhs)
            trace_dev = state.trace() - 1.0
            drift = state.gram_drift()
            tang = tangency(state, rhs)
            if abs(trace_dev) > 10 * cfg.trace_tol:
                raise TraceViolation(f"|Tr(rho) - 1| = {abs(trace_dev):.3e} at t={t:.6g}")

            # upward crossing with rewind: this step is discarded
            if (dt_cp > 0 and chi > policy.eps_max and state.rank < min(policy.M_max, state.dim)
                    and checkpoints):
                cp = next(c for c in reversed(checkpoints) if c.time < t)
                # a crossing that does not come later than the previous one is a retry
                cp.rewinds = cp.rewinds + 1 if t <= cp.last_crossing else 1
                cp.last_crossing = t
                if cp.rewinds > policy.retry_budget:
                    raise RuntimeError(
                        f"retry budget exhausted: {policy.retry_budget} inflations from checkpoint "
                        f"t={cp.time:.6g} did not move the crossing at t={t:.6g} "
                        f"(chi above {policy.eps_max:g})")
                accumulate(stepper)
                rec.truncate(cp.lengths)
                # checkpoints after cp are invalid once history is rewritten
                del checkpoints[checkpoints.index(cp) + 1:]
                m_before = cp.state.rank
                rec.events.append(RankEvent(t, "rewind", state.rank, m_before, chi))
                state, t = restore_checkpoint(cp)
                state = inflate(state, model, policy.inflation_rule, rng)
                rec.events.append(RankEvent(t, "inflate", m_before, state.rank, chi))
                cp.state = state.copy()
                cp.lengths = rec.lengths()
                rec.stats["peak_rank"] = max(rec.stats["peak_rank"], state.rank)
                stepper = make_stepper(state, t, cp.memory)
                continue

            rec.step_t.append(t)
            rec.step_rank.append(state.rank)
            rec.step_chi.append(chi)
            rec.step_trace_dev.append(trace_dev)
            rec.step_herm_defect.append(max(herm, rhs.hermiticity_defect))
            rec.step_gram_drift.append(drift)
            rec.step_tangency.append(tang)
            if callback is not None:
                callback(t, state, chi)

            changed = False
            if abs(trace_dev) > cfg.trace_tol:
                # project back onto the unit-trace constraint; drift is integrator error
                state.B = state.B / (1.0 + trace_dev)
                rec.stats["n_trace_projections"] += 1
                changed = True
            if drift > cfg.gram_tol:
                refresh_gram(state)
                rec.stats["n_gram_refresh"] += 1
                changed = True
            if hold > 0:
                hold -= 1
            elif chi > policy.eps_max and state.rank < min(policy.M_max, state.dim):
                m = state.rank
                state = inflate(state, model, policy.inflation_rule, rng)
                rec.events.append(RankEvent(t, "inflate", m, state.rank, chi))
                rec.stats["peak_rank"] = max(rec.stats["peak_rank"], state.rank)
                hold = 1
                changed = True
            elif chi < policy.eps_min and state.rank > policy.M_min:
                m = state.rank
                state, lost = deflate(state)
                rec.stats["discarded_mass"] += lost
                rec.events.append(RankEvent(t, "deflate", m, state.rank, chi, lost))
                hold = 1
                changed = True
            elif chi > policy.eps_max and not warned_max:
                warned_max = True
                rec.warnings.append(f"rank bound M_max={policy.M_max} reached at t={t:.6g}")
                rec.events.append(RankEvent(t, "max_rank", state.rank, state.rank, chi))
            if changed:
                accumulate(stepper)
                stepper = make_stepper(state, t, stepper.memory())
                chi = chi_of(state, stepper.aux)

            if _is_member(t, outputs):
                record_output(t, state, chi)
            if dt_cp > 0 and _is_member(t, cp_grid):
                checkpoints.append(save_checkpoint(state, t, stepper.memory(), rec.lengths()))
    except (StepSizeUnderflow, TraceViolation, NotPositiveError, RuntimeError) as exc:
        rec.status = "aborted"
        rec.message = str(exc)
        log.warning("integration aborted: %s", exc)
    accumulate(stepper)
    rec.final_state = state
    rec.final_time = float(t)
    rec.stats["wall_time"] = time.perf_counter() - wall
    return rec


def supervise(state, model, cfg, policy, observables=(), callback=None) -> RunRecord:
    """Rank-adaptive run; :func:`integrate` with a mandatory policy."""
    if policy is None:
        raise ValueError("supervise requires a RankPolicy")
    return integrate(state, model, cfg, policy, observables, callback)

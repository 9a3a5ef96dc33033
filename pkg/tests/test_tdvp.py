import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

import lrtdvp.tdvp as tdvp_mod
from lrtdvp.control import RankPolicy
from lrtdvp.eom import eom_rhs, pack, unpack
from lrtdvp.lindblad import LindbladModel, apply_liouvillian_dense
from lrtdvp.numerics import PinvConfig
from lrtdvp.oracle import integrate_dense
from lrtdvp.records import Observable
from lrtdvp.state import LowRankState, reconstruct_dense
from lrtdvp.stepper import DormandPrince, StepSizeUnderflow
from lrtdvp.tdvp import SolverConfig, integrate, restore_checkpoint, save_checkpoint, tangency

from conftest import SIGMA_Z, decay_model, random_model, random_state


def rho_dot(state, rhs):
    z, B = state.z, state.B
    return rhs.dz @ B @ z.conj().T + z @ rhs.dB @ z.conj().T + z @ B @ rhs.dz.conj().T


def excited_qubit(rank=2):
    z = np.eye(2, dtype=complex)[:, :rank]
    B = np.zeros((rank, rank), dtype=complex)
    B[0, 0] = 1.0
    return LowRankState(z, B)


# ---------------------------------------------------------------- equations of motion

def test_rhs_steady_state_of_decay():
    st_ = LowRankState(np.array([[0.0], [1.0]]), np.eye(1))
    rhs = eom_rhs(st_, decay_model())
    assert np.all(rhs.dB == 0) and np.all(rhs.dz == 0)


def test_rhs_finite_difference(rng):
    model = random_model(8, 2, rng)
    st_ = random_state(8, 3, rng, orthonormal=False)
    rhs = eom_rhs(st_, model)
    h = 1e-6
    plus = (st_.z + h * rhs.dz) @ (st_.B + h * rhs.dB) @ (st_.z + h * rhs.dz).conj().T
    minus = (st_.z - h * rhs.dz) @ (st_.B - h * rhs.dB) @ (st_.z - h * rhs.dz).conj().T
    fd = (plus - minus) / (2 * h)
    exact = rho_dot(st_, rhs)
    assert np.linalg.norm(fd - exact) <= 1e-4 * np.linalg.norm(exact)


def test_rhs_projected_dynamics_match_liouvillian(rng):
    # without the trace term the manifold block of rho_dot equals P L(rho) P
    model = random_model(10, 2, rng)
    st_ = random_state(10, 4, rng)
    rhs = eom_rhs(st_, model, trace_preserving=False)
    L = apply_liouvillian_dense(model, reconstruct_dense(st_))
    z = st_.z
    assert np.max(np.abs(z.conj().T @ rho_dot(st_, rhs) @ z - z.conj().T @ L @ z)) < 1e-10


def test_rhs_trace_preserving(rng):
    model = random_model(10, 2, rng)
    st_ = random_state(10, 3, rng, orthonormal=False)
    rhs = eom_rhs(st_, model)
    assert abs(np.trace(rho_dot(st_, rhs))) < 1e-10
    assert np.max(np.abs(rhs.dB - rhs.dB.conj().T)) == 0.0
    assert rhs.hermiticity_defect < 1e-10


@settings(max_examples=25, deadline=None)
@given(st.integers(4, 20), st.integers(1, 4), st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_tangency_property(n, m, d, seed):
    rng = np.random.default_rng(seed)
    m = min(m, n - 1)
    model = random_model(n, d, rng)
    st_ = random_state(n, m, rng, orthonormal=bool(seed % 2))
    rhs = eom_rhs(st_, model)
    tan = tangency(st_, rhs)
    assert math.isnan(tan) or tan <= 1e-8


def test_tangency_is_nan_at_full_rank(rng):
    model = random_model(4, 1, rng)
    st_ = random_state(4, 4, rng)
    assert math.isnan(tangency(st_, eom_rhs(st_, model)))


def test_rhs_shape_errors(rng):
    st_ = random_state(4, 2, rng)
    with pytest.raises(ValueError):
        eom_rhs(st_, random_model(5, 1, rng))
    with pytest.raises(ValueError):
        eom_rhs(st_, random_model(4, 1, rng), B=np.eye(3))


def test_pack_roundtrip(rng):
    z = rng.standard_normal((5, 2)) + 1j * rng.standard_normal((5, 2))
    B = rng.standard_normal((2, 2)) + 0j
    z2, B2 = unpack(pack(z, B), 5, 2)
    assert np.array_equal(z, z2) and np.array_equal(B, B2)


# ---------------------------------------------------------------- stepper

def test_stepper_exponential():
    f = lambda t, y: (-y, None)
    stp = DormandPrince(f, 0.0, np.array([1.0 + 0j]), rtol=1e-10, atol=1e-12)
    t = 0.0
    while t < 2.0:
        t = stp.step(2.0)
    assert t == 2.0
    assert abs(stp.y[0] - np.exp(-2.0)) < 1e-9


def test_stepper_respects_limits():
    f = lambda t, y: (np.ones_like(y), None)
    stp = DormandPrince(f, 0.0, np.zeros(1, complex), max_step=0.1)
    ts = [stp.step(1.0) for _ in range(3)]
    assert all(b - a <= 0.1 + 1e-15 for a, b in zip([0.0] + ts, ts))
    with pytest.raises(ValueError):
        stp.step(0.0)


def test_stepper_underflow_on_non_finite():
    calls = {"n": 0}

    def f(t, y):
        calls["n"] += 1
        return (np.full_like(y, np.nan) if calls["n"] > 1 else np.ones_like(y)), None

    stp = DormandPrince(f, 0.0, np.zeros(1, complex), h0=0.1)
    with pytest.raises(StepSizeUnderflow, match="underflow"):
        stp.step(1.0)


def test_stepper_rejects_linalg_failure():
    # a stage that raises is treated as a rejected attempt, not a crash
    state = {"fail": 2}

    def f(t, y):
        if state["fail"] > 0 and t > 0:
            state["fail"] -= 1
            raise np.linalg.LinAlgError("boom")
        return -y, None

    stp = DormandPrince(f, 0.0, np.ones(1, complex), h0=0.5)
    stp.step(1.0)
    assert stp.n_rejected >= 1


# ---------------------------------------------------------------- integration

def test_frozen_dynamics(rng):
    model = LindbladModel(sp.csr_matrix((6, 6), dtype=complex), [])
    st_ = random_state(6, 2, rng, orthonormal=False)
    rec = integrate(st_, model, SolverConfig(t1=1.0))
    assert rec.status == "ok"
    assert np.max(np.abs(reconstruct_dense(rec.final_state) - reconstruct_dense(st_))) < 1e-12


def test_qubit_decay_sigma_z():
    obs = (Observable("sz", (sp.csr_matrix(SIGMA_Z),)),)
    rec = integrate(excited_qubit(), decay_model(), SolverConfig(t1=5.0, n_outputs=21), observables=obs)
    t = rec.series("t")
    assert np.max(np.abs(rec.series("sz") - (2 * np.exp(-t) - 1))) < 1e-6
    assert rec.final_state is not None and rec.final_time == 5.0


def test_error_decreases_with_tolerance():
    errs = []
    for rt in (1e-4, 1e-5, 1e-6, 1e-7):
        rec = integrate(excited_qubit(), decay_model(),
                        SolverConfig(t1=5.0, abs_tol=1e-2 * rt, rel_tol=rt, n_outputs=2))
        errs.append(abs(reconstruct_dense(rec.final_state)[0, 0].real - np.exp(-5.0)))
    assert all(b < a for a, b in zip(errs, errs[1:]))


def test_full_rank_matches_oracle(rng):
    model = random_model(6, 2, rng)
    st_ = random_state(6, 6, rng)
    cfg = SolverConfig(t1=2.0, abs_tol=1e-10, rel_tol=1e-8, n_outputs=5, keep_states=True)
    rec = integrate(st_, model, cfg)
    dense = integrate_dense(reconstruct_dense(st_), model, cfg)
    for (t, s), rho in zip(rec.states, dense.rhos):
        assert np.linalg.norm(reconstruct_dense(s) - rho) < 10 * 1e-8


def test_output_times_and_callback(rng):
    model = random_model(5, 1, rng)
    seen = []
    cfg = SolverConfig(t1=1.0, output_times=(0.0, 0.25, 0.8, 1.0))
    rec = integrate(random_state(5, 2, rng), model, cfg, callback=lambda t, s, chi: seen.append(t))
    assert rec.times == [0.0, 0.25, 0.8, 1.0]
    assert seen == rec.step_t and seen[-1] == 1.0
    with pytest.raises(ValueError):
        SolverConfig(t1=1.0, output_times=(2.0,)).outputs()


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(t0=1.0, t1=1.0)
    with pytest.raises(ValueError):
        SolverConfig(abs_tol=0.0)
    with pytest.raises(ValueError):
        SolverConfig(max_step=0.0)


def test_trace_violation_aborts(rng):
    model = random_model(6, 2, rng, scale=2.0)
    cfg = SolverConfig(t1=2.0, abs_tol=1e-3, rel_tol=1e-3, trace_tol=1e-17)
    rec = integrate(random_state(6, 2, rng), model, cfg)
    assert rec.status == "aborted" and "Tr(rho)" in rec.message
    assert rec.final_time < 2.0


def test_trace_and_hermiticity_along_run(rng):
    model = random_model(12, 2, rng)
    rec = integrate(random_state(12, 3, rng), model, SolverConfig(t1=3.0))
    assert max(abs(x) for x in rec.step_trace_dev) <= 1e-8
    assert max(rec.step_herm_defect) <= 1e-7
    assert np.allclose(rec.final_state.B, rec.final_state.B.conj().T, atol=1e-9)
    assert max(rec.step_gram_drift) <= 1e-6


def test_checkpoint_restore_reproduces_run(rng):
    model = random_model(6, 2, rng)
    st0 = random_state(6, 3, rng)
    cfg = SolverConfig(t0=0.0, t1=1.0, n_outputs=5)
    mid = integrate(st0, model, SolverConfig(t1=0.5, n_outputs=2))
    cp = save_checkpoint(mid.final_state, mid.final_time)
    s1, t1 = restore_checkpoint(cp)
    s2, t2 = restore_checkpoint(cp)
    assert t1 == t2 == 0.5
    tail = SolverConfig(t0=0.5, t1=1.0, n_outputs=3)
    r1 = integrate(s1, model, tail, observables=(Observable("x", (sp.identity(6, format="csr"),)),))
    r2 = integrate(s2, model, tail, observables=(Observable("x", (sp.identity(6, format="csr"),)),))
    assert r1.values == r2.values and r1.step_t == r2.step_t
    # the saved snapshot is independent of later mutation
    s1.B[0, 0] = 99.0
    assert restore_checkpoint(cp)[0].B[0, 0] != 99.0


def test_retry_budget_exhaustion(monkeypatch):
    from lrtdvp.models.spin import XYZParams, build_xyz

    model, st_ = build_xyz(XYZParams(2, 2))
    # an inflation that adds nothing cannot move the crossing
    monkeypatch.setattr(tdvp_mod, "inflate", lambda s, *a, **k: s.copy())
    rec = integrate(st_, model, SolverConfig(t1=2.0),
                    RankPolicy(eps_max=1e-6, checkpoint_interval=0.5, retry_budget=3))
    assert rec.status == "aborted" and "retry budget" in rec.message
    assert sum(e.kind == "rewind" for e in rec.events) == 3

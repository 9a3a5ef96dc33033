"""Low-rank density matrices ``rho = z B z^dagger`` and their diagnostics."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import PinvConfig, hermitian_eigen, matrix_sqrt_psd, regularized_pinv

DENSE_LIMIT = 4096
NULL_CUTOFF = 1e-12
CHECKPOINT_VERSION = "lrtdvp-checkpoint/1"


@dataclass
class LowRankState:
    """Variational state: columns of ``z`` span the manifold, ``B`` holds populations.

    ``S`` and ``S_inv`` cache the Gram matrix and its regularized inverse.
    They are refreshed explicitly, never implicitly on mutation.
    """

    z: np.ndarray
    B: np.ndarray
    pinv: PinvConfig = field(default_factory=PinvConfig)
    S: np.ndarray = field(default=None, repr=False)
    S_inv: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.z = np.array(self.z, dtype=complex)
        self.B = np.array(self.B, dtype=complex)
        if self.z.ndim != 2:
            raise ValueError("z must be a 2-d array")
        m = self.z.shape[1]
        if self.B.shape != (m, m):
            raise ValueError(f"B has shape {self.B.shape}, expected {(m, m)}")
        if self.S is None or self.S_inv is None:
            refresh_gram(self)

    @property
    def rank(self) -> int:
        return self.z.shape[1]

    @property
    def dim(self) -> int:
        return self.z.shape[0]

    def trace(self) -> float:
        """``Tr(B z^dagger z)`` with the actual Gram matrix."""
        return float(np.real(np.trace(self.B @ (self.z.conj().T @ self.z))))

    def gram_drift(self) -> float:
        g = self.z.conj().T @ self.z
        return float(np.max(np.abs(g - self.S))) if g.size else 0.0

    def copy(self) -> LowRankState:
        return LowRankState(
            self.z.copy(), self.B.copy(), self.pinv, self.S.copy(), self.S_inv.copy()
        )


@dataclass(frozen=True)
class SpectralForm:
    """``rho = sum_j p_j |eta_j><eta_j|`` with ``p`` descending and ``eta`` orthonormal."""

    p: np.ndarray
    eta: np.ndarray


def refresh_gram(state: LowRankState) -> LowRankState:
    state.S = state.z.conj().T @ state.z
    state.S = 0.5 * (state.S + state.S.conj().T)
    state.S_inv = regularized_pinv(state.S, state.pinv)
    return state


def from_pure(vectors: np.ndarray, pinv: PinvConfig | None = None) -> LowRankState:
    """State with orthonormalized columns of ``vectors`` and all weight on the first."""
    q = orthonormalize(np.asarray(vectors, dtype=complex))
    B = np.zeros((q.shape[1],) * 2, dtype=complex)
    B[0, 0] = 1.0
    return LowRankState(q, B, pinv or PinvConfig())


def orthonormalize(vectors: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Gram-Schmidt (two passes) keeping column order and dropping dependent columns."""
    cols = []
    for v in np.asarray(vectors, dtype=complex).T:
        w = v.copy()
        for _ in range(2):
            for q in cols:
                w -= q * np.vdot(q, w)
        nrm = np.linalg.norm(w)
        if nrm > tol * max(1.0, np.linalg.norm(v)):
            cols.append(w / nrm)
    if not cols:
        raise ValueError("no linearly independent vectors")
    return np.stack(cols, axis=1)


def from_density(rho: np.ndarray, basis: np.ndarray, pinv: PinvConfig | None = None) -> LowRankState:
    """Project a dense ``rho`` onto the span of ``basis`` (orthonormalized)."""
    q = orthonormalize(basis)
    B = q.conj().T @ rho @ q
    return LowRankState(q, 0.5 * (B + B.conj().T), pinv or PinvConfig())


def expectation(state: LowRankState, op) -> complex:
    """``Tr(op rho)`` as ``Tr(B z^dagger (op z))``."""
    if op.shape[1] != state.dim:
        raise ValueError(f"operator shape {op.shape} does not match dimension {state.dim}")
    az = np.asarray(op @ state.z)
    return complex(np.sum(state.B.T * (state.z.conj().T @ az)))


def expectation_dense(rho: np.ndarray, op) -> complex:
    if op.shape[1] != rho.shape[0]:
        raise ValueError(f"operator shape {op.shape} does not match dimension {rho.shape[0]}")
    return complex(np.trace(np.asarray(op @ rho)))


def diagonalize(state: LowRankState, null_cutoff: float = NULL_CUTOFF) -> SpectralForm:
    """Spectral form via the small matrix ``C^dagger C`` with ``C = z sqrt(B)``.

    Probabilities below ``null_cutoff * max(p)`` are dropped.
    """
    C = state.z @ matrix_sqrt_psd(state.B, atol=max(state.pinv.atol, 1e-9))
    w, v = hermitian_eigen(C.conj().T @ C, rtol=1e-8)
    pmax = w[0] if w.size else 0.0
    keep = w > null_cutoff * max(pmax, 0.0)
    if not np.any(keep):
        return SpectralForm(np.zeros(0), np.zeros((state.dim, 0), dtype=complex))
    p = w[keep]
    eta = (C @ v[:, keep]) / np.sqrt(p)
    return SpectralForm(p, eta)


def entropy_from_probabilities(p) -> float:
    p = np.asarray(p, dtype=float)
    if p.size == 0:
        return 0.0
    p = p[p > NULL_CUTOFF * p.max()]
    return float(max(-np.sum(p * np.log(p)), 0.0))


def von_neumann_entropy(state: LowRankState) -> float:
    return entropy_from_probabilities(diagonalize(state).p)


def dense_entropy(rho: np.ndarray) -> float:
    w = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))
    return entropy_from_probabilities(np.clip(w, 0.0, None))


def overlap(a: np.ndarray, b: np.ndarray) -> float:
    """Normalized Hilbert-Schmidt overlap ``Tr(a^dagger b) / sqrt(Tr(a^dagger a) Tr(b^dagger b))``."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    na = np.vdot(a, a).real
    nb = np.vdot(b, b).real
    if na == 0 or nb == 0:
        raise ValueError("overlap undefined for a zero matrix")
    return float(np.real(np.vdot(a, b)) / np.sqrt(na * nb))


def reconstruct_dense(state: LowRankState, limit: int = DENSE_LIMIT) -> np.ndarray:
    if state.dim > limit:
        raise ValueError(f"dimension {state.dim} exceeds dense limit {limit}")
    rho = state.z @ state.B @ state.z.conj().T
    return 0.5 * (rho + rho.conj().T)


def save_checkpoint_text(path, state: LowRankState, t: float, extra: dict | None = None):
    """Textual dump of ``(t, M, z, B)`` with every float at 17 significant digits."""

    def fmt(a):
        return [["%.17g" % x for x in row] for row in np.asarray(a).view(float).reshape(a.shape[0], -1)]

    doc = {
        "version": CHECKPOINT_VERSION,
        "t": "%.17g" % t,
        "dim": state.dim,
        "rank": state.rank,
        "z": fmt(state.z),
        "B": fmt(state.B),
        "pinv": {"atol": state.pinv.atol, "rtol": state.pinv.rtol,
                 "filter_exponent": state.pinv.filter_exponent},
        "extra": extra or {},
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint_text(path):
    """Inverse of :func:`save_checkpoint_text`; returns ``(state, t, extra)``."""
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")

    def parse(rows, ncols):
        a = np.array([[float(x) for x in row] for row in rows], dtype=float)
        return a.reshape(-1, 2 * ncols).view(complex) if a.size else np.zeros((0, ncols), complex)

    m = int(doc["rank"])
    z = parse(doc["z"], m).reshape(int(doc["dim"]), m)
    B = parse(doc["B"], m).reshape(m, m)
    state = LowRankState(z, B, PinvConfig(**doc["pinv"]))
    return state, float(doc["t"]), doc.get("extra", {})


def save_checkpoint_binary(path, state: LowRankState, t: float):
    np.savez(path, version=CHECKPOINT_VERSION, t=t, z=state.z, B=state.B,
             pinv=np.array([state.pinv.atol, state.pinv.rtol, state.pinv.filter_exponent]))


def load_checkpoint_binary(path):
    with np.load(path) as f:
        if str(f["version"]) != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {f['version']!r}")
        atol, rtol, n = f["pinv"]
        state = LowRankState(f["z"], f["B"], PinvConfig(float(atol), float(rtol), int(n)))
        return state, float(f["t"])

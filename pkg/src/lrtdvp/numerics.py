"""Small dense Hermitian kernels used by the equations of motion.

All matrices handled here are M x M with M at most a few hundred, so the
routines lean on LAPACK through numpy and never touch the large Hilbert
space dimension.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HERMITIAN_RTOL = 1e-12


class NotHermitianError(ValueError):
    """Raised when a matrix that should be Hermitian is not."""


class NotPositiveError(ValueError):
    """Raised when a matrix that should be positive semi-definite is not."""


@dataclass(frozen=True)
class PinvConfig:
    """Parameters of the smooth spectral filter.

    The cutoff is ``lam2 = max(atol, rtol * max|w|)`` and each eigenvalue
    ``w`` is weighted by ``1 / (1 + (lam2 / w) ** filter_exponent)``.
    """

    atol: float = 1e-6
    rtol: float = 1e-5
    filter_exponent: int = 6

    def __post_init__(self):
        if not self.atol > 0:
            raise ValueError(f"atol must be positive, got {self.atol}")
        if self.rtol < 0:
            raise ValueError(f"rtol must be non-negative, got {self.rtol}")
        if int(self.filter_exponent) != self.filter_exponent or self.filter_exponent < 1:
            raise ValueError("filter_exponent must be a positive integer")


def hermiticity_defect(a: np.ndarray) -> float:
    """Max-norm of ``a - a^dagger``."""
    a = np.asarray(a)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - a.conj().T)))


def check_hermitian(a: np.ndarray, rtol: float = HERMITIAN_RTOL) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    scale = max(float(np.max(np.abs(a))) if a.size else 0.0, 1.0)
    defect = hermiticity_defect(a)
    if defect > rtol * scale:
        raise NotHermitianError(
            f"matrix is not Hermitian: max|A - A^H| = {defect:.3e} (scale {scale:.3e})"
        )
    return a


def hermitian_eigen(a: np.ndarray, rtol: float = HERMITIAN_RTOL):
    """Eigendecomposition of a Hermitian matrix, eigenvalues descending.

    Returns ``(w, v)`` with ``a = v @ diag(w) @ v^dagger``.
    """
    a = check_hermitian(a, rtol)
    w, v = np.linalg.eigh(0.5 * (a + a.conj().T))
    return w[::-1].copy(), v[:, ::-1].copy()


def filter_weight(w, lam2: float, exponent: int = 6):
    """The smooth cutoff f(w) = 1 / (1 + (lam2/w)^exponent), with f(0) = 0."""
    w = np.abs(np.asarray(w, dtype=float))
    out = np.zeros_like(w)
    nz = w > 0
    out[nz] = 1.0 / (1.0 + (lam2 / w[nz]) ** exponent)
    return out


def _cutoff(w: np.ndarray, cfg: PinvConfig) -> float:
    wmax = float(np.max(np.abs(w))) if w.size else 0.0
    return max(cfg.atol, cfg.rtol * wmax)


def _inverse_weights(w: np.ndarray, lam2: float, n: int) -> np.ndarray:
    # f(w)/w written as w^(n-1) / (w^n + lam2^n) to stay finite at w -> 0.
    # Scaling by lam2 first keeps the powers in floating point range.
    x = w / lam2
    return (x ** (n - 1) / (x**n + 1.0)) / lam2


def regularized_pinv(
    a: np.ndarray,
    cfg: PinvConfig | None = None,
    check_psd: bool = True,
) -> np.ndarray:
    """Smoothly regularized inverse of a Hermitian positive semi-definite matrix.

    For a PSD matrix the singular value and eigenvalue decompositions agree,
    so the filter is applied to the eigenvalues directly. Small negative
    eigenvalues (above ``-atol``) are tolerated and inverted with their sign.

    Raises:
        NotPositiveError: if an eigenvalue is below ``-atol`` and ``check_psd``.
    """
    cfg = cfg or PinvConfig()
    a = check_hermitian(a, 1e-10)
    if a.shape[0] == 0:
        return a.copy()
    w, v = np.linalg.eigh(0.5 * (a + a.conj().T))
    if check_psd and w[0] < -cfg.atol:
        raise NotPositiveError(f"matrix has eigenvalue {w[0]:.3e} below -atol={cfg.atol:.1e}")
    lam2 = _cutoff(w, cfg)
    g = _inverse_weights(w, lam2, cfg.filter_exponent)
    return (v * g) @ v.conj().T


def matrix_sqrt_psd(a: np.ndarray, atol: float = 1e-6) -> np.ndarray:
    """Hermitian square root of a PSD matrix; eigenvalues in (-atol, 0] are clipped."""
    a = check_hermitian(a, 1e-10)
    if a.shape[0] == 0:
        return a.copy()
    w, v = np.linalg.eigh(0.5 * (a + a.conj().T))
    if w[0] < -atol:
        raise NotPositiveError(f"matrix has eigenvalue {w[0]:.3e} below -atol={atol:.1e}")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.conj().T

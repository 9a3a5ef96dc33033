"""Dormand-Prince 5(4) stepper with proportional-integral step control.

The stepper works on flat complex vectors and exposes one accepted step at a
time so that callers can inspect, modify or rewind the state between steps.
"""

from __future__ import annotations

import numpy as np

C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
# difference between 5th and embedded 4th order weights
E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0
BETA = 0.04
ALPHA = 0.2 - 0.75 * BETA


class StepSizeUnderflow(RuntimeError):
    def __init__(self, t, h):
        super().__init__(f"step size underflow at t={t:.6g} (h={h:.3e})")
        self.t = t
        self.h = h


class DormandPrince:
    """Adaptive explicit RK stepper.

    ``fun(t, y)`` must return ``(dy, aux)``; ``aux`` of the last stage, which is
    evaluated at the accepted point (FSAL), is kept as ``self.aux``.
    """

    def __init__(self, fun, t0, y0, rtol=1e-8, atol=1e-10, h0=None, max_step=np.inf):
        self.fun = fun
        self.rtol = rtol
        self.atol = atol
        self.max_step = max_step
        self.t = float(t0)
        self.y = np.asarray(y0, dtype=complex).copy()
        self.f, self.aux = fun(self.t, self.y)
        self.h = h0 if h0 is not None else self._initial_step()
        self.err_prev = 1e-4
        self.n_accepted = 0
        self.n_rejected = 0
        self.n_evals = 1

    def _norm(self, x):
        return float(np.sqrt(np.mean(np.abs(x) ** 2))) if x.size else 0.0

    def _initial_step(self):
        scale = self.atol + self.rtol * np.abs(self.y)
        d0 = self._norm(self.y / scale)
        d1 = self._norm(self.f / scale)
        h = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
        return float(min(h, self.max_step))

    def reset(self, t, y, h=None, err_prev=None):
        """Replace the current point, e.g. after a rank change or rewind."""
        self.t = float(t)
        self.y = np.asarray(y, dtype=complex).copy()
        self.f, self.aux = self.fun(self.t, self.y)
        self.n_evals += 1
        if h is not None:
            self.h = h
        if err_prev is not None:
            self.err_prev = err_prev

    def memory(self) -> dict:
        return {"h": self.h, "err_prev": self.err_prev}

    def step(self, t_limit):
        """Take one accepted step without passing ``t_limit``; returns the new time."""
        if t_limit <= self.t:
            raise ValueError("t_limit must be ahead of the current time")
        h = min(self.h, self.max_step)
        while True:
            last = False
            if self.t + h >= t_limit or self.t + 1.0001 * h >= t_limit:
                h_try = t_limit - self.t
                last = True
            else:
                h_try = h
            if h_try < 1e-14 * max(1.0, abs(self.t)):
                raise StepSizeUnderflow(self.t, h_try)
            try:
                y_new, f_new, aux_new, err = self._attempt(h_try)
            except (np.linalg.LinAlgError, FloatingPointError):
                # non-finite stage values; treat like a failed error test
                err = np.inf
            if np.isfinite(err) and err <= 1.0:
                break
            self.n_rejected += 1
            fac = MIN_FACTOR if not np.isfinite(err) else max(MIN_FACTOR, SAFETY * err**-0.2)
            h = h_try * fac
        err = max(err, 1e-10)
        fac = SAFETY * err**-ALPHA * self.err_prev**BETA
        fac = min(MAX_FACTOR, max(MIN_FACTOR, fac))
        # a step clipped to t_limit says little about the natural step size
        self.h = max(self.h, h_try * fac) if last else h_try * fac
        self.h = min(self.h, self.max_step)
        self.err_prev = err
        self.t = t_limit if last else self.t + h_try
        self.y, self.f, self.aux = y_new, f_new, aux_new
        self.n_accepted += 1
        return self.t

    def _attempt(self, h):
        k = [self.f]
        for i in range(1, 7):
            dy = sum(a * kj for a, kj in zip(A[i], k) if a != 0.0)
            fi, aux = self.fun(self.t + C[i] * h, self.y + h * dy)
            k.append(fi)
        self.n_evals += 6
        y_new = self.y + h * sum(b * kj for b, kj in zip(B5, k) if b != 0.0)
        err_vec = h * sum(e * kj for e, kj in zip(E, k) if e != 0.0)
        scale = self.atol + self.rtol * np.maximum(np.abs(self.y), np.abs(y_new))
        with np.errstate(invalid="ignore", over="ignore"):
            err = self._norm(err_vec / scale)
        return y_new, k[6], aux, err

"""Adaptive Dormand-Prince 5(4) integrator for complex array ODEs."""

from __future__ import annotations

import numpy as np

# Dormand & Prince (1980) tableau, 5th-order solution with embedded 4th order.
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B_LOW = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200,
                   187 / 2100, 1 / 40])
_E = _B - _B_LOW

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 5.0


class SolverError(RuntimeError):
    pass


class DormandPrince:
    """Integrates ``dy/dt = f(t, y)`` with local error control.

    The error norm is the RMS of ``err / (atol + rtol * max(|y|, |y_new|))``;
    a step is accepted when it is <= 1. The last accepted step size is kept
    between calls so consecutive segments do not restart from scratch.
    """

    def __init__(self, rtol: float = 1e-8, atol: float = 1e-10, max_steps: int = 5_000_000,
                 min_step: float = 1e-22):
        if rtol <= 0 or atol <= 0:
            raise ValueError("tolerances must be positive")
        self.rtol = rtol
        self.atol = atol
        self.max_steps = max_steps
        self.min_step = min_step
        self.h = None
        self.n_steps = 0
        self.n_rejected = 0
        self.n_evals = 0

    def _norm(self, err, y0, y1) -> float:
        scale = self.atol + self.rtol * np.maximum(np.abs(y0), np.abs(y1))
        return float(np.sqrt(np.mean(np.abs(err / scale) ** 2)))

    def _initial_step(self, f, t, y, f0) -> float:
        scale = self.atol + self.rtol * np.abs(y)
        d0 = np.sqrt(np.mean(np.abs(y / scale) ** 2))
        d1 = np.sqrt(np.mean(np.abs(f0 / scale) ** 2))
        h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
        f1 = f(t + h0, y + h0 * f0)
        self.n_evals += 1
        d2 = np.sqrt(np.mean(np.abs((f1 - f0) / scale) ** 2)) / h0
        if max(d1, d2) <= 1e-15:
            h1 = max(1e-6, h0 * 1e-3)
        else:
            h1 = (0.01 / max(d1, d2)) ** (1 / 5)
        return min(100 * h0, h1)

    def integrate(self, f, t0: float, y0: np.ndarray, t1: float,
                  out_times=(), callback=None) -> np.ndarray:
        """Advance from ``t0`` to ``t1``; ``callback(t, y)`` fires at each ``out_times`` entry.

        Steps are shortened to land exactly on the requested output times.
        """
        y = np.array(y0, dtype=complex, copy=True)
        t = t0
        if t1 < t0:
            raise ValueError("cannot integrate backwards")
        outs = sorted({float(x) for x in out_times if t0 <= x <= t1})
        oi = 0
        while oi < len(outs) and outs[oi] <= t0:
            if callback:
                callback(t0, y)
            oi += 1
        if t1 == t0:
            return y
        k = [None] * 7
        k[0] = f(t, y)
        self.n_evals += 1
        h = self.h if self.h else self._initial_step(f, t, y, k[0])
        span = t1 - t0
        steps = 0
        while t < t1:
            target = outs[oi] if oi < len(outs) else t1
            last = False
            if t + h >= target - 1e-12 * span:
                h_try = target - t
                last = True
            else:
                h_try = h
            if h_try < self.min_step and target - t > self.min_step:
                raise SolverError(f"step size underflow at t={t:.6g}")
            for i in range(1, 7):
                yi = y + h_try * sum(a * k[j] for j, a in enumerate(_A[i]) if a != 0.0)
                k[i] = f(t + _C[i] * h_try, yi)
            self.n_evals += 6
            y_new = yi  # row 7 of the tableau equals the 5th-order weights (FSAL)
            err = h_try * sum(e * k[j] for j, e in enumerate(_E) if e != 0.0)
            en = self._norm(err, y, y_new)
            steps += 1
            if steps > self.max_steps:
                raise SolverError("maximum number of steps exceeded")
            if not np.isfinite(en):
                self.n_rejected += 1
                h = h_try * MIN_FACTOR
                continue
            if en <= 1.0:
                t = target if last else t + h_try
                y = y_new
                k[0] = k[6]
                self.n_steps += 1
                factor = MAX_FACTOR if en == 0 else min(MAX_FACTOR, max(MIN_FACTOR, SAFETY * en ** -0.2))
                # a step clipped to an output time says little about the natural step size
                h = max(h, h_try * factor) if last else h_try * factor
                if last and oi < len(outs) and target == outs[oi]:
                    if callback:
                        callback(t, y)
                    oi += 1
            else:
                self.n_rejected += 1
                h = h_try * max(MIN_FACTOR, SAFETY * en ** -0.2)
        self.h = h
        return y

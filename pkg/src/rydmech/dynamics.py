"""Piecewise-constant Hamiltonians and Lindblad master-equation evolution.

Units: hbar = 1, so Hamiltonians are in rad/s and times in seconds.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .hilbert import (CompositeSpace, DensityMatrix, Operator, StateVector, annihilation,
                      creation, fock_projector, number, projector, transition)
from .integrate import DormandPrince, SolverError

log = logging.getLogger(__name__)

RWA = "rwa"
FULL = "full"
TRACE_DRIFT_LIMIT = 1e-6


class TraceDriftError(SolverError):
    pass


@dataclass(frozen=True)
class Drive:
    """Classical field on ``lower <-> upper``: (rabi/2)(e^{i phase}|u><l| + h.c.) - detuning |u><u|."""

    lower: str
    upper: str
    rabi: float
    detuning: float = 0.0
    phase: float = 0.0


@dataclass(frozen=True)
class Coupling:
    """Dipole coupling of mode ``mode`` to the ``lower <-> upper`` transition.

    In RWA form the atom going upper -> lower emits a phonon:
    G (b |u><l| + b^dag |l><u|). The full form is G (b + b^dag)(|u><l| + |l><u|).
    """

    mode: int
    upper: str
    lower: str
    strength: float
    form: str = RWA


@dataclass(frozen=True)
class LindbladChannel:
    operator: Operator
    rate: float
    label: str = ""

    def __post_init__(self):
        if self.rate < 0:
            raise ValueError(f"channel {self.label!r} has negative rate {self.rate}")


@dataclass(frozen=True)
class HamiltonianSegment:
    duration: float
    drives: tuple[Drive, ...] = ()
    couplings: tuple[Coupling, ...] = ()
    channels: tuple[LindbladChannel, ...] = ()
    lab_frame: bool = False
    mode_freqs: tuple[float, ...] = ()
    label: str = ""

    def __post_init__(self):
        if not self.duration >= 0:
            raise ValueError(f"segment {self.label!r} has negative duration {self.duration}")
        object.__setattr__(self, "drives", tuple(self.drives))
        object.__setattr__(self, "couplings", tuple(self.couplings))
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "mode_freqs", tuple(self.mode_freqs))


@dataclass
class SimResult:
    times: np.ndarray
    expectations: dict[str, np.ndarray]
    final_state: DensityMatrix
    diagnostics: dict = field(default_factory=dict)
    snapshots: list[DensityMatrix] = field(default_factory=list)

    @property
    def failed(self) -> bool:
        return bool(self.diagnostics.get("failed", False))


def assemble_hamiltonian(space: CompositeSpace, segment: HamiltonianSegment,
                         mode_freqs: Sequence[float] | None = None) -> Operator:
    """Rotating-frame Hamiltonian of one segment (lab frame if requested)."""
    d = space.total_dim
    h = sp.csr_matrix((d, d), dtype=complex)
    for dr in segment.drives:
        if segment.lab_frame:
            raise ValueError("classical drives are only supported in the rotating frame")
        up = transition(space, dr.upper, dr.lower).matrix
        h = h + 0.5 * dr.rabi * (np.exp(1j * dr.phase) * up + np.exp(-1j * dr.phase) * up.conj().T)
        if dr.detuning:
            h = h - dr.detuning * projector(space, dr.upper).matrix
    for c in segment.couplings:
        b = annihilation(space, c.mode).matrix
        s_ul = transition(space, c.upper, c.lower).matrix
        s_lu = transition(space, c.lower, c.upper).matrix
        if c.form == RWA:
            h = h + c.strength * (b @ s_ul + b.conj().T @ s_lu)
        elif c.form == FULL:
            h = h + c.strength * ((b + b.conj().T) @ (s_ul + s_lu))
        else:
            raise ValueError(f"unknown coupling form {c.form!r}")
    if segment.lab_frame:
        freqs = tuple(mode_freqs if mode_freqs is not None else segment.mode_freqs)
        if len(freqs) != space.n_modes:
            raise ValueError("lab frame needs one frequency per mode")
        for m, w in enumerate(freqs):
            h = h + w * number(space, m).matrix
        # the coupled transition is resonant with its mode
        for c in segment.couplings:
            h = h + freqs[c.mode] * projector(space, c.upper).matrix
    return Operator(space, h)


def mechanical_bath(space: CompositeSpace, damping: float, n_th: float,
                    mode: int = 0) -> list[LindbladChannel]:
    """Paired emission/absorption channels of a thermal phonon bath."""
    chans = [LindbladChannel(annihilation(space, mode), damping * (n_th + 1.0), f"bath_down_{mode}")]
    if n_th > 0:
        chans.append(LindbladChannel(creation(space, mode), damping * n_th, f"bath_up_{mode}"))
    return chans


def atomic_decay(space: CompositeSpace, upper: str, lower: str, rate: float) -> LindbladChannel:
    return LindbladChannel(transition(space, lower, upper), rate, f"decay_{upper}{lower}")


def lindblad_rhs(rho, hamiltonian: Operator, channels: Sequence[LindbladChannel] = ()) -> np.ndarray:
    """-i[H, rho] + sum_k rate_k (L rho L^dag - {L^dag L, rho}/2)."""
    r = rho.data if isinstance(rho, DensityMatrix) else np.asarray(rho)
    n = hamiltonian.space.total_dim
    if r.shape != (n, n):
        raise ValueError(f"state shape {r.shape} does not match Hamiltonian dimension {n}")
    return _Generator(hamiltonian, channels)(r)


class _Generator:
    """Sparse superoperator on row-major vec(rho), built from H_eff = H - (i/2) sum r L^dag L.

    Calling it on a matrix returns a matrix, on a flat vector a flat vector.
    """

    def __init__(self, hamiltonian: Operator, channels: Sequence[LindbladChannel]):
        heff = hamiltonian.matrix.astype(complex)
        jumps = []
        for ch in channels:
            if ch.operator.space != hamiltonian.space:
                raise ValueError(f"channel {ch.label!r} lives on a different space")
            if ch.rate == 0:
                continue
            L = ch.operator.matrix.tocsr()
            heff = heff - 0.5j * ch.rate * (L.conj().T @ L)
            jumps.append((ch.rate, L))
        n = heff.shape[0]
        eye = sp.identity(n, dtype=complex, format="csr")
        # row-major vec(A X B) = (A kron B^T) vec(X)
        sup = -1j * sp.kron(heff, eye) + 1j * sp.kron(eye, heff.conj())
        for rate, L in jumps:
            sup = sup + rate * sp.kron(L, L.conj())
        self.n = n
        self.superop = sup.tocsr()

    def __call__(self, r: np.ndarray) -> np.ndarray:
        if r.ndim == 2:
            return (self.superop @ r.ravel()).reshape(r.shape)
        return self.superop @ r


def _record_ops(space, record) -> dict[str, sp.csr_matrix]:
    ops = {}
    for name, op in (record or {}).items():
        if not isinstance(op, Operator):
            raise TypeError(f"observable {name!r} must be an Operator")
        if op.space != space:
            raise ValueError(f"observable {name!r} lives on a different space")
        # tr(A rho) = sum(A^T * rho) elementwise
        ops[name] = op.matrix.T.tocsr()
    return ops


def _expect(opT: sp.csr_matrix, r: np.ndarray) -> complex:
    return complex(opT.multiply(r).sum())


def evolve(rho0, segments: Sequence[HamiltonianSegment], channels: Sequence[LindbladChannel] = (),
           record: Mapping[str, Operator] | None = None, n_points: int = 201,
           rtol: float = 1e-8, atol: float = 1e-10, snapshot_times: Sequence[float] = (),
           max_trace_drift: float = TRACE_DRIFT_LIMIT, mode_freqs=None,
           raise_on_drift: bool = False) -> SimResult:
    """Integrate the master equation through consecutive segments.

    Observables in ``record`` are sampled on a uniform grid of ``n_points``
    spanning the total duration; density matrices are also stored at any
    ``snapshot_times``.
    """
    if isinstance(rho0, StateVector):
        rho0 = rho0.to_density()
    space = rho0.space
    rho0.validate()
    segments = list(segments)
    total = float(sum(s.duration for s in segments))
    if n_points < 2:
        raise ValueError("need at least two output points")
    grid = np.linspace(0.0, total, n_points) if total > 0 else np.zeros(1)
    ops = _record_ops(space, record)
    series = {name: np.zeros(len(grid)) for name in ops}
    grid_filled = np.zeros(len(grid), dtype=bool)
    snaps = sorted(float(t) for t in snapshot_times)
    snap_taken: dict[int, DensityMatrix] = {}
    solver = DormandPrince(rtol=rtol, atol=atol)
    drift = 0.0
    shape = rho0.data.shape
    r = np.array(rho0.data, dtype=complex).ravel()

    def sample(t_abs: float, y: np.ndarray) -> None:
        nonlocal drift
        mat = y.reshape(shape)
        drift = max(drift, abs(np.trace(mat).real - 1.0))
        idx = np.nonzero(np.isclose(grid, t_abs, rtol=0, atol=1e-12 * max(total, 1e-300)))[0]
        for i in idx:
            if not grid_filled[i]:
                for name, opT in ops.items():
                    series[name][i] = _expect(opT, mat).real
                grid_filled[i] = True
        for j, ts in enumerate(snaps):
            if j not in snap_taken and abs(ts - t_abs) <= 1e-12 * max(total, 1e-300):
                snap_taken[j] = DensityMatrix(space, mat.copy())

    t_start = 0.0
    sample(0.0, r)
    for seg in segments:
        H = assemble_hamiltonian(space, seg, mode_freqs)
        if not H.is_hermitian():
            raise ValueError(f"segment {seg.label!r} produced a non-Hermitian Hamiltonian")
        gen = _Generator(H, list(channels) + list(seg.channels))
        t_end = t_start + seg.duration
        # clamp so boundary times lost to rounding still land inside the segment
        local = [min(max(t - t_start, 0.0), seg.duration)
                 for t in list(grid) + snaps if t_start < t <= t_end + 1e-12 * total]
        offset = t_start

        def f(_t, y, gen=gen):
            return gen(y)

        def cb(t_loc, y, offset=offset):
            sample(offset + t_loc, y)

        if seg.duration > 0:
            r = solver.integrate(f, 0.0, r, seg.duration, out_times=local, callback=cb)
        t_start = t_end

    # grid points lost to float rounding at segment ends
    if not grid_filled.all():
        for name, opT in ops.items():
            series[name][~grid_filled] = _expect(opT, r.reshape(shape)).real
        grid_filled[:] = True
    final = DensityMatrix(space, r.reshape(shape))
    drift = max(drift, abs(final.trace().real - 1.0))
    failed = drift > max_trace_drift
    diag = {
        "steps": solver.n_steps,
        "rejected": solver.n_rejected,
        "rhs_evals": solver.n_evals,
        "max_trace_drift": float(drift),
        "failed": bool(failed),
        "rtol": rtol,
        "atol": atol,
        "total_time": total,
    }
    if failed:
        msg = f"trace drift {drift:.3g} exceeds {max_trace_drift:g}"
        if raise_on_drift:
            raise TraceDriftError(msg)
        log.warning(msg)
    snapshots = [snap_taken.get(j, final) for j in range(len(snaps))]
    return SimResult(grid, series, final, diag, snapshots)


def liouvillian(hamiltonian: Operator, channels: Sequence[LindbladChannel] = ()) -> sp.csr_matrix:
    """Superoperator acting on row-major vec(rho), i.e. rho.ravel()."""
    n = hamiltonian.space.total_dim
    eye = sp.identity(n, dtype=complex, format="csr")
    H = hamiltonian.matrix
    # row-major vec: vec(A X B) = (A kron B^T) vec(X)
    L = -1j * (sp.kron(H, eye) - sp.kron(eye, H.T))
    for ch in channels:
        if ch.rate == 0:
            continue
        c = ch.operator.matrix
        cdc = c.conj().T @ c
        L = L + ch.rate * (sp.kron(c, c.conj()) - 0.5 * sp.kron(cdc, eye) - 0.5 * sp.kron(eye, cdc.T))
    return L.tocsr()


def steady_state_population(rho0, segment: HamiltonianSegment, channels: Sequence[LindbladChannel],
                            observable: Operator, window: float, rel_tol: float = 1e-4,
                            max_time: float = 1e-3, rtol: float = 1e-8, atol: float = 1e-10,
                            n_points: int = 51, on_window: Callable | None = None,
                            record: Mapping[str, Operator] | None = None) -> dict:
    """Run one continuous segment in windows until <observable> settles.

    Converged when the relative change of the expectation value across one
    ``window`` drops below ``rel_tol``. Returns the value, the full trace of
    the observable (plus any extra ``record`` series) and the final state.
    """
    if window <= 0:
        raise ValueError("window must be positive")
    state = rho0.to_density() if isinstance(rho0, StateVector) else rho0
    t_offset = 0.0
    times, values = [], []
    extra = dict(record or {})
    series = {name: [] for name in extra}
    prev = None
    steps = 0
    drift = 0.0
    while True:
        seg = HamiltonianSegment(window, segment.drives, segment.couplings, segment.channels,
                                 segment.lab_frame, segment.mode_freqs, segment.label)
        res = evolve(state, [seg], channels, {"obs": observable, **extra}, n_points=n_points,
                     rtol=rtol, atol=atol)
        steps += res.diagnostics["steps"]
        drift = max(drift, res.diagnostics["max_trace_drift"])
        start = 1 if times else 0
        times.extend(t_offset + res.times[start:])
        values.extend(res.expectations["obs"][start:])
        for name in series:
            series[name].extend(res.expectations[name][start:])
        t_offset += window
        # renormalize the trace between windows so drift does not accumulate
        state = DensityMatrix(state.space, res.final_state.data / res.final_state.trace())
        cur = values[-1]
        if on_window:
            on_window(t_offset, cur)
        if prev is not None and abs(cur - prev) <= rel_tol * abs(cur):
            break
        if t_offset >= max_time:
            change = "n/a" if prev is None else f"{abs(cur - prev) / abs(cur):.3g}"
            raise SolverError(f"no convergence within {max_time:g} s (last relative change {change})")
        prev = cur
    return {
        "value": values[-1],
        "times": np.asarray(times),
        "values": np.asarray(values),
        "series": {name: np.asarray(v) for name, v in series.items()},
        "final_state": state,
        "converged_at": t_offset,
        "steps": steps,
        "max_trace_drift": drift,
    }


def mechanical_ground_projector(space: CompositeSpace, mode: int = 0) -> Operator:
    return fock_projector(space, mode, 0)

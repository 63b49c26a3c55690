"""Reported quantities: ground-state population, fidelity, temperature, entanglement."""

from __future__ import annotations

import math

import numpy as np

from .hilbert import DensityMatrix, StateVector, partial_trace
from .physmodel import HBAR, K_B


def _rho(state) -> np.ndarray:
    if isinstance(state, StateVector):
        return np.outer(state.data, state.data.conj())
    if isinstance(state, DensityMatrix):
        return state.data
    return np.asarray(state)


def number_distribution(state, mode: int = 0) -> np.ndarray:
    """Phonon-number probabilities of one mode (other factors traced out)."""
    red = partial_trace(state, [mode + 1])
    return np.real(np.diag(red.data)).copy()


def ground_state_population(state, mode: int = 0) -> float:
    return float(number_distribution(state, mode)[0])


def mean_occupation(state, mode: int = 0) -> float:
    p = number_distribution(state, mode)
    return float(np.dot(np.arange(p.size), p))


def atomic_populations(state) -> dict[str, float]:
    red = partial_trace(state, [0])
    return {lab: float(np.real(red.data[i, i])) for i, lab in enumerate(state.space.atom_levels)}


def fidelity(state, target) -> float:
    """<psi|rho|psi> against a pure target; global phase drops out."""
    psi = target.data if isinstance(target, StateVector) else np.asarray(target)
    psi = psi / np.linalg.norm(psi)
    if isinstance(state, StateVector):
        return float(abs(np.vdot(psi, state.data)) ** 2)
    val = np.vdot(psi, _rho(state) @ psi).real
    return float(min(max(val, 0.0), 1.0))


def purity(state) -> float:
    r = _rho(state)
    return float(np.real(np.vdot(r.conj().T, r)))


def trace_distance(a, b) -> float:
    d = _rho(a) - _rho(b)
    d = 0.5 * (d + d.conj().T)
    return float(0.5 * np.sum(np.abs(np.linalg.eigvalsh(d))))


def von_neumann_entropy(state) -> float:
    """Entropy in nats."""
    lam = np.linalg.eigvalsh(0.5 * (_rho(state) + _rho(state).conj().T))
    lam = lam[lam > 1e-14]
    return float(-np.sum(lam * np.log(lam)))


def concurrence(rho4) -> float:
    """Wootters concurrence of a two-qubit density matrix (4x4, basis |00>,|01>,|10>,|11>)."""
    r = _rho(rho4)
    if r.shape != (4, 4):
        raise ValueError("concurrence needs a 4x4 two-qubit density matrix")
    yy = np.fliplr(np.diag([-1.0, 1.0, 1.0, -1.0]))
    rt = yy @ r.conj() @ yy
    ev = np.sqrt(np.clip(np.linalg.eigvals(r @ rt).real, 0, None))
    ev = np.sort(ev)[::-1]
    return float(max(0.0, ev[0] - ev[1] - ev[2] - ev[3]))


def two_mode_qubit_block(phonons: DensityMatrix) -> np.ndarray:
    """Restrict a two-mode phonon state to occupations {0,1} per mode."""
    n1, n2 = phonons.space.dims
    r = phonons.data.reshape(n1, n2, n1, n2)
    return r[:2, :2, :2, :2].reshape(4, 4)


def effective_temperature(p0: float, omega: float) -> float:
    """Temperature of the thermal state whose ground population is ``p0``."""
    if not 0.0 < p0 < 1.0:
        raise ValueError(f"ground-state population {p0!r} must lie strictly in (0, 1)")
    return (HBAR * omega / K_B) / (-math.log1p(-p0))


def thermal_ground_population(omega: float, temperature: float) -> float:
    """1 - exp(-hbar omega / k_B T), the inverse of :func:`effective_temperature`."""
    if temperature == 0:
        return 1.0
    return -math.expm1(-HBAR * omega / (K_B * temperature))

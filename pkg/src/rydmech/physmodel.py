"""Closed-form physics of the charged-cantilever / Rydberg-atom system.

Every rate and frequency is stored and returned as an angular quantity
(rad/s). Values entering or leaving the user-facing layer are linear (Hz);
use :func:`hz` and :func:`to_hz` for the conversion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import constants as const

HBAR = const.hbar
K_B = const.k
EPS0 = const.epsilon_0
E_CHARGE = const.e
BOHR_RADIUS = const.physical_constants["Bohr radius"][0]
TWO_PI = 2.0 * math.pi


def hz(f: float) -> float:
    """Linear frequency (Hz) to angular (rad/s)."""
    return TWO_PI * f


def to_hz(omega: float) -> float:
    return omega / TWO_PI


def e_a0(x: float) -> float:
    """Dipole moment in units of e*a0 -> C*m."""
    return x * E_CHARGE * BOHR_RADIUS


def to_e_a0(mu: float) -> float:
    return mu / (E_CHARGE * BOHR_RADIUS)


def _positive(**kw: float) -> None:
    for name, val in kw.items():
        if not val > 0:
            raise ValueError(f"{name} must be positive, got {val!r}")


def cantilever_frequency(length: float, thickness: float, youngs_modulus: float,
                         density: float) -> float:
    """Fundamental flexural frequency of a clamped beam.

    Returns ``3.516 (t/l^2) sqrt(E / 12 rho)`` read as an angular frequency.
    """
    _positive(length=length, thickness=thickness, youngs_modulus=youngs_modulus,
              density=density)
    return 3.516 * thickness / length**2 * math.sqrt(youngs_modulus / (12.0 * density))


def effective_mass_estimate(length: float, width: float, thickness: float,
                            density: float) -> float:
    """Rough effective mass 0.5*rho*l*w*t. Approximate only."""
    _positive(length=length, width=width, thickness=thickness, density=density)
    return 0.5 * density * length * width * thickness


def zero_point_motion(effective_mass: float, omega: float) -> float:
    _positive(effective_mass=effective_mass, omega=omega)
    return math.sqrt(HBAR / (2.0 * effective_mass * omega))


def coupling_strength(charge: float, x_zp: float, dipole_moment: float,
                      separation: float) -> float:
    """Atom-cantilever coupling G = Q x_zp mu / (4 pi eps0 R^3 hbar), rad/s."""
    if separation == 0:
        raise ValueError("separation R must be nonzero")
    return charge * x_zp * dipole_moment / (4.0 * math.pi * EPS0 * abs(separation) ** 3 * HBAR)


def dipole_field(dipole, source, point) -> np.ndarray:
    """Electric field of a point dipole at ``source`` evaluated at ``point``."""
    p = np.asarray(dipole, dtype=float)
    r = np.asarray(point, dtype=float) - np.asarray(source, dtype=float)
    dist = np.linalg.norm(r)
    if dist == 0:
        raise ValueError("field point coincides with the dipole")
    n = r / dist
    return (3.0 * n * np.dot(n, p) - p) / (4.0 * math.pi * EPS0 * dist**3)


def cantilever_exchange_ratio(charge: float, x_zp: float, dipole_moment: float) -> float:
    """Cantilever-cantilever exchange relative to the atom coupling, Q x_zp / (8 mu)."""
    _positive(dipole_moment=dipole_moment)
    return charge * x_zp / (8.0 * dipole_moment)


def rydberg_dipole_estimate(n: int) -> float:
    """Order-of-magnitude transition dipole n^2 e a0 (C*m)."""
    return e_a0(float(n) ** 2)


def thermal_occupation(omega: float, temperature: float) -> float:
    if temperature < 0:
        raise ValueError("temperature must be non-negative")
    if temperature == 0:
        return 0.0
    return 1.0 / math.expm1(HBAR * omega / (K_B * temperature))


def oscillator_temperature(omega: float) -> float:
    """hbar*omega/k_B, the temperature scale of one phonon."""
    return HBAR * omega / K_B


def heating_rate(temperature: float, quality_factor: float) -> float:
    """Thermal decoherence rate k_B T / (hbar Q_m), rad/s."""
    _positive(quality_factor=quality_factor)
    return K_B * temperature / (HBAR * quality_factor)


def mechanical_damping(omega: float, quality_factor: float) -> float:
    _positive(quality_factor=quality_factor)
    return omega / quality_factor


def cooling_rate_estimate(coupling: float, rabi_l: float) -> float:
    """Order-of-magnitude cooling rate G^2 / Omega_L."""
    _positive(rabi_l=rabi_l)
    return coupling**2 / rabi_l


def collective_enhancement(n_atoms: int) -> float:
    if n_atoms < 1:
        raise ValueError("ensemble size must be >= 1")
    return math.sqrt(n_atoms)


@dataclass(frozen=True)
class PhysicalParams:
    """Experimental constants. SI units; frequencies and rates in rad/s.

    ``coupling``, ``mech_damping`` and ``x_zp`` are optional overrides; when
    left as ``None`` they are derived from the geometric parameters.
    """

    charge: float = E_CHARGE
    dipole_moment: float = e_a0(35250.0)
    separation: float = 5e-6
    dipole_arm: float = 1e-6
    beam_length: float = 0.5e-6
    beam_width: float = 0.05e-6
    beam_thickness: float = 0.05e-6
    youngs_modulus: float = 1000e9
    density: float = 3000.0
    effective_mass: float = 1.9e-18
    mech_freqs: tuple[float, ...] = (hz(578e6), hz(578e6))
    quality_factor: float = 1e6
    temperature: float = 0.1
    rabi_l: float = hz(10e6)
    rabi_r: float = hz(10e6)
    rabi_mu: float = hz(6e6)
    rabi_1: float = hz(6e6)
    rabi_2: float = hz(6e6)
    decay_e: float = hz(5e6)
    decay_s: float = 0.0
    decay_p: float = 0.0
    decay_reset: float = hz(5e6)
    ensemble_size: int = 1
    ensemble_mode: bool = False
    coupling: float | None = None
    coupling_2: float | None = None
    mech_damping: float | None = None
    x_zp: float | None = None
    extra: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if self.ensemble_size < 1:
            raise ValueError("ensemble_size must be >= 1")
        for name in ("charge", "dipole_moment", "effective_mass", "quality_factor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if any(w <= 0 for w in self.mech_freqs):
            raise ValueError("mechanical frequencies must be positive")
        for name in ("decay_e", "decay_s", "decay_p", "decay_reset", "temperature"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def replace(self, **changes) -> "PhysicalParams":
        return replace(self, **changes)

    @property
    def omega(self) -> float:
        return self.mech_freqs[0]

    def zero_point(self, mode: int = 0) -> float:
        if self.x_zp is not None:
            return self.x_zp
        return zero_point_motion(self.effective_mass, self.mech_freqs[mode])

    def derived_coupling(self, mode: int = 0) -> float:
        return coupling_strength(self.charge, self.zero_point(mode), self.dipole_moment,
                                 self.separation)

    def coupling_rate(self, mode: int = 0) -> float:
        if mode == 1 and self.coupling_2 is not None:
            return self.coupling_2
        if self.coupling is not None:
            return self.coupling
        return self.derived_coupling(mode)

    def implied_charge(self, mode: int = 0) -> float:
        """Cantilever charge that would produce the configured coupling."""
        return self.charge * self.coupling_rate(mode) / self.derived_coupling(mode)

    def damping_rate(self) -> float:
        if self.mech_damping is not None:
            return self.mech_damping
        return mechanical_damping(self.omega, self.quality_factor)

    def n_thermal(self, mode: int = 0) -> float:
        return thermal_occupation(self.mech_freqs[mode], self.temperature)

    def effective_rabi_l(self) -> float:
        if self.ensemble_mode:
            return self.rabi_l * collective_enhancement(self.ensemble_size)
        return self.rabi_l


def parameter_report(p: PhysicalParams) -> dict:
    """Derived quantities in user-facing units (Hz, m, K)."""
    omega_beam = cantilever_frequency(p.beam_length, p.beam_thickness, p.youngs_modulus,
                                      p.density)
    xzp_formula = zero_point_motion(p.effective_mass, p.omega)
    g_derived = p.derived_coupling()
    q_implied = p.implied_charge()
    return {
        "cantilever_frequency_hz": to_hz(omega_beam),
        "mech_freq_hz": to_hz(p.omega),
        "effective_mass_estimate_kg": effective_mass_estimate(
            p.beam_length, p.beam_width, p.beam_thickness, p.density),
        "x_zp_formula_m": xzp_formula,
        "x_zp_used_m": p.zero_point(),
        "x_zp_used_a0": p.zero_point() / BOHR_RADIUS,
        "charge_e": p.charge / E_CHARGE,
        "dipole_moment_ea0": to_e_a0(p.dipole_moment),
        "coupling_derived_hz": to_hz(g_derived),
        "coupling_used_hz": to_hz(p.coupling_rate()),
        "implied_charge_e": q_implied / E_CHARGE,
        "exchange_ratio": cantilever_exchange_ratio(p.charge, p.zero_point(), p.dipole_moment),
        "exchange_ratio_implied": cantilever_exchange_ratio(q_implied, p.zero_point(),
                                                            p.dipole_moment),
        "mech_damping_hz": to_hz(p.damping_rate()),
        "mech_damping_from_q_hz": to_hz(mechanical_damping(p.omega, p.quality_factor)),
        "heating_rate_hz": to_hz(heating_rate(p.temperature, p.quality_factor)),
        "n_thermal": p.n_thermal(),
        "t_osc_k": oscillator_temperature(p.omega),
        "cooling_rate_estimate_hz": to_hz(cooling_rate_estimate(p.coupling_rate(),
                                                                p.effective_rabi_l())),
        "collective_enhancement": collective_enhancement(p.ensemble_size),
    }

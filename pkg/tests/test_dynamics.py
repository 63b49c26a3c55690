import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rydmech import hilbert as hb
from rydmech.dynamics import (FULL, RWA, Coupling, Drive, HamiltonianSegment, LindbladChannel,
                              TraceDriftError, assemble_hamiltonian, atomic_decay, evolve,
                              lindblad_rhs, liouvillian, mechanical_bath,
                              steady_state_population)
from rydmech.integrate import DormandPrince
from rydmech.physmodel import hz

import oracles


def test_drive_eigenvalues():
    sp_ = hb.make_space(["g", "p"], [2])
    om = hz(10e6)
    H = assemble_hamiltonian(sp_, HamiltonianSegment(1e-6, (Drive("g", "p", om),)))
    ev = np.linalg.eigvalsh(H.toarray())
    assert np.allclose(sorted(ev), [-om / 2, -om / 2, om / 2, om / 2])


def test_detuning_term():
    sp_ = hb.make_space(["g", "p"], [2])
    H = assemble_hamiltonian(sp_, HamiltonianSegment(1.0, (Drive("g", "p", 0.0, detuning=3.0),)))
    i = sp_.basis_index("p", [1])
    assert H.toarray()[i, i] == pytest.approx(-3.0)


def test_rwa_matrix_element():
    sp_ = hb.make_space(["s", "p"], [2])
    g = hz(150e3)
    H = assemble_hamiltonian(sp_, HamiltonianSegment(1.0, couplings=(Coupling(0, "p", "s", g),)))
    h = H.toarray()
    s1, p0 = sp_.basis_index("s", [1]), sp_.basis_index("p", [0])
    s0, p1 = sp_.basis_index("s", [0]), sp_.basis_index("p", [1])
    assert h[s1, p0] == pytest.approx(g)
    assert h[s0, p1] == 0
    full = assemble_hamiltonian(
        sp_, HamiltonianSegment(1.0, couplings=(Coupling(0, "p", "s", g, FULL),))).toarray()
    assert full[s0, p1] == pytest.approx(g)
    assert full[s1, p0] == pytest.approx(g)


def test_assemble_errors():
    sp_ = hb.make_space(["g", "p"], [2])
    with pytest.raises(KeyError):
        assemble_hamiltonian(sp_, HamiltonianSegment(1.0, (Drive("g", "x", 1.0),)))
    with pytest.raises(ValueError):
        HamiltonianSegment(-1.0)
    with pytest.raises(ValueError):
        assemble_hamiltonian(sp_, HamiltonianSegment(1.0, (Drive("g", "p", 1.0),), lab_frame=True,
                                                     mode_freqs=(1.0,)))
    with pytest.raises(ValueError):
        LindbladChannel(hb.projector(sp_, "g"), -1.0)


def test_assembly_matches_dense_reference():
    levels, cut = ["g", "s", "p"], [3]
    sp_ = hb.make_space(levels, cut)
    seg = HamiltonianSegment(1.0, (Drive("g", "p", 2.0, 0.3, 0.7), Drive("g", "s", 1.5)),
                             (Coupling(0, "p", "s", 0.4),))
    ref = oracles.reference_hamiltonian(levels, cut, [("g", "p", 2.0, 0.3, 0.7), ("g", "s", 1.5, 0, 0)],
                                        [(0, "p", "s", 0.4, "rwa")])
    assert np.allclose(assemble_hamiltonian(sp_, seg).toarray(), ref)


def _random_rho(d, rng):
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    r = a @ a.conj().T
    return r / np.trace(r)


def test_rhs_trace_free_and_hermitian():
    rng = np.random.default_rng(0)
    sp_ = hb.make_space(["g", "s", "p"], [4])
    H = assemble_hamiltonian(sp_, HamiltonianSegment(1.0, (Drive("g", "p", 1.3),),
                                                     (Coupling(0, "p", "s", 0.7),)))
    chans = [atomic_decay(sp_, "p", "g", 0.5)] + mechanical_bath(sp_, 0.2, 1.5)
    for _ in range(5):
        rho = _random_rho(sp_.total_dim, rng)
        d = lindblad_rhs(rho, H, chans)
        assert abs(np.trace(d)) < 1e-12
        assert np.abs(d - d.conj().T).max() < 1e-12
    with pytest.raises(ValueError):
        lindblad_rhs(np.eye(3), H, chans)


def test_rhs_matches_superoperator():
    rng = np.random.default_rng(1)
    sp_ = hb.make_space(["g", "s", "p"], [3])
    H = assemble_hamiltonian(sp_, HamiltonianSegment(1.0, (Drive("g", "s", 0.9, 0.2, 1.1),),
                                                     (Coupling(0, "p", "s", 0.4),)))
    chans = [atomic_decay(sp_, "s", "g", 0.3)] + mechanical_bath(sp_, 0.1, 0.5)
    rho = _random_rho(sp_.total_dim, rng)
    L = liouvillian(H, chans)
    assert np.allclose(L @ rho.ravel(), lindblad_rhs(rho, H, chans).ravel(), atol=1e-13)


def test_commutator_sign_standard():
    # d rho/dt = -i [H, rho]: with H = (w/2) sigma_z-like, <sigma_+> rotates as e^{-i w t}
    sp_ = hb.make_space(["g", "p"], [2])
    H = assemble_hamiltonian(sp_, HamiltonianSegment(1.0, (Drive("g", "p", 0.0, detuning=-1.0),)))
    psi = hb.superposition(sp_, [(1, "g", [0]), (1, "p", [0])])
    rho = psi.to_density().data
    d = lindblad_rhs(rho, H)
    ip, ig = sp_.basis_index("p", [0]), sp_.basis_index("g", [0])
    # H = +1 on |p>: rho_pg evolves as exp(-i t) -> derivative -i rho_pg
    assert d[ip, ig] == pytest.approx(-1j * rho[ip, ig])


def test_exponential_decay():
    sp_ = hb.make_space(["g", "e"], [2])
    gam = hz(5e6)
    rho0 = hb.fock_state(sp_, "e", [0])
    res = evolve(rho0, [HamiltonianSegment(200e-9)], [atomic_decay(sp_, "e", "g", gam)],
                 {"pe": hb.projector(sp_, "e")}, n_points=21)
    assert np.allclose(res.expectations["pe"], np.exp(-gam * res.times), atol=1e-8)


def test_pi_pulse_inversion():
    sp_ = hb.make_space(["g", "p"], [2])
    res = evolve(hb.fock_state(sp_, "g", [0]), [HamiltonianSegment(0.5e-6, (Drive("g", "p", hz(1e6)),))],
                 record={"pp": hb.projector(sp_, "p")})
    assert abs(res.expectations["pp"][-1] - 1.0) < 1e-6


def _jc_peak_time(g, m=0, n=201):
    sp_ = hb.make_space(["s", "p"], [m + 3])
    seg = HamiltonianSegment(2 * oracles.jc_transfer_time(g, m), couplings=(Coupling(0, "p", "s", g),))
    res = evolve(hb.fock_state(sp_, "p", [m]), [seg],
                 record={"s": hb.basis_projector(sp_, "s", [m + 1])}, n_points=n)
    y, t = res.expectations["s"], res.times
    i = int(np.argmax(y))
    # parabola through the three samples around the peak
    a, b, _ = np.polyfit(t[i - 1:i + 2], y[i - 1:i + 2], 2)
    return -b / (2 * a), y[i]


def test_jc_vacuum_transfer_time():
    g = hz(150e3)
    t_peak, p = _jc_peak_time(g)
    assert t_peak == pytest.approx(math.pi / (2 * g), rel=1e-3)
    assert t_peak == pytest.approx(1.6667e-6, rel=1e-3)
    assert p > 1 - 1e-6


def test_jc_sqrt_scaling():
    g = hz(150e3)
    t3, _ = _jc_peak_time(g, m=3)
    t0, _ = _jc_peak_time(g, m=0)
    assert t3 == pytest.approx(t0 / 2, rel=1e-3)


def test_thermal_steady_state_of_bath():
    n_th, cut, gam = 3.128, 60, hz(578.0)
    sp_ = hb.make_space(["g", "s"], [cut])
    rho0 = hb.fock_state(sp_, "g", [5])
    res = evolve(rho0, [HamiltonianSegment(25 / gam)], mechanical_bath(sp_, gam, n_th), n_points=3)
    from rydmech.observables import number_distribution
    p = number_distribution(res.final_state)
    tv = 0.5 * np.abs(p - oracles.bose(n_th, cut)).sum()
    assert tv < 1e-4


def test_trace_drift_flagged():
    sp_ = hb.make_space(["g", "p"], [2])
    seg = HamiltonianSegment(1e-6, (Drive("g", "p", hz(5e6)),))
    res = evolve(hb.fock_state(sp_, "g", [0]), [seg], rtol=1e-2, atol=1e-2, max_trace_drift=1e-16)
    assert res.failed
    with pytest.raises(TraceDriftError):
        evolve(hb.fock_state(sp_, "g", [0]), [seg], rtol=1e-2, atol=1e-2, max_trace_drift=1e-16,
               raise_on_drift=True)


def test_invalid_initial_state():
    sp_ = hb.make_space(["g", "p"], [2])
    with pytest.raises(ValueError):
        evolve(hb.DensityMatrix(sp_, 2 * np.eye(4) / 4), [HamiltonianSegment(1.0)])


def test_snapshots_and_grid():
    sp_ = hb.make_space(["g", "p"], [2])
    om = hz(1e6)
    segs = [HamiltonianSegment(0.25e-6, (Drive("g", "p", om),)),
            HamiltonianSegment(0.25e-6, (Drive("g", "p", om),))]
    res = evolve(hb.fock_state(sp_, "g", [0]), segs, record={"pp": hb.projector(sp_, "p")},
                 n_points=11, snapshot_times=[0.25e-6])
    assert len(res.times) == 11
    snap = res.snapshots[0]
    assert hb.expectation(hb.projector(sp_, "p"), snap).real == pytest.approx(0.5, abs=1e-8)
    assert res.expectations["pp"][5] == pytest.approx(0.5, abs=1e-8)


def test_determinism():
    sp_ = hb.make_space(["g", "s", "p"], [4])
    seg = HamiltonianSegment(1e-6, (Drive("g", "p", hz(6e6)),), (Coupling(0, "p", "s", hz(150e3)),))
    chans = [atomic_decay(sp_, "p", "g", hz(2e3))]
    a = evolve(hb.fock_state(sp_, "g", [0]), [seg], chans, {"p": hb.projector(sp_, "p")})
    b = evolve(hb.fock_state(sp_, "g", [0]), [seg], chans, {"p": hb.projector(sp_, "p")})
    assert np.array_equal(a.expectations["p"], b.expectations["p"])
    assert np.array_equal(a.final_state.data, b.final_state.data)


def test_steady_state_decoupled_bath():
    # G = 0: P0 stays at the thermal value
    sp_ = hb.make_space(["g", "s"], [40])
    n_th, gam = 1.0, 1e5
    rho0 = hb.thermal_state(sp_, "g", n_th)
    out = steady_state_population(rho0, HamiltonianSegment(1.0), mechanical_bath(sp_, gam, n_th),
                                  hb.fock_projector(sp_, 0, 0), window=1 / gam)
    assert out["value"] == pytest.approx(0.5, rel=1e-6)


def test_steady_state_nonconvergence():
    sp_ = hb.make_space(["g", "p"], [2])
    seg = HamiltonianSegment(1.0, (Drive("g", "p", 1.0),))
    from rydmech.integrate import SolverError
    with pytest.raises(SolverError):
        steady_state_population(hb.fock_state(sp_, "g", [0]), seg, [],
                                hb.projector(sp_, "p"), window=0.77, max_time=5.0)


def test_integrator_scalar_ode():
    dp = DormandPrince(rtol=1e-10, atol=1e-12)
    y = dp.integrate(lambda t, y: -2.0 * y, 0.0, np.array([1.0 + 0j]), 1.5)
    assert y[0].real == pytest.approx(math.exp(-3.0), rel=1e-9)
    seen = []
    dp.integrate(lambda t, y: 1j * y, 0.0, np.array([1.0 + 0j]), 1.0, out_times=[0.0, 0.3, 1.0],
                 callback=lambda t, y: seen.append(t))
    assert seen == [0.0, 0.3, 1.0]
    with pytest.raises(ValueError):
        dp.integrate(lambda t, y: y, 1.0, np.array([1.0]), 0.0)


# ------------------------------------------------------------------ oracle equivalence

LEVELS = ["g", "s", "p", "e"]
SHAPES = [(2, [6]), (3, [4]), (4, [3]), (2, [3, 2]), (3, [2, 2]), (2, [2, 3]), (3, [3])]


def random_instance(seed):
    rng = np.random.default_rng(seed)
    na, cut = SHAPES[rng.integers(len(SHAPES))]
    levels = LEVELS[:na]
    sp_ = hb.make_space(levels, cut)
    scale = 1e6
    n_seg = int(rng.integers(1, 4))
    segs, ref_pieces = [], []
    # always-on channels: random decay, bath on mode 0, one random dense operator
    a, b = rng.choice(na, 2, replace=False)
    decay = (levels[a], levels[b], scale * rng.uniform(0.05, 0.5))
    n_th, gam = rng.uniform(0, 1.5), scale * rng.uniform(0.01, 0.2)
    rand_op = rng.normal(size=(sp_.total_dim,) * 2) + 1j * rng.normal(size=(sp_.total_dim,) * 2)
    rand_op /= np.linalg.norm(rand_op)
    rand_rate = scale * rng.uniform(0.0, 0.1)
    chans = [atomic_decay(sp_, decay[0], decay[1], decay[2])]
    chans += mechanical_bath(sp_, gam, n_th)
    chans.append(LindbladChannel(hb.Operator(sp_, rand_op), rand_rate, "random"))
    sigma, bk, _ = oracles.dense_ops(levels, cut)
    jumps = [(decay[2], sigma(decay[1], decay[0])), (gam * (n_th + 1), bk(0)),
             (gam * n_th, bk(0).conj().T), (rand_rate, rand_op)]
    for _ in range(n_seg):
        drives, ref_d = [], []
        for _ in range(int(rng.integers(0, 3))):
            lo, up = rng.choice(na, 2, replace=False)
            args = (levels[lo], levels[up], scale * rng.uniform(0.1, 3), scale * rng.uniform(-1, 1),
                    rng.uniform(0, 2 * np.pi))
            drives.append(Drive(*args))
            ref_d.append(args)
        couplings, ref_c = [], []
        for k in range(len(cut)):
            if rng.random() < 0.8:
                up, lo = rng.choice(na, 2, replace=False)
                args = (k, levels[up], levels[lo], scale * rng.uniform(0.05, 1.0), RWA)
                couplings.append(Coupling(*args))
                ref_c.append(args)
        t = rng.uniform(0.2, 2.0) / scale
        segs.append(HamiltonianSegment(t, tuple(drives), tuple(couplings)))
        ref_pieces.append((oracles.reference_hamiltonian(levels, cut, ref_d, ref_c), jumps, t))
    v = rng.normal(size=sp_.total_dim) + 1j * rng.normal(size=sp_.total_dim)
    rho0 = hb.StateVector(sp_, v).to_density()
    return sp_, rho0, segs, chans, ref_pieces


@settings(max_examples=25, deadline=None, derandomize=True)
@given(st.integers(0, 2**31 - 1))
def test_evolve_matches_expm_oracle(seed):
    sp_, rho0, segs, chans, pieces = random_instance(seed)
    assert sp_.total_dim <= 12
    res = evolve(rho0, segs, chans, n_points=2)
    ref = oracles.propagate(rho0.data, pieces)
    assert oracles.trace_distance(res.final_state.data, ref) < 1e-7


@settings(max_examples=15, deadline=None, derandomize=True)
@given(st.integers(0, 2**31 - 1))
def test_trajectory_invariants(seed):
    sp_, rho0, segs, chans, _ = random_instance(seed)
    total = sum(s.duration for s in segs)
    times = list(np.linspace(0, total, 9)[1:])
    res = evolve(rho0, segs, chans, n_points=2, snapshot_times=times)
    for snap in res.snapshots:
        assert abs(snap.trace() - 1) < 1e-6
        assert snap.hermiticity_error() < 1e-10
        assert snap.min_eigenvalue() >= -1e-6
    assert res.diagnostics["max_trace_drift"] <= 1e-6


def test_rwa_agrees_with_full_coupling_in_lab_frame():
    g = hz(150e3)
    w = 1000 * g  # G / omega = 1e-3
    levels, cut = ["s", "p"], [4]
    sp_ = hb.make_space(levels, cut)
    t = oracles.jc_transfer_time(g)
    rec = {f"{a}{m}": hb.basis_projector(sp_, a, [m]) for a in levels for m in range(3)}
    rho0 = hb.fock_state(sp_, "p", [0])
    rwa = evolve(rho0, [HamiltonianSegment(t, couplings=(Coupling(0, "p", "s", g, RWA),))],
                 record=rec, n_points=41)
    full = evolve(rho0, [HamiltonianSegment(t, couplings=(Coupling(0, "p", "s", g, FULL),),
                                            lab_frame=True, mode_freqs=(w,))],
                  record=rec, n_points=41)
    for k in rec:
        assert np.abs(rwa.expectations[k] - full.expectations[k]).max() < 1e-3

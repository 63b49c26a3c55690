import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rydmech import hilbert as hb


def test_space_dims_and_index():
    sp_ = hb.make_space(["g", "s", "p"], [4, 3])
    assert sp_.dims == (3, 4, 3)
    assert sp_.total_dim == 36
    assert sp_.basis_index("g", [0, 0]) == 0
    # row-major: atom slowest, last mode fastest
    assert sp_.basis_index("s", [1, 2]) == 1 * 12 + 1 * 3 + 2


def test_space_validation():
    with pytest.raises(ValueError):
        hb.make_space(["g", "g"], [3])
    with pytest.raises(ValueError):
        hb.make_space(["g", "s"], [1])
    sp_ = hb.make_space(["g", "s"], [3])
    with pytest.raises(KeyError):
        sp_.level_index("x")
    with pytest.raises(ValueError):
        sp_.basis_index("g", [3])
    with pytest.raises(IndexError):
        hb.annihilation(sp_, 1)


def test_ladder_matrix_elements():
    sp_ = hb.make_space(["g", "s"], [5])
    b = hb.annihilation(sp_)
    for m in range(1, 5):
        ket = hb.fock_state(sp_, "g", [m])
        out = b @ ket
        assert np.vdot(hb.fock_state(sp_, "g", [m - 1]).data, out.data) == pytest.approx(np.sqrt(m))


def test_number_operator_is_bdag_b():
    sp_ = hb.make_space(["g", "s"], [6, 2])
    for mode in range(2):
        b = hb.annihilation(sp_, mode)
        diff = (b.dag() @ b - hb.number(sp_, mode)).toarray()
        assert np.abs(diff).max() < 1e-14


def test_commutator_below_cutoff():
    sp_ = hb.make_space(["g", "s"], [6])
    b = hb.annihilation(sp_)
    c = b.commutator(b.dag()).toarray()
    diag = np.real(np.diag(c)).reshape(2, 6)
    assert np.allclose(diag[:, :-1], 1.0)
    assert np.allclose(diag[:, -1], -5.0)  # truncation artefact on the top level


def test_transition_and_projector():
    sp_ = hb.make_space(["g", "s", "p"], [3])
    s_sp = hb.transition(sp_, "s", "p")
    ket = hb.fock_state(sp_, "p", [1])
    assert np.allclose((s_sp @ ket).data, hb.fock_state(sp_, "s", [1]).data)
    assert hb.projector(sp_, "g").is_hermitian()
    assert not s_sp.is_hermitian()


def test_operator_arithmetic_and_space_checks():
    a = hb.make_space(["g", "s"], [3])
    b = hb.make_space(["g", "s"], [4])
    x = hb.number(a)
    assert np.allclose((2 * x - x).toarray(), x.toarray())
    assert np.allclose((x / 2).toarray(), 0.5 * x.toarray())
    with pytest.raises(ValueError):
        x + hb.number(b)
    with pytest.raises(ValueError):
        hb.Operator(a, np.eye(5))


def test_state_normalization():
    sp_ = hb.make_space(["g", "s"], [3])
    psi = hb.superposition(sp_, [(1, "g", [0]), (-1, "g", [2])])
    assert psi.norm() == pytest.approx(1.0)
    assert psi.data[sp_.basis_index("g", [2])] == pytest.approx(-1 / np.sqrt(2))
    with pytest.raises(ValueError):
        hb.StateVector(sp_, np.zeros(sp_.total_dim))


def test_density_validate():
    sp_ = hb.make_space(["g", "s"], [2])
    rho = hb.fock_state(sp_, "g", [0]).to_density()
    rho.validate()
    bad = hb.DensityMatrix(sp_, 2 * rho.data)
    with pytest.raises(ValueError):
        bad.validate()
    neg = np.diag([1.5, -0.5, 0, 0]).astype(complex)
    with pytest.raises(ValueError):
        hb.DensityMatrix(sp_, neg).validate()


def test_thermal_distribution_geometric():
    p = hb.thermal_distribution(1.0, 40)
    assert p.sum() == pytest.approx(1.0)
    assert p[1] / p[0] == pytest.approx(0.5)
    assert hb.thermal_distribution(0.0, 5)[0] == 1.0
    with pytest.raises(ValueError, match="need cutoff"):
        hb.thermal_distribution(6.7, 30)


def test_thermal_state_mean_occupation():
    sp_ = hb.make_space(["g", "s"], [80])
    rho = hb.thermal_state(sp_, "g", 3.128)
    n = hb.expectation(hb.number(sp_), rho).real
    assert n == pytest.approx(3.128, rel=1e-5)


def test_partial_trace_product_state():
    sp_ = hb.make_space(["g", "s"], [3, 3])
    psi = hb.superposition(sp_, [(1, "g", [1, 0]), (1, "g", [0, 1])])
    ph = hb.partial_trace(psi, [1, 2])
    assert ph.space.dims == (3, 3)
    assert np.trace(ph.data).real == pytest.approx(1.0)
    atom = hb.partial_trace(psi, [0])
    assert np.allclose(atom.data, np.diag([1.0, 0.0]))
    with pytest.raises(ValueError):
        hb.partial_trace(psi, [3])


def test_expectation_state_vs_density():
    sp_ = hb.make_space(["g", "s", "p"], [4])
    rng = np.random.default_rng(1)
    psi = hb.StateVector(sp_, rng.normal(size=12) + 1j * rng.normal(size=12))
    op = hb.number(sp_) + hb.transition(sp_, "s", "p") + hb.transition(sp_, "p", "s")
    assert hb.expectation(op, psi) == pytest.approx(hb.expectation(op, psi.to_density()))


@settings(max_examples=30, deadline=None, derandomize=True)
@given(st.integers(2, 6), st.integers(2, 5), st.integers(0, 2**31 - 1))
def test_partial_trace_preserves_trace(n1, n2, seed):
    sp_ = hb.make_space(["a", "b"], [n1, n2])
    rng = np.random.default_rng(seed)
    d = sp_.total_dim
    psi = hb.StateVector(sp_, rng.normal(size=d) + 1j * rng.normal(size=d))
    for keep in ([0], [1], [2], [1, 2], [0, 2]):
        red = hb.partial_trace(psi, keep)
        assert np.trace(red.data).real == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(red.data, red.data.conj().T)

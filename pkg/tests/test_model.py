import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plasmonqd.model import (
    BasisMap,
    ConfigurationError,
    PlasmonParams,
    QDParams,
    SystemSpec,
    apply_lindblad,
    build_basis,
    build_drive,
    build_hamiltonian,
    build_operators,
)
from plasmonqd.units import HBAR_MEV_FS


def spec_of(g, n_levels=3, **kw):
    return SystemSpec.create(g, n_levels=n_levels, **kw)


def test_basis_single_qd_enumeration():
    basis = build_basis(spec_of([10.0], n_levels=2))
    assert basis.states() == [(0, 0), (0, 1), (1, 0), (1, 1)]


def test_basis_dimension():
    assert build_basis(spec_of([1.0, 2.0], n_levels=10)).dimension == 40


@given(st.integers(1, 4), st.integers(2, 6))
def test_basis_round_trip(n_qds, n_levels):
    basis = BasisMap(n_qds, n_levels)
    for i in range(basis.dimension):
        assert basis.index(basis.occupation(i)) == i


def test_basis_qd1_is_least_significant():
    basis = BasisMap(2, 3)
    # |q2=0, q1=1; s=0> sits at q = 1
    assert basis.index((0, 1, 0)) == 3
    assert basis.qd_occupation(0)[3] == 1 and basis.qd_occupation(1)[3] == 0


def test_basis_rejects_bad_tuples():
    basis = BasisMap(2, 3)
    with pytest.raises(ValueError):
        basis.index((0, 1, 3))
    with pytest.raises(ValueError):
        basis.index((2, 0, 0))
    with pytest.raises(ValueError):
        basis.index((0, 0))


def test_ladder_entries():
    ops = build_operators(spec_of([1.0], n_levels=3))
    b = ops.b.toarray()
    assert b[0, 1] == pytest.approx(1.0)
    assert b[1, 2] == pytest.approx(np.sqrt(2.0))
    assert np.count_nonzero(b[:3, :3]) == 2


@pytest.mark.parametrize("n_qds", [1, 2, 3])
def test_sigma_squares_to_zero(n_qds):
    ops = build_operators(spec_of([1.0] * n_qds))
    for s in ops.sigma:
        assert abs(s @ s).sum() == 0


def test_sigma_acts_on_its_own_qd():
    spec = spec_of([1.0, 1.0], n_levels=2)
    basis = build_basis(spec)
    ops = build_operators(spec, basis)
    up = basis.index((0, 1, 0))  # QD1 excited
    out = ops.sigma[0].toarray()[:, up]
    assert out[basis.index((0, 0, 0))] == 1
    assert not ops.sigma[1].toarray()[:, up].any()


def test_commutator_identity_below_top_level():
    spec = spec_of([1.0, 1.0], n_levels=5)
    basis = build_basis(spec)
    ops = build_operators(spec, basis)
    comm = (ops.b @ ops.b_dag - ops.b_dag @ ops.b).toarray()
    below = basis.plasmon_number() < spec.n_levels - 1
    np.testing.assert_allclose(comm[np.ix_(below, below)], np.eye(below.sum()), atol=1e-14)
    assert not np.allclose(np.diag(comm)[~below], 1.0)


def test_hamiltonian_single_qd_by_hand():
    spec = spec_of([7.5], n_levels=2)
    basis = build_basis(spec)
    h = build_hamiltonian(spec, build_operators(spec, basis)).toarray()
    expect = np.zeros((4, 4))
    i, j = basis.index((1, 0)), basis.index((0, 1))
    expect[i, j] = expect[j, i] = -7.5
    np.testing.assert_allclose(h, expect)


def test_hamiltonian_zero_coupling_vanishes():
    spec = spec_of([0.0, 0.0])
    assert build_hamiltonian(spec, build_operators(spec)).nnz == 0


def test_hamiltonian_detuning_in_frame():
    qd = QDParams(g=1.0, omega=2060.0)
    spec = SystemSpec((qd,), PlasmonParams(n_levels=2))
    basis = build_basis(spec)
    h = build_hamiltonian(spec, build_operators(spec, basis)).toarray()
    assert h[basis.index((1, 0)), basis.index((1, 0))] == pytest.approx(10.0)


@given(st.lists(st.floats(0, 30), min_size=1, max_size=3), st.integers(2, 4))
@settings(max_examples=25)
def test_hamiltonian_and_drive_hermitian(g, n_levels):
    spec = spec_of(g, n_levels=n_levels)
    ops = build_operators(spec)
    for op in (build_hamiltonian(spec, ops), build_drive(spec, ops)):
        assert (op - op.getH()).count_nonzero() == 0


def test_drive_plasmon_only():
    qd = QDParams(g=1.0, d=0.0)
    spec = SystemSpec((qd,), PlasmonParams(d=4000.0, n_levels=4))
    ops = build_operators(spec)
    d = build_drive(spec, ops)
    np.testing.assert_allclose(d.toarray(), 4000.0 * (ops.b + ops.b_dag).toarray())


@pytest.mark.parametrize("n_levels", [2, 3, 6])
def test_drive_vacuum_element(n_levels):
    spec = spec_of([1.0, 2.0], n_levels=n_levels)
    basis = build_basis(spec)
    d = build_drive(spec, build_operators(spec, basis)).toarray()
    assert d[basis.index((0, 0, 1)), basis.index((0, 0, 0))] == pytest.approx(4000.0)


def test_lindblad_ground_state_is_stationary():
    spec = spec_of([5.0, 6.0], gamma_s=100.0, gamma_d=2.0, gamma_p=1.0)
    rho = np.zeros((spec.dimension,) * 2, complex)
    rho[0, 0] = 1
    np.testing.assert_allclose(apply_lindblad(spec, build_operators(spec), rho), 0.0, atol=1e-15)


def test_lindblad_amplitude_damping_rate():
    spec = spec_of([0.0], gamma_s=0.0, gamma_d=0.0, gamma_p=3.0, n_levels=2)
    basis = build_basis(spec)
    rho = np.zeros((4, 4), complex)
    up = basis.index((1, 0))
    rho[up, up] = 1
    out = apply_lindblad(spec, build_operators(spec, basis), rho)
    assert out[up, up].real == pytest.approx(-3.0 / HBAR_MEV_FS, rel=1e-12)
    assert np.trace(out) == pytest.approx(0.0, abs=1e-16)


def test_lindblad_dephasing_rate():
    spec = spec_of([0.0], gamma_s=0.0, gamma_d=1.5, gamma_p=0.0, n_levels=2)
    basis = build_basis(spec)
    rho = np.full((4, 4), 0.0, complex)
    up, dn = basis.index((1, 0)), basis.index((0, 0))
    rho[up, up] = rho[dn, dn] = rho[up, dn] = rho[dn, up] = 0.5
    out = apply_lindblad(spec, build_operators(spec, basis), rho)
    assert out[up, dn].real == pytest.approx(-1.5 / HBAR_MEV_FS * 0.5, rel=1e-12)
    assert out[up, up] == 0


def test_lindblad_shape_check():
    spec = spec_of([1.0])
    with pytest.raises(ValueError):
        apply_lindblad(spec, build_operators(spec), np.eye(3))


def test_configuration_errors():
    with pytest.raises(ConfigurationError):
        PlasmonParams(n_levels=1)
    with pytest.raises(ConfigurationError):
        QDParams(g=-1.0)
    with pytest.raises(ConfigurationError):
        SystemSpec.create([1.0] * 10, n_levels=10)
    with pytest.raises(ConfigurationError):
        SystemSpec(qds=())

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plasmonqd.analytic import ThreeStateModel, three_state_evolve
from plasmonqd.dynamics import (
    Generator,
    IntegratorConfig,
    PulseSpec,
    TruncationWarning,
    dark_observables,
    fluence_to_amplitude,
    initial_state,
    liouvillian,
    peak_plasmon_number,
    propagate,
    propagate_expm_oracle,
    pulse_envelope,
    rhs,
    suggest_levels,
)
from plasmonqd.model import ConfigurationError, SystemSpec, build_basis
from plasmonqd.units import HBAR_MEV_FS

# Peak field for 263.4 nJ/cm^2, tau = 12.5 fs, eps = 2.25, from brute-force
# quadrature of n c eps0 E0^2 G(t)^2 cos^2(w t) with the 2050 meV carrier kept.
E0_QUADRATURE = 9971751.0


def dark_spec(g, **kw):
    kw.setdefault("gamma_d", 0.0)
    kw.setdefault("gamma_p", 0.0)
    return SystemSpec.create(g, **kw)


def random_density(dim, rng):
    a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


# -- pulse ----------------------------------------------------------------------


def test_envelope_peak_and_fwhm():
    p = PulseSpec(100.0, 20.0)
    assert pulse_envelope(p, p.center) == 1.0
    for t in (p.center - 10.0, p.center + 10.0):
        assert pulse_envelope(p, t) ** 2 == pytest.approx(0.5, rel=1e-12)


def test_envelope_truncated():
    p = PulseSpec(100.0, 20.0)
    assert pulse_envelope(p, p.center + 3 * 20.0 + 1e-9) == 0.0
    assert pulse_envelope(p, p.center - 3 * 20.0 - 1e-9) == 0.0
    assert np.all(pulse_envelope(p, np.linspace(0, 200, 50)) <= 1.0)


def test_pulse_validation():
    with pytest.raises(ConfigurationError):
        PulseSpec(-1.0, 10.0)
    with pytest.raises(ConfigurationError):
        PulseSpec(1.0, 0.0)
    with pytest.raises(ConfigurationError):
        PulseSpec(1.0, 10.0, k_trunc=2.0)


def test_fluence_amplitude_oracle():
    e0 = fluence_to_amplitude(PulseSpec(263.4, 12.5), 2.25)
    assert e0 == pytest.approx(E0_QUADRATURE, rel=1e-3)


def test_fluence_scaling():
    assert fluence_to_amplitude(PulseSpec(0.0, 12.5), 2.25) == 0.0
    e1 = fluence_to_amplitude(PulseSpec(100.0, 12.5), 2.25)
    e2 = fluence_to_amplitude(PulseSpec(200.0, 12.5), 2.25)
    assert e2 / e1 == pytest.approx(math.sqrt(2.0), rel=1e-14)


def test_level_estimate_tracks_fluence():
    spec = SystemSpec.create([12.8, 24.9], gamma_s=186.0)
    low = suggest_levels(spec, PulseSpec(20.0, 12.5))
    high = suggest_levels(spec, PulseSpec(263.4, 12.5))
    assert spec.n_qds + 2 <= low < high <= 80
    assert suggest_levels(spec, None) == spec.n_qds + 2
    # the bare plasmon number grows linearly with fluence
    r = peak_plasmon_number(spec, PulseSpec(200.0, 12.5)) / peak_plasmon_number(spec, PulseSpec(100.0, 12.5))
    assert r == pytest.approx(2.0, rel=1e-9)


# -- initial states and rhs -----------------------------------------------------


@pytest.mark.parametrize("kind,qd", [("ground", 0), ("excited", 0), ("excited", 1)])
def test_initial_state_pure(kind, qd):
    spec = dark_spec([1.0, 2.0])
    rho = initial_state(kind, spec, qd=qd)
    assert np.trace(rho) == pytest.approx(1.0)
    np.testing.assert_allclose(rho @ rho, rho, atol=1e-15)


def test_initial_excited_qd1():
    spec = dark_spec([1.0, 2.0])
    basis = build_basis(spec)
    rho = initial_state("excited", spec, qd=0)
    k = basis.index((0, 1, 0))
    assert rho[k, k] == 1.0


def test_initial_state_errors():
    spec = dark_spec([1.0, 2.0])
    with pytest.raises(IndexError):
        initial_state("excited", spec, qd=2)
    with pytest.raises(ValueError):
        initial_state("thermal", spec)


def test_rhs_vanishes_without_dynamics():
    spec = dark_spec([0.0, 0.0], gamma_s=0.0)
    rho = np.diag(np.random.default_rng(0).random(spec.dimension)).astype(complex)
    assert not np.any(rhs(0.0, rho, spec))


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=15, deadline=None)
def test_rhs_trace_free_and_hermitian(seed):
    rng = np.random.default_rng(seed)
    spec = SystemSpec.create([12.0, 20.0], gamma_s=150.0, gamma_d=1.0, gamma_p=0.5, n_levels=3)
    rho = random_density(spec.dimension, rng)
    gen = Generator(spec, PulseSpec(200.0, 15.0))
    out = gen(gen.pulse.center, rho)
    assert abs(np.trace(out)) < 1e-14
    assert np.max(np.abs(out - out.conj().T)) == 0.0


def test_rhs_matches_liouvillian():
    rng = np.random.default_rng(5)
    spec = SystemSpec.create([5.0, 9.0], gamma_s=120.0, gamma_d=1.5, gamma_p=0.3, n_levels=3)
    pulse = PulseSpec(50.0, 10.0)
    rho = random_density(spec.dimension, rng)
    t = pulse.center + 4.0
    lv = liouvillian(spec, pulse, drive=pulse_envelope(pulse, t))
    np.testing.assert_allclose(rhs(t, rho, spec, pulse).ravel(), lv @ rho.ravel(), atol=1e-14)


def test_generator_restricted_to_three_state_model():
    g1, g2, gamma_s = 12.5, 25.0, 100.0
    spec = dark_spec([g1, g2], gamma_s=gamma_s)
    basis = build_basis(spec)
    gen = Generator(spec)
    kets = dark_observables(spec)
    # zero-order basis |0,0;1>, |S;0>, |A;0>; the plasmon ket carries a sign
    # because the coupling enters the Hamiltonian as -g
    u = np.column_stack([-kets["vac1"], kets["S0"], kets["A0"]])
    h_eff = 1j * HBAR_MEV_FS * (u.conj().T @ gen.k0.toarray() @ u)
    expect = ThreeStateModel.from_gamma(g1, g2, gamma_s).matrix()
    np.testing.assert_allclose(h_eff, expect, atol=1e-12)
    assert basis.dimension == 12


# -- propagation -----------------------------------------------------------------


def test_free_evolution_is_identity():
    spec = dark_spec([0.0, 0.0], gamma_s=0.0)
    rho0 = random_density(spec.dimension, np.random.default_rng(1))
    rho0 = np.diag(np.diag(rho0))
    traj = propagate(rho0, spec, integ=IntegratorConfig(t_end=50.0, store_states=True))
    for rho in traj.states:
        np.testing.assert_allclose(rho, rho0, atol=1e-15)


def test_amplitude_damping_closed_form():
    gp = 50.0
    spec = SystemSpec.create([0.0], gamma_s=0.0, gamma_d=0.0, gamma_p=gp, n_levels=2)
    traj = propagate(initial_state("excited", spec), spec, integ=IntegratorConfig(t_end=100.0))
    expect = np.exp(-gp * traj.times / HBAR_MEV_FS)
    np.testing.assert_allclose(traj.qd_populations[:, 0], expect, atol=1e-9)


def test_dephasing_closed_form():
    gd = 5.0
    spec = SystemSpec.create([0.0], gamma_s=0.0, gamma_d=gd, gamma_p=0.0, n_levels=2)
    basis = build_basis(spec)
    up, dn = basis.index((1, 0)), basis.index((0, 0))
    psi = np.zeros(4, complex)
    psi[[up, dn]] = 1 / math.sqrt(2)
    rho0 = np.outer(psi, psi)
    traj = propagate(rho0, spec, integ=IntegratorConfig(t_end=300.0, stride=5.0, store_states=True))
    coh = np.array([abs(r[up, dn]) for r in traj.states])
    np.testing.assert_allclose(coh, 0.5 * np.exp(-gd * traj.times / HBAR_MEV_FS), atol=1e-9)


def test_lossless_cycle_matches_closed_form():
    g1, g2 = 12.5, 25.0
    spec = dark_spec([g1, g2], gamma_s=0.0)
    traj = propagate(initial_state("excited", spec), spec, integ=IntegratorConfig(t_end=400.0, stride=0.25))
    x = g1 / g2
    # C(t) = 2 |c1 c2| with c1, c2 the QD amplitudes of the lossless solution
    u = np.cos(math.hypot(g1, g2) * traj.times / HBAR_MEV_FS)
    exact = 2 * x * np.abs((1 + x * x * u) * (u - 1)) / (1 + x * x) ** 2
    np.testing.assert_allclose(traj.pair_series(0, 1), exact, atol=1e-7)
    # peak 4x(1 - x^2)/(1 + x^2)^2 = 0.96, reached again every cycle
    assert traj.max_concurrence()[0, 1] == pytest.approx(0.96, abs=1e-4)
    peaks = traj.times[traj.pair_series(0, 1) > 0.95]
    assert peaks.max() - peaks.min() > 100.0


def test_dark_run_matches_three_state_model():
    g1, g2, gamma_s = 12.5, 12.5 * math.sqrt(3), 100.0
    spec = dark_spec([g1, g2], gamma_s=gamma_s)
    traj = propagate(initial_state("excited", spec), spec,
                     integ=IntegratorConfig(t_end=300.0), observables=dark_observables(spec))
    amp = three_state_evolve(ThreeStateModel.from_gamma(g1, g2, gamma_s), t=traj.times)
    np.testing.assert_allclose(traj.observables["S0"], np.abs(amp.aS) ** 2, atol=1e-8)
    np.testing.assert_allclose(traj.observables["A0"], np.abs(amp.aA) ** 2, atol=1e-8)
    np.testing.assert_allclose(traj.observables["vac1"], np.abs(amp.a0) ** 2, atol=1e-8)


@pytest.mark.filterwarnings("ignore::plasmonqd.dynamics.TruncationWarning")
def test_adaptive_matches_expm_oracle_single_qd():
    rng = np.random.default_rng(2016)
    for _ in range(3):
        g, gs, gd, gp = rng.uniform(5, 25), rng.uniform(50, 300), rng.uniform(0, 3), rng.uniform(0, 1)
        spec = SystemSpec.create([g], gamma_s=gs, gamma_d=gd, gamma_p=gp, n_levels=3)
        rho0 = random_density(spec.dimension, rng)
        cfg = dict(t_end=100.0, store_states=True, rtol=1e-11, atol=1e-13)
        a = propagate(rho0, spec, integ=IntegratorConfig(**cfg))
        b = propagate_expm_oracle(rho0, spec, IntegratorConfig(method="expm", **cfg))
        dev = max(np.max(np.abs(x - y)) for x, y in zip(a.states, b.states))
        assert dev < 1e-8


@pytest.mark.filterwarnings("ignore::plasmonqd.dynamics.TruncationWarning")
def test_expm_oracle_identity_and_trace():
    spec = dark_spec([0.0], gamma_s=0.0, n_levels=3)
    rho0 = random_density(spec.dimension, np.random.default_rng(4))
    traj = propagate_expm_oracle(rho0, spec, IntegratorConfig(method="expm", t_end=20.0, store_states=True))
    np.testing.assert_allclose(traj.states[-1], 0.5 * (rho0 + rho0.conj().T), atol=1e-14)
    spec = SystemSpec.create([10.0, 3.0], gamma_s=100.0, gamma_d=2.0, gamma_p=1.0)
    traj = propagate_expm_oracle(initial_state("excited", spec), spec,
                                 IntegratorConfig(method="expm", t_end=200.0))
    assert traj.trace_error.max() < 1e-12


def test_expm_oracle_dimension_limit():
    spec = SystemSpec.create([1.0, 1.0, 1.0], n_levels=10)
    with pytest.raises(ConfigurationError):
        propagate_expm_oracle(initial_state("ground", spec), spec)


def test_rk4_agrees_with_adaptive():
    spec = SystemSpec.create([10.0, 20.0], gamma_s=150.0, gamma_d=1.0, n_levels=15)
    pulse = PulseSpec(20.0, 10.0)
    a = propagate(initial_state("ground", spec), spec, pulse, IntegratorConfig(t_end=120.0))
    b = propagate(initial_state("ground", spec), spec, pulse,
                  IntegratorConfig(method="rk4", t_end=120.0, rk4_step=0.02))
    np.testing.assert_allclose(a.qd_populations, b.qd_populations, atol=1e-8)
    np.testing.assert_allclose(a.concurrence, b.concurrence, atol=1e-7)


def test_pulsed_oracle_agreement():
    spec = SystemSpec.create([10.0], gamma_s=150.0, gamma_d=1.0, n_levels=6)
    pulse = PulseSpec(2.0, 6.0)
    cfg = dict(t_end=40.0, stride=1.0)
    a = propagate(initial_state("ground", spec), spec, pulse, IntegratorConfig(**cfg))
    b = propagate(initial_state("ground", spec), spec, pulse,
                  IntegratorConfig(method="expm", **cfg))
    # the oracle freezes the drive on 0.05 fs slices, a second-order scheme
    np.testing.assert_allclose(a.plasmon_number, b.plasmon_number, atol=1e-5)


def test_level_shrinking_is_exact():
    spec = SystemSpec.create([12.0, 22.0], gamma_s=180.0, gamma_d=0.5, n_levels=20)
    pulse = PulseSpec(60.0, 12.5)
    kw = dict(t_end=400.0, rtol=1e-10, atol=1e-12)
    a = propagate(initial_state("ground", spec), spec, pulse, IntegratorConfig(**kw))
    b = propagate(initial_state("ground", spec), spec, pulse, IntegratorConfig(shrink_levels=False, **kw))
    np.testing.assert_allclose(a.concurrence, b.concurrence, atol=1e-8)
    np.testing.assert_allclose(a.qd_populations, b.qd_populations, atol=1e-9)


def test_truncation_warning():
    spec = SystemSpec.create([10.0], gamma_s=150.0, n_levels=3)
    with pytest.warns(TruncationWarning):
        propagate(initial_state("ground", spec), spec, PulseSpec(200.0, 12.5),
                  IntegratorConfig(t_end=60.0))


def test_pulsed_physicality():
    spec = SystemSpec.create([12.8, 24.9], gamma_s=186.0, gamma_d=0.0, n_levels=17)
    pulse = PulseSpec(40.0, 12.5)
    with warnings.catch_warnings():
        warnings.simplefilter("error", TruncationWarning)
        traj = propagate(initial_state("ground", spec), spec, pulse,
                         IntegratorConfig(t_end=300.0, check_positivity=True))
    assert traj.trace_error.max() < 1e-8
    assert traj.hermiticity_error.max() < 1e-12
    assert traj.min_eigenvalue.min() > -1e-8
    assert traj.max_concurrence()[0, 1] > 0.01


def test_trajectory_csv(tmp_path):
    spec = dark_spec([12.5, 25.0], gamma_s=100.0)
    traj = propagate(initial_state("excited", spec), spec,
                     integ=IntegratorConfig(t_end=10.0), observables=dark_observables(spec))
    path = tmp_path / "t.csv"
    traj.to_csv(path, ["hello"])
    lines = path.read_text().splitlines()
    assert lines[0] == "# hello"
    assert lines[1].split(",") == ["t_fs", "P_qd1", "P_qd2", "plasmon_n", "C_1_2", "obs_S0", "obs_A0", "obs_vac1"]
    assert len(lines) == 2 + 11


def test_integrator_config_validation():
    with pytest.raises(ConfigurationError):
        IntegratorConfig(method="euler")
    with pytest.raises(ConfigurationError):
        IntegratorConfig(rtol=0.0)
    with pytest.raises(ConfigurationError):
        IntegratorConfig(t_end=-1.0)

"""Master-equation propagation with an optional Gaussian laser pulse.

Times are in fs.  The equation solved is

    drho/dt = -(i/hbar) [H + H_d(t), rho] + L(rho)

in the frame rotating at the carrier frequency, with
``H_d(t) = -(E0 G(t) / 2) D``.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg as sla

from . import units
from .entanglement import pairwise_concurrences
from .model import (
    ConfigurationError,
    SystemSpec,
    build_basis,
    build_drive,
    build_hamiltonian,
    build_operators,
    dissipators,
)

__all__ = [
    "PulseSpec",
    "IntegratorConfig",
    "Trajectory",
    "NumericalError",
    "TruncationWarning",
    "Generator",
    "fluence_to_amplitude",
    "peak_plasmon_number",
    "suggest_levels",
    "pulse_envelope",
    "initial_state",
    "rhs",
    "propagate",
    "propagate_expm_oracle",
    "liouvillian",
    "dark_observables",
    "pair_observables",
]

_LN2 = math.log(2.0)


class NumericalError(RuntimeError):
    """Integration failed (e.g. step size underflow)."""


class TruncationWarning(UserWarning):
    """The top plasmon level picked up more population than allowed."""


@dataclass(frozen=True)
class PulseSpec:
    """Gaussian pulse ``E(t) = G(t) E0 cos(w0 t)``.

    ``fluence`` in nJ/cm^2, ``tau`` (FWHM of E^2) and ``t_center`` in fs.
    The envelope is cut to zero beyond ``k_trunc * tau`` from the center.
    ``carrier`` (meV) defaults to resonance with the plasmon.
    """

    fluence: float
    tau: float
    carrier: float | None = None
    t_center: float | None = None
    k_trunc: float = 3.0

    def __post_init__(self):
        if self.fluence < 0:
            raise ConfigurationError("fluence must be non-negative")
        if self.tau <= 0:
            raise ConfigurationError("pulse duration must be positive")
        if self.k_trunc < 3:
            raise ConfigurationError("envelope truncation must be at least 3 tau")

    @property
    def center(self) -> float:
        return 3.0 * self.tau if self.t_center is None else self.t_center

    @property
    def support(self) -> tuple[float, float]:
        half = self.k_trunc * self.tau
        return self.center - half, self.center + half


def pulse_envelope(pulse: PulseSpec, t):
    """Envelope G(t); G^2 has FWHM ``tau``."""
    t = np.asarray(t, dtype=float)
    dt = t - pulse.center
    g = np.exp(-2.0 * _LN2 * (dt / pulse.tau) ** 2)
    g = np.where(np.abs(dt) > pulse.k_trunc * pulse.tau, 0.0, g)
    return g if g.ndim else float(g)


def fluence_to_amplitude(pulse: PulseSpec, eps_med: float) -> float:
    """Peak field E0 in V/m from the fluence.

    Uses ``F = sqrt(eps) c eps0 E0^2 <cos^2> int G^2 dt`` with
    ``int G^2 dt = tau sqrt(pi / (4 ln 2))`` and ``<cos^2> = 1/2``.
    """
    f_si = pulse.fluence * units.NJ_PER_CM2
    g2_integral = pulse.tau * units.FS * math.sqrt(math.pi / (4.0 * _LN2))
    prefactor = math.sqrt(eps_med) * units.SPEED_OF_LIGHT * units.EPSILON_0
    return math.sqrt(2.0 * f_si / (prefactor * g2_integral))


def peak_plasmon_number(spec: SystemSpec, pulse: PulseSpec, n_grid: int = 4000) -> float:
    """Peak ``|alpha|^2`` of the bare driven, damped plasmon.

    Solves ``alpha' = -(gamma_s/2) alpha + i (d_s E0 G(t) / 2 hbar)`` with
    the QDs removed.  The plasmon state stays close to the coherent state
    ``|alpha>``, so this sizes the Fock truncation.
    """
    if pulse.fluence == 0:
        return 0.0
    e0 = fluence_to_amplitude(pulse, spec.eps_med)
    omega = units.dipole_energy_mev(spec.plasmon.d, e0) / (2.0 * units.HBAR_MEV_FS)
    kappa = 0.5 * units.rate(spec.plasmon.gamma_s)
    lo, hi = pulse.support
    dt = (hi - lo) / n_grid
    mid = pulse_envelope(pulse, lo + dt * (np.arange(n_grid) + 0.5))
    decay = math.exp(-kappa * dt)
    gain = (1.0 - decay) / kappa if kappa > 0 else dt
    alpha, peak = 0j, 0.0
    for g in mid:
        # exact step for a drive held at its midpoint value
        alpha = alpha * decay + 1j * omega * g * gain
        peak = max(peak, abs(alpha) ** 2)
    return peak


def suggest_levels(
    spec: SystemSpec,
    pulse: PulseSpec | None,
    tail: float = 1e-7,
    min_levels: int | None = None,
    max_levels: int = 80,
) -> int:
    """Fock truncation whose top level a coherent state barely reaches.

    Returns the smallest ``n_levels`` such that a Poisson distribution with
    the peak plasmon number puts less than ``tail`` on levels at or above the
    top one, plus one level per QD for exchanged excitations.  Clipped to
    ``[min_levels, max_levels]``; ``min_levels`` defaults to ``n_qds + 2``.
    """
    from scipy.stats import poisson

    lo = spec.n_qds + 2 if min_levels is None else min_levels
    lam = 0.0 if pulse is None else peak_plasmon_number(spec, pulse)
    if lam == 0.0:
        return max(lo, 2)
    top = int(poisson.isf(tail, lam)) + 1
    return int(min(max(top + 1 + spec.n_qds, lo), max_levels))


@dataclass
class IntegratorConfig:
    """``method`` is 'adaptive' (Dormand-Prince 5(4), PI control), 'rk4' or 'expm'."""

    method: str = "adaptive"
    rtol: float = 1e-8
    atol: float = 1e-10
    max_step: float = 5.0
    stride: float = 1.0
    t_start: float = 0.0
    t_end: float = 2000.0
    rk4_step: float = 0.05
    truncation_tol: float = 1e-6
    check_positivity: bool = False
    store_states: bool = False
    dense_limit: int = 64
    min_step: float = 1e-10
    shrink_levels: bool = True
    # None ties the threshold to atol: below it populations are integrator noise
    shrink_tol: float | None = None
    shrink_interval: float = 20.0

    def __post_init__(self):
        if self.rtol <= 0 or self.atol <= 0:
            raise ConfigurationError("tolerances must be positive")
        if self.method not in ("adaptive", "rk4", "expm"):
            raise ConfigurationError(f"unknown integrator method {self.method!r}")
        if self.stride <= 0 or self.t_end <= self.t_start:
            raise ConfigurationError("bad output grid")

    def output_times(self) -> np.ndarray:
        n = int(math.floor((self.t_end - self.t_start) / self.stride + 1e-9))
        return self.t_start + self.stride * np.arange(n + 1)


class Generator:
    """Precomputed pieces of the master-equation right-hand side.

    Everything is stored in 1/fs so that ``drho/dt = K rho + (K rho)^+ + J(rho)``
    with ``K = -(i/hbar) H_eff`` for Hermitian ``rho``.
    """

    def __init__(self, spec: SystemSpec, pulse: PulseSpec | None = None):
        self.spec = spec
        self.pulse = pulse
        self.basis = build_basis(spec)
        self.ops = build_operators(spec, self.basis)
        carrier = None if pulse is None else pulse.carrier
        self.hamiltonian = build_hamiltonian(spec, self.ops, omega_ref=carrier)
        self.jumps = dissipators(spec, self.ops)

        dim = spec.dimension
        h_eff = self.hamiltonian.astype(complex)
        diag_jump = np.zeros((dim, dim))
        self._offdiag_jumps = []
        for gamma, a in self.jumps:
            h_eff = h_eff - 0.5j * units.HBAR_MEV_FS * gamma * (a.getH() @ a)
            if _is_diagonal(a):
                d = a.diagonal()
                diag_jump += gamma * np.real(np.outer(d, d.conj()))
            else:
                self._offdiag_jumps.append((gamma, a.tocsr()))
        self._diag_jump = diag_jump if np.any(diag_jump) else None
        self.k0 = (-1j / units.HBAR_MEV_FS * h_eff).tocsr()

        self.e0 = 0.0
        self.k_drive = None
        if pulse is not None and pulse.fluence > 0:
            self.e0 = fluence_to_amplitude(pulse, spec.eps_med)
            d_mev = units.dipole_energy_mev(build_drive(spec, self.ops), self.e0)
            # H_d = -(G/2) D E0, so -(i/hbar) H_d = (i G / (2 hbar)) D E0
            self.k_drive = (0.5j / units.HBAR_MEV_FS * d_mev).tocsr()

    @property
    def dimension(self) -> int:
        return self.spec.dimension

    def drive_amplitude(self, t: float) -> float:
        if self.k_drive is None:
            return 0.0
        return pulse_envelope(self.pulse, t)

    def k_matrix(self, t: float):
        g = self.drive_amplitude(t)
        if g == 0.0:
            return self.k0
        return self.k0 + g * self.k_drive

    def __call__(self, t: float, rho: np.ndarray) -> np.ndarray:
        g = self.drive_amplitude(t)
        y = self.k0 @ rho
        if g != 0.0:
            y += g * (self.k_drive @ rho)
        for gamma, a in self._offdiag_jumps:
            y += 0.5 * gamma * (a @ (a @ rho).conj().T)
        if self._diag_jump is not None:
            y += 0.5 * self._diag_jump * rho
        # Z + Z^+ keeps the result exactly Hermitian; round-off in an
        # anti-Hermitian part would otherwise grow without bound
        return y + y.conj().T


def _is_diagonal(a) -> bool:
    coo = a.tocoo()
    return bool(np.all(coo.row == coo.col))


def rhs(t: float, rho, spec: SystemSpec, pulse: PulseSpec | None = None):
    """Right-hand side of the master equation for a Hermitian ``rho``.

    Convenience wrapper; rebuilds operators on every call, so use
    :class:`Generator` inside loops.
    """
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (spec.dimension, spec.dimension):
        raise ValueError("rho dimension does not match the system")
    return Generator(spec, pulse)(t, rho)


def initial_state(kind: str, spec: SystemSpec, qd: int = 0, ket=None) -> np.ndarray:
    """Pure-state density matrix.

    ``kind`` is 'ground', 'excited' (QD ``qd``, 0-based, excited; everything
    else in the ground state) or 'ket' (custom state vector ``ket``).
    """
    basis = build_basis(spec)
    dim = spec.dimension
    if kind == "ground":
        psi = np.zeros(dim, dtype=complex)
        psi[0] = 1.0
    elif kind == "excited":
        if not 0 <= qd < spec.n_qds:
            raise IndexError(f"QD index {qd} out of range")
        occ = [0] * spec.n_qds
        occ[spec.n_qds - 1 - qd] = 1
        psi = np.zeros(dim, dtype=complex)
        psi[basis.index(occ + [0])] = 1.0
    elif kind == "ket":
        psi = np.asarray(ket, dtype=complex).ravel()
        if psi.shape != (dim,):
            raise ValueError("custom ket has wrong dimension")
        psi = psi / np.linalg.norm(psi)
    else:
        raise ValueError(f"unknown initial state kind {kind!r}")
    return np.outer(psi, psi.conj())


def dark_observables(spec: SystemSpec, i: int = 0, j: int = 1) -> dict:
    """Kets |S;0>, |A;0> of QD pair (i, j) and |0..0;1> for projector observables.

    With ``i = 0`` (QD1) excited, |q_j=0, q_i=1; 0> = (|S;0> + |A;0>)/sqrt(2).
    """
    basis = build_basis(spec)
    n = spec.n_qds

    def ket(excited_qd, s):
        occ = [0] * n
        if excited_qd is not None:
            occ[n - 1 - excited_qd] = 1
        v = np.zeros(spec.dimension, dtype=complex)
        v[basis.index(occ + [s])] = 1.0
        return v

    ei, ej = ket(i, 0), ket(j, 0)
    return {
        "S0": (ei + ej) / math.sqrt(2.0),
        "A0": (ei - ej) / math.sqrt(2.0),
        "vac1": ket(None, 1),
    }


def pair_observables(spec: SystemSpec, i: int = 0, j: int = 1) -> dict:
    """|S> and |A> populations of QD pair (i, j) traced over the plasmon."""
    from .entanglement import partial_trace_pair

    s = np.array([0, 1, 1, 0]) / math.sqrt(2.0)
    a = np.array([0, -1, 1, 0]) / math.sqrt(2.0)  # |10> - |01>, i is the high bit

    def make(vec):
        def obs(rho):
            red = partial_trace_pair(rho, i, j, spec.n_qds, spec.n_levels)
            return float(np.real(vec @ red @ vec))

        return obs

    return {"S": make(s), "A": make(a)}


@dataclass
class Trajectory:
    """Observables sampled on the output grid."""

    times: np.ndarray
    qd_populations: np.ndarray
    plasmon_number: np.ndarray
    concurrence: np.ndarray
    observables: dict[str, np.ndarray] = field(default_factory=dict)
    trace_error: np.ndarray | None = None
    hermiticity_error: np.ndarray | None = None
    min_eigenvalue: np.ndarray | None = None
    top_level_population: np.ndarray | None = None
    states: list | None = None
    final_state: np.ndarray | None = None
    n_steps: int = 0
    n_rejected: int = 0

    @property
    def n_qds(self) -> int:
        return self.qd_populations.shape[1]

    def pair_series(self, i: int, j: int) -> np.ndarray:
        return self.concurrence[:, i, j]

    def max_concurrence(self, window: tuple[float, float] | None = None) -> np.ndarray:
        """Per-pair maximum of C_ij(t) over samples in ``window`` (fs)."""
        mask = np.ones(len(self.times), dtype=bool)
        if window is not None:
            mask = (self.times >= window[0]) & (self.times <= window[1])
        return self.concurrence[mask].max(axis=0)

    def time_of_max(self, i: int = 0, j: int = 1) -> float:
        return float(self.times[np.argmax(self.concurrence[:, i, j])])

    def columns(self) -> tuple[list[str], np.ndarray]:
        n = self.n_qds
        names = ["t_fs"] + [f"P_qd{k + 1}" for k in range(n)] + ["plasmon_n"]
        cols = [self.times, *self.qd_populations.T, self.plasmon_number]
        for i in range(n):
            for j in range(i + 1, n):
                names.append(f"C_{i + 1}_{j + 1}")
                cols.append(self.concurrence[:, i, j])
        for key, val in self.observables.items():
            names.append(f"obs_{key}")
            cols.append(val)
        return names, np.column_stack(cols)

    def to_csv(self, path, header_lines: Sequence[str] = ()) -> None:
        names, data = self.columns()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(names)
            for row in data:
                w.writerow([repr(float(v)) for v in row])


class _Recorder:
    def __init__(self, spec, observables, cfg, times):
        self.spec = spec
        self.basis = build_basis(spec)
        self.cfg = cfg
        self.times = times
        nt = len(times)
        n = spec.n_qds
        self.occ = np.array([self.basis.qd_occupation(k) for k in range(n)], float)
        self.svals = self.basis.plasmon_number().astype(float)
        self.top = self.svals == spec.n_levels - 1
        self.obs = dict(observables or {})
        self.qd = np.zeros((nt, n))
        self.nb = np.zeros(nt)
        self.conc = np.zeros((nt, n, n))
        self.obs_vals = {k: np.zeros(nt) for k in self.obs}
        self.trace_err = np.zeros(nt)
        self.herm_err = np.zeros(nt)
        self.top_pop = np.zeros(nt)
        self.min_eig = np.zeros(nt) if cfg.check_positivity else None
        self.states = [] if cfg.store_states else None

    def record(self, k, rho):
        self.herm_err[k] = np.max(np.abs(rho - rho.conj().T))
        rho = 0.5 * (rho + rho.conj().T)
        diag = np.real(np.diag(rho))
        self.trace_err[k] = abs(diag.sum() - 1.0)
        self.qd[k] = self.occ @ diag
        self.nb[k] = self.svals @ diag
        self.top_pop[k] = diag[self.top].sum()
        self.conc[k] = pairwise_concurrences(rho, self.spec.n_qds, self.spec.n_levels)
        for name, o in self.obs.items():
            if callable(o):
                self.obs_vals[name][k] = o(rho)
            else:
                v = np.asarray(o)
                self.obs_vals[name][k] = float(np.real(v.conj() @ rho @ v))
        if self.min_eig is not None:
            self.min_eig[k] = np.linalg.eigvalsh(rho)[0]
        if self.states is not None:
            self.states.append(rho.copy())
        return rho

    def finish(self, final, n_steps=0, n_rejected=0):
        top = float(self.top_pop.max())
        if top > self.cfg.truncation_tol:
            warnings.warn(
                f"top plasmon level population {top:.2e} exceeds "
                f"{self.cfg.truncation_tol:.0e}; increase n_levels",
                TruncationWarning,
                stacklevel=3,
            )
        return Trajectory(
            times=self.times,
            qd_populations=self.qd,
            plasmon_number=self.nb,
            concurrence=self.conc,
            observables=self.obs_vals,
            trace_error=self.trace_err,
            hermiticity_error=self.herm_err,
            min_eigenvalue=self.min_eig,
            top_level_population=self.top_pop,
            states=self.states,
            final_state=final,
            n_steps=n_steps,
            n_rejected=n_rejected,
        )


# Dormand-Prince 5(4) tableau
_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1, 1])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_E = _B - np.array(
    [5179 / 57600, 0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)
# continuous extension (Shampine), coefficients of theta^1..theta^4
_P = np.array(
    [
        [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
        [0, 0, 0, 0],
        [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
        [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
        [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
        [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
        [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
    ]
)


def _breakpoints(gen: Generator, cfg: IntegratorConfig):
    pts = []
    if gen.k_drive is not None:
        lo, hi = gen.pulse.support
        pts = [p for p in (lo, hi) if cfg.t_start < p < cfg.t_end]
    return pts


def _resize_levels(rho, n_qds, old, new):
    """Cut or zero-pad the plasmon factor of ``rho`` from ``old`` to ``new`` levels."""
    nq = 2**n_qds
    t = rho.reshape(nq, old, nq, old)
    out = np.zeros((nq, new, nq, new), dtype=complex)
    k = min(old, new)
    out[:, :k, :, :k] = t[:, :k, :, :k]
    return out.reshape(nq * new, nq * new)


def _shrunk_levels(rho, spec, n_levels, tol):
    """Plasmon levels needed once the drive is off.

    Without drive the Hamiltonian conserves the total excitation number and
    every jump lowers it, so a level above ``L + N`` can never be populated
    when nothing above ``L`` carries more than ``tol``.
    """
    pops = np.real(np.diag(rho)).reshape(2**spec.n_qds, n_levels).sum(axis=0)
    occupied = np.nonzero(np.abs(pops) > tol)[0]
    top = int(occupied[-1]) if occupied.size else 0
    return max(2, min(n_levels, top + spec.n_qds + 1))


def _integrate_adaptive(gen, rho0, cfg, rec):
    times = rec.times
    spec = gen.spec
    full_levels = spec.n_levels
    levels = full_levels
    dim = gen.dimension
    shape = (dim, dim)
    f = lambda t, y: gen(t, y.reshape(shape)).ravel()

    def emit(k, y):
        rho = y.reshape(shape)
        if levels != full_levels:
            rho = _resize_levels(rho, spec.n_qds, levels, full_levels)
        rec.record(k, rho)

    t = cfg.t_start
    y = rho0.astype(complex).ravel()
    k1 = f(t, y)
    scale = cfg.atol + cfg.rtol * np.abs(y)
    d0 = np.sqrt(np.mean(np.abs(y / scale) ** 2))
    d1 = np.sqrt(np.mean(np.abs(k1 / scale) ** 2))
    h = 0.01 * d0 / d1 if d0 > 1e-5 and d1 > 1e-5 else 1e-3
    h = min(h, cfg.max_step, cfg.stride)

    drive_off = gen.k_drive is None
    drive_end = gen.pulse.support[1] if not drive_off else cfg.t_start
    stops = sorted(set(_breakpoints(gen, cfg)) | {cfg.t_end})
    next_shrink = max(cfg.t_start, drive_end)
    k_out = 0
    while k_out < len(times) and times[k_out] <= t + 1e-12:
        emit(k_out, y)
        k_out += 1

    err_prev = 1e-4
    n_steps = n_rej = 0
    safety, alpha, beta = 0.9, 0.7 / 5, 0.4 / 5
    while t < cfg.t_end - 1e-12:
        if cfg.shrink_levels and t >= next_shrink - 1e-12 and levels > 2:
            tol = cfg.atol if cfg.shrink_tol is None else cfg.shrink_tol
            new_levels = _shrunk_levels(y.reshape(shape), spec, levels, tol)
            if new_levels < levels:
                y = _resize_levels(y.reshape(shape), spec.n_qds, levels, new_levels).ravel()
                levels = new_levels
                small = replace(spec, plasmon=replace(spec.plasmon, n_levels=levels))
                gen = Generator(small, None)
                dim = gen.dimension
                shape = (dim, dim)
                k1 = f(t, y)
            next_shrink = t + cfg.shrink_interval
        stop = next(s for s in stops if s > t + 1e-12)
        hit = False
        if t + h >= stop - 1e-12:
            h = stop - t
            hit = True
        ks = [k1]
        for s in range(1, 7):
            ys = y + h * sum(a * kk for a, kk in zip(_A[s], ks))
            ks.append(f(t + _C[s] * h, ys))
        y_new = y + h * sum(b * kk for b, kk in zip(_B[:6], ks[:6]))
        err_vec = h * sum(e * kk for e, kk in zip(_E, ks))
        scale = cfg.atol + cfg.rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = float(np.sqrt(np.mean(np.abs(err_vec / scale) ** 2)))
        if err <= 1.0:
            t_new = stop if hit else t + h
            while k_out < len(times) and times[k_out] <= t_new + 1e-12:
                theta = (times[k_out] - t) / h
                coeff = _P @ theta ** np.arange(1, 5)
                emit(k_out, y + h * sum(c * kk for c, kk in zip(coeff, ks)))
                k_out += 1
            t, y = t_new, y_new
            k1 = ks[6]
            n_steps += 1
            err = max(err, 1e-10)
            fac = safety * err ** (-alpha) * err_prev**beta
            h = h * min(5.0, max(0.2, fac))
            err_prev = err
        else:
            n_rej += 1
            h = h * max(0.2, safety * err ** (-0.2))
        h = min(h, cfg.max_step)
        if h < cfg.min_step:
            raise NumericalError(f"step size underflow at t={t:.6g} fs")
    final = y.reshape(shape)
    if levels != full_levels:
        final = _resize_levels(final, spec.n_qds, levels, full_levels)
    return final, n_steps, n_rej


def _integrate_rk4(gen, rho0, cfg, rec):
    times = rec.times
    rho = rho0.astype(complex)
    rec.record(0, rho)
    n_steps = 0
    for k in range(1, len(times)):
        t0, t1 = times[k - 1], times[k]
        m = max(1, int(math.ceil((t1 - t0) / cfg.rk4_step - 1e-9)))
        h = (t1 - t0) / m
        t = t0
        for _ in range(m):
            k1 = gen(t, rho)
            k2 = gen(t + h / 2, rho + h / 2 * k1)
            k3 = gen(t + h / 2, rho + h / 2 * k2)
            k4 = gen(t + h, rho + h * k3)
            rho = rho + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            t += h
            n_steps += 1
        rho = rec.record(k, rho)
    return rho, n_steps, 0


def propagate(
    initial,
    spec: SystemSpec,
    pulse: PulseSpec | None = None,
    integ: IntegratorConfig | None = None,
    observables: Mapping[str, object] | None = None,
) -> Trajectory:
    """Integrate the master equation from ``initial`` and sample observables.

    ``observables`` maps names to kets (projector populations) or to
    callables ``rho -> float``.  Output states are re-symmetrized to
    ``(rho + rho^+)/2``; the trace is not renormalized.
    """
    integ = integ or IntegratorConfig()
    rho0 = np.asarray(initial, dtype=complex)
    if rho0.shape != (spec.dimension, spec.dimension):
        raise ValueError("initial state dimension does not match the system")
    if integ.method == "expm":
        return propagate_expm_oracle(rho0, spec, integ, pulse=pulse, observables=observables)
    gen = Generator(spec, pulse)
    rec = _Recorder(spec, observables, integ, integ.output_times())
    if integ.method == "adaptive":
        final, n, nr = _integrate_adaptive(gen, rho0, integ, rec)
    else:
        final, n, nr = _integrate_rk4(gen, rho0, integ, rec)
    return rec.finish(final, n, nr)


def liouvillian(spec: SystemSpec, pulse: PulseSpec | None = None, drive: float = 0.0):
    """Dense Liouvillian (1/fs) acting on row-major ``rho.ravel()``.

    ``drive`` is the envelope value G at which the pulse term is frozen.
    """
    gen = Generator(spec, pulse)
    dim = spec.dimension
    eye = np.eye(dim)
    h = gen.hamiltonian.toarray()
    if drive and gen.k_drive is not None:
        # k_drive = (i/(2 hbar)) D E0, so the drive Hamiltonian is -(hbar/i) k_drive G
        h = h + (1j * units.HBAR_MEV_FS) * drive * gen.k_drive.toarray()
    lv = -1j / units.HBAR_MEV_FS * (np.kron(h, eye) - np.kron(eye, h.T))
    for gamma, a in gen.jumps:
        a = a.toarray()
        ada = a.conj().T @ a
        lv += gamma * (np.kron(a, a.conj()) - 0.5 * np.kron(ada, eye) - 0.5 * np.kron(eye, ada.T))
    return lv


def propagate_expm_oracle(
    initial,
    spec: SystemSpec,
    integ: IntegratorConfig | None = None,
    pulse: PulseSpec | None = None,
    observables: Mapping[str, object] | None = None,
    substeps: int = 20,
) -> Trajectory:
    """Exact propagation by the dense exponential of the Liouvillian.

    Dark runs are exact.  With a pulse the drive is frozen at the midpoint
    of ``substeps`` sub-intervals per output stride.
    """
    integ = integ or IntegratorConfig(method="expm")
    dim = spec.dimension
    if dim > integ.dense_limit:
        raise ConfigurationError(
            f"dimension {dim} exceeds the dense oracle limit {integ.dense_limit}"
        )
    times = integ.output_times()
    rec = _Recorder(spec, observables, integ, times)
    vec = np.asarray(initial, dtype=complex).ravel()
    rec.record(0, vec.reshape(dim, dim))
    dark = pulse is None or pulse.fluence == 0
    if dark:
        lv = liouvillian(spec)
        step = sla.expm(lv * integ.stride)
    for k in range(1, len(times)):
        if dark:
            vec = step @ vec
        else:
            t0, t1 = times[k - 1], times[k]
            h = (t1 - t0) / substeps
            for m in range(substeps):
                g = pulse_envelope(pulse, t0 + (m + 0.5) * h)
                vec = sla.expm(liouvillian(spec, pulse, g) * h) @ vec
        rho = rec.record(k, vec.reshape(dim, dim))
        vec = rho.ravel()
    return rec.finish(vec.reshape(dim, dim))

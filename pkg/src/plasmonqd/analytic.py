"""Closed-form dark dynamics, asymptotics, Rabi-flop rule and local field.

The dark problem keeps one quantum of excitation, no QD dephasing, and
plasmon loss as an imaginary diagonal element ``-i eps`` (``eps = gamma_s/2``)
of an effective symmetric, non-Hermitian Hamiltonian.  Eigenvectors of such
a matrix are orthogonal under the bilinear form ``u . v`` (no conjugation),
so the propagator is ``sum_k v_k v_k^T exp(-i w_k t / hbar) / n_k`` with the
complex norms ``n_k = v_k . v_k``.

All couplings and ``eps`` are energies in meV; times are in fs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
import scipy.linalg as sla

from . import units
from .entanglement import figure_of_merit
from .model import ConfigurationError, SystemSpec

__all__ = [
    "ThreeStateModel",
    "ThreeStateAmplitudes",
    "DarkModel",
    "LocalFieldModel",
    "SINGLE_EXCITED",
    "three_state_evolve",
    "three_state_lossless",
    "three_state_asymptotic",
    "short_time_amplitudes",
    "ndark_build",
    "ndark_evolve",
    "ndark_asymptotic",
    "ndark_optimal_ratio",
    "common_ratio_couplings",
    "ratio_contour",
    "golden_section",
    "rabi_ratio",
    "local_field",
]

HBAR = units.HBAR_MEV_FS
_SQRT2 = math.sqrt(2.0)


class ThreeStateAmplitudes(NamedTuple):
    """Amplitudes of |0,0;1>, |S;0>, |A;0> (arrays when evaluated on a grid)."""

    a0: complex
    aS: complex
    aA: complex

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.a0, self.aS, self.aA], dtype=complex)

    @property
    def populations(self) -> np.ndarray:
        return np.abs(np.array([self.a0, self.aS, self.aA])) ** 2


#: QD1 excited, QD2 and plasmon cold: |0,1;0> = (|S;0> + |A;0>)/sqrt(2).
SINGLE_EXCITED = ThreeStateAmplitudes(0.0, 1 / _SQRT2, 1 / _SQRT2)


@dataclass(frozen=True)
class ThreeStateModel:
    """Two QDs in the zero-order basis |0,0;1>, |S;0>, |A;0>."""

    g1: float
    g2: float
    epsilon: float = 0.0

    @classmethod
    def from_gamma(cls, g1, g2, gamma_s):
        return cls(g1, g2, 0.5 * gamma_s)

    @property
    def alpha(self) -> float:
        return (self.g1 + self.g2) / _SQRT2

    @property
    def beta(self) -> float:
        return (self.g1 - self.g2) / _SQRT2

    @property
    def eta(self) -> float:
        return math.hypot(self.alpha, self.beta)

    @property
    def x(self) -> float:
        return self.beta / self.alpha

    def matrix(self) -> np.ndarray:
        a, b = self.alpha, self.beta
        return np.array([[-1j * self.epsilon, a, b], [a, 0, 0], [b, 0, 0]], dtype=complex)

    def eigenvalues(self) -> np.ndarray:
        root = np.sqrt(complex(4 * self.eta**2 - self.epsilon**2))
        return np.array([0.0, (-1j * self.epsilon - root) / 2, (-1j * self.epsilon + root) / 2])

    def eigenvectors(self) -> np.ndarray:
        """Columns are unnormalized eigenvectors, scaled to stay finite at beta = 0."""
        a, b = self.alpha, self.beta
        w = self.eigenvalues()
        return np.array(
            [[0.0, w[1], w[2]], [-b, a, a], [a, b, b]], dtype=complex
        )


def _bilinear_propagate(w, v, b0, t):
    """``sum_k v_k (v_k . b0) exp(-i w_k t/hbar) / n_k`` for an array of times."""
    norms = np.einsum("jk,jk->k", v, v)
    proj = (v.T @ b0) / norms
    phase = np.exp(-1j * np.outer(np.atleast_1d(t), w) / HBAR)
    out = (phase * proj) @ v.T
    return out


def _is_defective(w, v) -> bool:
    """True at or near the exceptional point where the decaying pair coalesces.

    The last two eigenvalues are the decaying pair.  Close to coalescence the
    bilinear norms vanish and the eigen-sum cancels catastrophically, so the
    callers switch to a direct matrix exponential there.
    """
    gap = abs(w[-1] - w[-2])
    if gap <= 1e-4 * max(abs(w[-1]), abs(w[-2]), 1e-300):
        return True
    norms = np.abs(np.einsum("jk,jk->k", v, v))
    colscale = np.sum(np.abs(v) ** 2, axis=0)
    return bool(np.any(norms < 1e-10 * np.maximum(colscale, 1e-300)))


def three_state_evolve(model: ThreeStateModel, init=SINGLE_EXCITED, t=0.0):
    """Amplitudes at time(s) ``t`` from the eigen-decomposed propagator."""
    b0 = np.asarray(init.vector if isinstance(init, ThreeStateAmplitudes) else init, complex)
    scalar = np.ndim(t) == 0
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t < 0):
        raise ValueError("time must be non-negative")
    w, v = model.eigenvalues(), model.eigenvectors()
    if model.eta == 0.0:
        # uncoupled: only the plasmon amplitude decays
        out = np.tile(b0, (len(t), 1))
        out[:, 0] *= np.exp(-model.epsilon * t / HBAR)
    elif _is_defective(w, v):
        # exceptional point 4 eta^2 = eps^2: no eigenbasis
        m = model.matrix()
        out = np.array([sla.expm(-1j * m * ti / HBAR) @ b0 for ti in t])
    else:
        out = _bilinear_propagate(w, v, b0, t)
    out[t == 0] = b0
    if scalar:
        return ThreeStateAmplitudes(*out[0])
    return ThreeStateAmplitudes(out[:, 0], out[:, 1], out[:, 2])


def three_state_lossless(model: ThreeStateModel, init=SINGLE_EXCITED, t=0.0):
    """Explicit lossless solution ``a(t) = a(0) + (M F/eta^2 - i W G/eta) a(0)``.

    ``F = cos(eta t) - 1``, ``G = sin(eta t)`` and ``M`` is the projector-like
    matrix diag(eta^2, [[alpha^2, alpha beta], [alpha beta, beta^2]]).
    """
    if model.epsilon != 0:
        raise ValueError("explicit form only holds without plasmon loss")
    b0 = np.asarray(init.vector if isinstance(init, ThreeStateAmplitudes) else init, complex)
    a, b, eta = model.alpha, model.beta, model.eta
    scalar = np.ndim(t) == 0
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if eta == 0:
        out = np.tile(b0, (len(t), 1))
    else:
        mm = np.array([[eta**2, 0, 0], [0, a * a, a * b], [0, a * b, b * b]])
        wm = np.array([[0, a, b], [a, 0, 0], [b, 0, 0]])
        ft = np.cos(eta * t / HBAR) - 1
        gt = np.sin(eta * t / HBAR)
        out = (
            b0
            + np.outer(ft / eta**2, mm @ b0)
            - 1j * np.outer(gt / eta, wm @ b0)
        )
    if scalar:
        return ThreeStateAmplitudes(*out[0])
    return ThreeStateAmplitudes(out[:, 0], out[:, 1], out[:, 2])


def three_state_asymptotic(model: ThreeStateModel, init=SINGLE_EXCITED):
    """``(a_S(inf), a_A(inf), C(inf))``; only the w = 0 eigenvector survives.

    The concurrence is ``|P_A - P_S|``; it depends on the couplings only
    through ``x = (g1 - g2)/(g1 + g2)``.
    """
    if model.epsilon <= 0:
        raise ValueError("asymptotic limit needs plasmon loss (epsilon > 0)")
    b0 = np.asarray(init.vector if isinstance(init, ThreeStateAmplitudes) else init, complex)
    v = model.eigenvectors()[:, 0]
    b_inf = v * (v @ b0) / (v @ v)
    a_s, a_a = b_inf[1], b_inf[2]
    return a_s, a_a, float(abs(abs(a_a) ** 2 - abs(a_s) ** 2))


def short_time_amplitudes(g1, g2, t, hbar=HBAR):
    """Second-order expansion of the lossless evolution from |0,1;0>."""
    t = np.asarray(t, dtype=float)
    tau = t / hbar
    a0 = -1j * g1 * tau
    a_s = 1 / _SQRT2 - g1 * (g1 + g2) * tau**2 / (2 * _SQRT2)
    a_a = 1 / _SQRT2 + g1 * (g2 - g1) * tau**2 / (2 * _SQRT2)
    return ThreeStateAmplitudes(a0 + 0 * tau, a_s + 0j, a_a + 0j)


@dataclass(frozen=True)
class DarkModel:
    """(N+1)-state effective model, basis |0..0;1>, |QD1 excited;0>, ...

    ``vectors`` holds eigenvectors as columns; the first ``N-1`` span the
    dark (zero-eigenvalue) subspace orthogonal to the coupling vector.
    """

    couplings: np.ndarray
    epsilon: float
    eigenvalues: np.ndarray
    vectors: np.ndarray
    norms: np.ndarray
    seed: int = 0

    @property
    def n_qds(self) -> int:
        return len(self.couplings)

    def matrix(self) -> np.ndarray:
        return _dark_matrix(self.couplings, self.epsilon)


def _dark_matrix(g, eps):
    n = len(g)
    w = np.zeros((n + 1, n + 1), dtype=complex)
    w[0, 0] = -1j * eps
    w[0, 1:] = g
    w[1:, 0] = g
    return w


def _gram_schmidt_dark(g, rng):
    """N-1 orthonormal real vectors with zero plasmon component, orthogonal to g."""
    n = len(g)
    basis = [np.concatenate([[0.0], g]) / np.linalg.norm(g)]
    out = []
    for _ in range(n - 1):
        v = np.concatenate([[0.0], rng.standard_normal(n)])
        for _ in range(2):  # second pass restores orthogonality lost to round-off
            for u in basis:
                v -= (u @ v) * u
        nv = np.linalg.norm(v)
        if nv < 1e-8:
            return None
        v /= nv
        basis.append(v)
        out.append(v)
    return out


def ndark_build(g: Sequence[float], gamma_s: float, seed: int = 20160601) -> DarkModel:
    """Eigensystem of the (N+1)-state dark model.

    The degenerate eigenvectors come from Gram-Schmidt on random vectors
    (``seed``) against ``(0, g_1, ..., g_N)``; the two decaying ones are
    ``(w, g_1, ..., g_N) / g_N``.
    """
    g = np.asarray(g, dtype=float)
    if g.ndim != 1 or len(g) < 1:
        raise ConfigurationError("need at least one coupling")
    if np.any(g <= 0):
        raise ConfigurationError("couplings must be positive")
    eps = 0.5 * gamma_s
    n = len(g)
    big_g = float(g @ g)
    root = np.sqrt(complex(4 * big_g - eps**2))
    w_pair = np.array([(-1j * eps - root) / 2, (-1j * eps + root) / 2])

    rng = np.random.default_rng(seed)
    dark = None
    for attempt in range(10):
        dark = _gram_schmidt_dark(g, rng)
        if dark is not None:
            break
    if dark is None:
        raise ConfigurationError("could not build the degenerate eigenvectors")
    cols = [d.astype(complex) for d in dark]
    for w in w_pair:
        cols.append(np.concatenate([[w], g]) / g[-1])
    vectors = np.column_stack(cols)
    evals = np.concatenate([np.zeros(n - 1, dtype=complex), w_pair])
    norms = np.einsum("jk,jk->k", vectors, vectors)
    return DarkModel(g, eps, evals, vectors, norms, seed)


def ndark_evolve(model: DarkModel, b0, t):
    """Amplitudes ``b_j(t) = sum_k exp(-i w_k t / hbar) K_jk``.

    ``b0`` is ordered like the model basis: plasmon first, then QD1..QDN.
    Returns an array of shape ``(len(t), N+1)`` (or ``(N+1,)`` for scalar t).
    """
    b0 = np.asarray(b0, dtype=complex)
    scalar = np.ndim(t) == 0
    t = np.atleast_1d(np.asarray(t, dtype=float))
    w, v = model.eigenvalues, model.vectors
    if _is_defective(w, v):
        m = model.matrix()
        out = np.array([sla.expm(-1j * m * ti / HBAR) @ b0 for ti in t])
    else:
        out = _bilinear_propagate(w, v, b0, t)
    out[t == 0] = b0
    return out[0] if scalar else out


def _single_excited(n, qd=0):
    b0 = np.zeros(n + 1, dtype=complex)
    b0[qd + 1] = 1.0
    return b0


def ndark_asymptotic(model: DarkModel, b0=None):
    """Long-time QD populations and concurrences ``C_ij = 2 sqrt(P_i P_j)``.

    The two decaying eigenpairs are dropped.  The concurrence shortcut
    assumes an empty plasmon and real amplitudes initially; QD1 excited is
    the default.
    """
    if model.epsilon <= 0:
        raise ValueError("asymptotic limit needs plasmon loss (epsilon > 0)")
    n = model.n_qds
    b0 = _single_excited(n) if b0 is None else np.asarray(b0, dtype=complex)
    v = model.vectors[:, : n - 1]
    nk = model.norms[: n - 1]
    b_inf = v @ ((v.T @ b0) / nk)
    p = np.abs(b_inf[1:]) ** 2
    c = 2.0 * np.sqrt(np.outer(p, p))
    np.fill_diagonal(c, 0.0)
    return p, c


def common_ratio_couplings(n, x, g1=1.0):
    return np.concatenate([[g1], np.full(n - 1, x * g1)])


def golden_section(f, a, b, tol=1e-6, max_iter=200):
    """Minimize a unimodal scalar function on [a, b]."""
    invphi = (math.sqrt(5) - 1) / 2
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if abs(b - a) < tol:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def ndark_optimal_ratio(n: int, x_max: float = 10.0, tol: float = 1e-6, gamma_s: float = 100.0):
    """Common ratio ``x = g_i/g_1`` (i > 1) minimizing the asymptotic figure of merit.

    Returns ``(x_star, C_maj, C_min)``; ``C_min`` is NaN for N = 2.
    A log-spaced scan brackets the minimum before golden-section refinement.
    """
    if n < 2:
        raise ConfigurationError("need at least two QDs")

    def fom(x):
        _, c = ndark_asymptotic(ndark_build(common_ratio_couplings(n, x), gamma_s))
        return figure_of_merit(c)

    grid = np.geomspace(1e-4, x_max, 161)
    vals = np.array([fom(x) for x in grid])
    k = int(np.argmin(vals))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    x_star = golden_section(fom, lo, hi, tol=tol)
    _, c = ndark_asymptotic(ndark_build(common_ratio_couplings(n, x_star), gamma_s))
    c_min = c[1, 2] if n > 2 else float("nan")
    return x_star, float(c[0, 1]), float(c_min)


def ratio_contour(ratios2, ratios3, gamma_s: float = 100.0):
    """Asymptotic figure of merit of three QDs on a grid of g2/g1, g3/g1.

    Returns a structured list of rows ``(r2, r3, fom, C12, C13, C23)``.
    """
    rows = []
    for r2 in ratios2:
        for r3 in ratios3:
            _, c = ndark_asymptotic(ndark_build([1.0, r2, r3], gamma_s))
            rows.append((float(r2), float(r3), figure_of_merit(c), c[0, 1], c[0, 2], c[1, 2]))
    return rows


def rabi_ratio(m: int, n: int) -> float:
    """``g2/g1`` leaving QD1 after m - 1/2 Rabi flops and QD2 after n flops."""
    if m < 1 or n < 1 or int(m) != m or int(n) != n:
        raise ValueError("m and n must be positive integers")
    return n / (m - 0.5)


@dataclass(frozen=True)
class LocalFieldModel:
    """Coupled-dipole picture of one QD next to the plasmon (SI units).

    ``omega_rabi`` is in rad/fs, fields in V/m.
    """

    coupling_j: float
    a_s: float
    a_q: float
    gamma_q: float
    e0: float
    e0_loc: float
    omega_rabi: float


def local_field(spec: SystemSpec, qd_index: int, e0: float) -> LocalFieldModel:
    """Local field amplitude at QD ``qd_index`` and its Rabi frequency.

    ``E0_loc = 2 (d_s/d_q)(g/gamma_s) E0`` and
    ``hbar Omega_R = 2 g d_s E0 / gamma_s``.
    """
    qd = spec.qds[qd_index]
    pl = spec.plasmon
    if pl.gamma_s <= 0:
        raise ConfigurationError("local-field estimate needs gamma_s > 0")
    hbar_si = units.HBAR_MEV_FS * units.MEV_J * units.FS
    d_s = pl.d * units.DEBYE_CM
    d_q = qd.d * units.DEBYE_CM
    omega_s = pl.omega / units.HBAR_MEV_FS / units.FS
    omega_q = qd.omega / units.HBAR_MEV_FS / units.FS
    j = qd.g * units.MEV_J / (d_s * d_q)
    a_s = 2 * d_s**2 * omega_s / hbar_si
    a_q = 2 * d_q**2 * omega_q / hbar_si
    gamma_q = 2 * qd.gamma_d / units.HBAR_MEV_FS / units.FS
    e0_loc = 2 * (pl.d / qd.d) * (qd.g / pl.gamma_s) * e0
    omega_r = 2 * qd.g * units.dipole_energy_mev(pl.d, e0) / pl.gamma_s / units.HBAR_MEV_FS
    return LocalFieldModel(j, a_s, a_q, gamma_q, e0, e0_loc, omega_r)


def classical_dipole_rhs(params, e0, omega, coupling_j=None):
    """Right-hand side of the coupled classical dipole equations (SI units).

    State is ``(mu_s, dmu_s, mu_q, dmu_q)``; parameters from
    :class:`LocalFieldModel` plus the transition frequencies
    ``params = (omega_s, omega_q, gamma_s, lf)``.
    """
    omega_s, omega_q, gamma_s, lf = params
    j = lf.coupling_j if coupling_j is None else coupling_j

    def f(t, y):
        mu_s, dmu_s, mu_q, dmu_q = y
        drive = e0 * math.cos(omega * t)
        return [
            dmu_s,
            lf.a_s * (drive + mu_q * j) - omega_s**2 * mu_s - gamma_s * dmu_s,
            dmu_q,
            lf.a_q * (drive + mu_s * j) - omega_q**2 * mu_q - lf.gamma_q * dmu_q,
        ]

    return f

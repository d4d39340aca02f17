"""Composite basis, ladder operators, Hamiltonian, drive and dissipator.

The Hilbert space is N two-level quantum dots times a plasmon mode truncated
to ``n_levels`` Fock states.  Kets are labelled ``(q_N, ..., q_1; s)`` and the
flat index is ``q * n_levels + s`` where ``q = sum_k q_k 2**(k-1)``, i.e. the
plasmon index varies fastest and QD1 is the least significant qubit.

Python code indexes QDs from 0, so ``qds[0]`` is QD1.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .units import rate

__all__ = [
    "ConfigurationError",
    "QDParams",
    "PlasmonParams",
    "SystemSpec",
    "BasisMap",
    "Operators",
    "build_basis",
    "build_operators",
    "build_hamiltonian",
    "build_drive",
    "dissipators",
    "apply_lindblad",
]

#: Largest Hilbert-space dimension accepted by default.
MAX_DIMENSION = 4096


class ConfigurationError(ValueError):
    """Invalid physical or numerical configuration."""


@dataclass(frozen=True)
class QDParams:
    """A single quantum dot.

    Energies and energy-quoted rates are in meV, the dipole in Debye.
    """

    g: float
    omega: float = 2050.0
    d: float = 13.0
    gamma_p: float = 190e-6
    gamma_d: float = 2.0

    def __post_init__(self):
        if self.omega <= 0:
            raise ConfigurationError("QD transition energy must be positive")
        if min(self.g, self.gamma_p, self.gamma_d) < 0:
            raise ConfigurationError("QD coupling and rates must be non-negative")


@dataclass(frozen=True)
class PlasmonParams:
    omega: float = 2050.0
    d: float = 4000.0
    gamma_s: float = 100.0
    n_levels: int = 3

    def __post_init__(self):
        if self.n_levels < 2:
            raise ConfigurationError("plasmon truncation needs at least 2 levels")
        if self.gamma_s < 0:
            raise ConfigurationError("plasmon decay rate must be non-negative")


@dataclass(frozen=True)
class SystemSpec:
    qds: tuple[QDParams, ...]
    plasmon: PlasmonParams = field(default_factory=PlasmonParams)
    eps_med: float = 2.25
    max_dimension: int = MAX_DIMENSION

    def __post_init__(self):
        object.__setattr__(self, "qds", tuple(self.qds))
        if len(self.qds) < 1:
            raise ConfigurationError("need at least one quantum dot")
        if self.eps_med <= 0:
            raise ConfigurationError("dielectric constant must be positive")
        if self.dimension > self.max_dimension:
            raise ConfigurationError(
                f"dimension {self.dimension} exceeds limit {self.max_dimension}"
            )

    @classmethod
    def create(
        cls,
        g: Sequence[float],
        gamma_s: float = 100.0,
        gamma_d: float = 2.0,
        gamma_p: float = 190e-6,
        n_levels: int = 3,
        **kwargs,
    ) -> "SystemSpec":
        """Identical QDs differing only in their plasmon couplings ``g`` (meV)."""
        qds = tuple(QDParams(g=gi, gamma_d=gamma_d, gamma_p=gamma_p) for gi in g)
        plasmon = PlasmonParams(gamma_s=gamma_s, n_levels=n_levels)
        return cls(qds=qds, plasmon=plasmon, **kwargs)

    @property
    def n_qds(self) -> int:
        return len(self.qds)

    @property
    def n_levels(self) -> int:
        return self.plasmon.n_levels

    @property
    def dimension(self) -> int:
        return 2 ** len(self.qds) * self.plasmon.n_levels

    @property
    def couplings(self) -> np.ndarray:
        return np.array([qd.g for qd in self.qds])

    def with_couplings(self, g: Sequence[float]) -> "SystemSpec":
        if len(g) != self.n_qds:
            raise ConfigurationError("coupling count does not match QD count")
        qds = tuple(replace(qd, g=float(gi)) for qd, gi in zip(self.qds, g))
        return replace(self, qds=qds)


@dataclass(frozen=True)
class BasisMap:
    """Bijection between flat indices and ``(q_N, ..., q_1, s)`` tuples."""

    n_qds: int
    n_levels: int

    @property
    def dimension(self) -> int:
        return 2**self.n_qds * self.n_levels

    def index(self, occupation: Sequence[int]) -> int:
        *qs, s = occupation
        if len(qs) != self.n_qds:
            raise ValueError("occupation tuple has wrong length")
        if not 0 <= s < self.n_levels:
            raise ValueError(f"plasmon level {s} out of range")
        q = 0
        for bit in qs:
            if bit not in (0, 1):
                raise ValueError("QD occupations must be 0 or 1")
            q = 2 * q + bit
        return q * self.n_levels + s

    def occupation(self, index: int) -> tuple[int, ...]:
        if not 0 <= index < self.dimension:
            raise IndexError(index)
        q, s = divmod(index, self.n_levels)
        bits = tuple((q >> k) & 1 for k in reversed(range(self.n_qds)))
        return bits + (s,)

    def states(self) -> list[tuple[int, ...]]:
        return [self.occupation(i) for i in range(self.dimension)]

    def qd_occupation(self, qd: int) -> np.ndarray:
        """0/1 occupation of QD ``qd`` (0-based) for every basis index."""
        idx = np.arange(self.dimension) // self.n_levels
        return (idx >> qd) & 1

    def plasmon_number(self) -> np.ndarray:
        return np.arange(self.dimension) % self.n_levels


def build_basis(spec: SystemSpec) -> BasisMap:
    return BasisMap(spec.n_qds, spec.n_levels)


@dataclass(frozen=True)
class Operators:
    """Sparse ladder operators on the full space (CSR, complex)."""

    sigma: tuple[sp.csr_matrix, ...]
    sigma_dag: tuple[sp.csr_matrix, ...]
    b: sp.csr_matrix
    b_dag: sp.csr_matrix

    @property
    def dimension(self) -> int:
        return self.b.shape[0]


def _kron_all(factors):
    out = sp.identity(1, dtype=complex, format="csr")
    for f in factors:
        out = sp.kron(out, f, format="csr")
    out.eliminate_zeros()
    return out


def build_operators(spec: SystemSpec, basis: BasisMap | None = None) -> Operators:
    n, ns = spec.n_qds, spec.n_levels
    lower = sp.csr_matrix(np.array([[0, 1], [0, 0]], dtype=complex))
    eye2 = sp.identity(2, dtype=complex, format="csr")
    eye_s = sp.identity(ns, dtype=complex, format="csr")
    ladder = sp.diags(np.sqrt(np.arange(1, ns)).astype(complex), 1, format="csr")

    sigma = []
    for k in range(n):
        # kron order is q_N, ..., q_1, s; QD k sits at position n-1-k
        factors = [eye2] * n
        factors[n - 1 - k] = lower
        sigma.append(_kron_all(factors + [eye_s]))
    b = _kron_all([eye2] * n + [ladder])
    return Operators(
        sigma=tuple(sigma),
        sigma_dag=tuple(s.getH().tocsr() for s in sigma),
        b=b,
        b_dag=b.getH().tocsr(),
    )


def build_hamiltonian(
    spec: SystemSpec, ops: Operators, omega_ref: float | None = None
) -> sp.csr_matrix:
    """System Hamiltonian in meV, in the frame rotating at ``omega_ref``.

    ``omega_ref`` defaults to the plasmon energy; on resonance only the
    coupling terms survive.
    """
    if omega_ref is None:
        omega_ref = spec.plasmon.omega
    dim = ops.dimension
    h = sp.csr_matrix((dim, dim), dtype=complex)
    for qd, s, sd in zip(spec.qds, ops.sigma, ops.sigma_dag):
        if qd.omega != omega_ref:
            h = h + (qd.omega - omega_ref) * (sd @ s)
        if qd.g != 0:
            h = h - qd.g * (sd @ ops.b + s @ ops.b_dag)
    if spec.plasmon.omega != omega_ref:
        h = h + (spec.plasmon.omega - omega_ref) * (ops.b_dag @ ops.b)
    h = h.tocsr()
    h.eliminate_zeros()
    return h


def build_drive(spec: SystemSpec, ops: Operators) -> sp.csr_matrix:
    """Dipole operator ``sum_i d_i (s_i + s_i^+) + d_s (b + b^+)`` in Debye.

    In the rotating frame the drive Hamiltonian is ``-(E0 G(t) / 2) D``.
    """
    dim = ops.dimension
    d = sp.csr_matrix((dim, dim), dtype=complex)
    for qd, s, sd in zip(spec.qds, ops.sigma, ops.sigma_dag):
        if qd.d != 0:
            d = d + qd.d * (s + sd)
    if spec.plasmon.d != 0:
        d = d + spec.plasmon.d * (ops.b + ops.b_dag)
    d = d.tocsr()
    d.eliminate_zeros()
    return d


def dissipators(spec: SystemSpec, ops: Operators) -> list[tuple[float, sp.csr_matrix]]:
    """Jump operators with their rates in 1/fs.

    Plasmon decay ``gamma_s D[b]``, QD decay ``gamma_p D[s_i]`` and pure
    dephasing ``2 gamma_d D[s_i^+ s_i]`` (coherences then decay at gamma_d).
    Zero-rate channels are dropped.
    """
    out = []
    if spec.plasmon.gamma_s > 0:
        out.append((rate(spec.plasmon.gamma_s), ops.b))
    for qd, s, sd in zip(spec.qds, ops.sigma, ops.sigma_dag):
        if qd.gamma_p > 0:
            out.append((rate(qd.gamma_p), s))
        if qd.gamma_d > 0:
            out.append((rate(2.0 * qd.gamma_d), (sd @ s).tocsr()))
    return out


def apply_lindblad(spec: SystemSpec, ops: Operators, rho: np.ndarray) -> np.ndarray:
    """Dissipative part of the master equation, ``L(rho)`` in 1/fs."""
    rho = np.asarray(rho)
    if rho.shape != (ops.dimension, ops.dimension):
        raise ValueError(f"rho has shape {rho.shape}, expected {ops.dimension}^2")
    out = np.zeros_like(rho, dtype=complex)
    for gamma, a in dissipators(spec, ops):
        ad = a.getH()
        ada = ad @ a
        out += gamma * (a @ (a @ rho).conj().T).conj().T
        out -= 0.5 * gamma * (ada @ rho + (ada @ rho.conj().T).conj().T)
    return out

"""Measuring pairwise entanglement inside a dot-plasmon density matrix."""

import numpy as np

from plasmonqd.entanglement import concurrence, figure_of_merit, pairwise_concurrences, partial_trace_pair

psi_minus = np.array([0, 1, -1, 0]) / np.sqrt(2)
print("Bell state:", concurrence(np.outer(psi_minus, psi_minus)))

# Werner states become entangled above p = 1/3.
for p in (0.2, 1 / 3, 0.5, 0.8, 1.0):
    rho = p * np.outer(psi_minus, psi_minus) + (1 - p) * np.eye(4) / 4
    print(f"Werner p = {p:.3f}: C = {concurrence(rho):.4f}")

# Three dots sharing one excitation (W state) with the plasmon in vacuum.
n_qds, n_levels = 3, 3
dim = 2**n_qds * n_levels
psi = np.zeros(dim)
for k in range(n_qds):
    psi[(1 << k) * n_levels] = 1 / np.sqrt(3)
rho = np.outer(psi, psi)
print("\nW state pair concurrences (2/N each):")
print(np.round(pairwise_concurrences(rho, n_qds, n_levels), 6))
print("reduced state of dots 1 and 3:")
print(np.round(partial_trace_pair(rho, 0, 2, n_qds, n_levels).real, 4))
print("figure of merit sum (1 - C_ij)^2:", round(figure_of_merit(pairwise_concurrences(rho, n_qds, n_levels)), 4))

"""Two-QD reduced states, Wootters concurrence and the figure of merit."""

from __future__ import annotations

import numpy as np

__all__ = [
    "SIGMA_YY",
    "partial_trace_pair",
    "concurrence",
    "pairwise_concurrences",
    "figure_of_merit",
    "pair_residuals",
]

SIGMA_YY = np.array(
    [[0, 0, 0, -1], [0, 0, 1, 0], [0, 1, 0, 0], [-1, 0, 0, 0]], dtype=complex
)


def _as_tensor(rho, n_qds, n_levels):
    dims = (2,) * n_qds + (n_levels,)
    return np.asarray(rho).reshape(dims + dims)


def partial_trace_pair(rho, i, j, n_qds, n_levels):
    """Reduced 4x4 state of QDs ``i`` and ``j`` (0-based).

    The result is in the basis |q_i q_j> = |00>, |01>, |10>, |11>, with ``i``
    the high bit.  Everything else, including the plasmon, is traced out.
    """
    if i == j:
        raise ValueError("pair indices must differ")
    for k in (i, j):
        if not 0 <= k < n_qds:
            raise IndexError(f"QD index {k} out of range for {n_qds} QDs")
    t = _as_tensor(rho, n_qds, n_levels)
    n_ax = n_qds + 1
    # QD k lives on tensor axis n_qds-1-k (kets ordered q_N..q_1, s)
    ai, aj = n_qds - 1 - i, n_qds - 1 - j
    letters = "abcdefghijklmnopqrstuvwxyz"
    if 2 * n_ax > len(letters) - 4:
        raise ValueError("too many QDs for einsum-based partial trace")
    row = list(letters[:n_ax])
    col = list(letters[:n_ax])
    out_r = ["W", "X"]
    out_c = ["Y", "Z"]
    row[ai], row[aj] = out_r
    col[ai], col[aj] = out_c
    spec = "".join(row) + "".join(col) + "->" + "".join(out_r) + "".join(out_c)
    red = np.einsum(spec, t.astype(complex, copy=False))
    return red.reshape(4, 4)


def concurrence(red, atol=1e-8):
    """Wootters concurrence of a two-qubit density matrix."""
    red = np.asarray(red, dtype=complex)
    if red.shape != (4, 4):
        raise ValueError("expected a 4x4 matrix")
    if np.max(np.abs(red - red.conj().T)) > atol * max(1.0, np.max(np.abs(red))):
        raise ValueError("reduced density matrix is not Hermitian")
    red = 0.5 * (red + red.conj().T)
    # With rho = sum_k psi_k psi_k^+ (psi_k = sqrt(w_k) v_k), the square roots
    # of the eigenvalues of rho rho~ are the singular values of the symmetric
    # matrix tau_kl = psi_k^T (sy x sy) psi_l.  No square root of a rounding
    # residue is ever taken, so pure states keep full precision.
    w, v = np.linalg.eigh(red)
    psi = v * np.sqrt(np.clip(w, 0.0, None))
    tau = psi.T @ SIGMA_YY.real @ psi
    lam = np.linalg.svd(tau, compute_uv=False)
    return float(max(0.0, lam[0] - lam[1] - lam[2] - lam[3]))


def pairwise_concurrences(rho, n_qds, n_levels):
    """Symmetric N x N matrix of pairwise concurrences, zero diagonal."""
    c = np.zeros((n_qds, n_qds))
    for i in range(n_qds):
        for j in range(i):
            c[i, j] = c[j, i] = concurrence(
                partial_trace_pair(rho, i, j, n_qds, n_levels)
            )
    return c


def pair_residuals(cmat):
    """Residual vector ``1 - C_ij`` over pairs i < j (row-major order)."""
    cmat = np.asarray(cmat)
    iu = np.triu_indices(cmat.shape[0], k=1)
    return 1.0 - cmat[iu]


def figure_of_merit(cmat):
    """``sum_{i<j} (1 - C_ij)^2``."""
    return float(np.sum(pair_residuals(cmat) ** 2))

"""Symmetric eigendecomposition via cyclic Jacobi rotations.

Self-contained so the covariance factorization does not depend on LAPACK;
small matrices only (the channel block size caps ``d`` at 64).
"""

from __future__ import annotations

import numpy as np

from .errors import NotSymmetric

MAX_SWEEPS = 100


def symmetric_eig(a: np.ndarray, symmetry_tol: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (descending) and orthonormal eigenvectors of a symmetric matrix.

    Returns ``(eigvals, eigvecs)`` with ``a ~= eigvecs @ diag(eigvals) @ eigvecs.T``;
    eigenvectors are columns. Sweeps run until every off-diagonal magnitude
    falls below ``1e-12`` (and, for well-scaled inputs, down to machine
    precision relative to the matrix norm) or 100 sweeps elapse. Each
    eigenvector is oriented so its largest-magnitude entry (first such index)
    is positive.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NotSymmetric(f"expected a square matrix, got shape {a.shape}")
    if a.size and np.max(np.abs(a - a.T)) > symmetry_tol:
        raise NotSymmetric(f"matrix asymmetric beyond {symmetry_tol}")
    d = a.shape[0]
    m = (a + a.T) / 2.0
    v = np.eye(d)
    if d > 1:
        scale = np.max(np.abs(m))
        threshold = min(1e-12, 1e-15 * scale) if scale > 0 else 0.0
        prev_off_fro = np.inf
        for _ in range(MAX_SWEEPS):
            offdiag = m - np.diag(np.diag(m))
            if np.max(np.abs(offdiag)) <= threshold:
                break
            off_fro = float(np.sqrt(np.sum(offdiag * offdiag)))
            if off_fro >= prev_off_fro:  # stalled at the floating-point floor
                break
            prev_off_fro = off_fro
            for p in range(d - 1):
                for q in range(p + 1, d):
                    _rotate(m, v, p, q)
    eigvals = np.diag(m).copy()
    order = np.argsort(-eigvals, kind="stable")
    eigvals = eigvals[order]
    eigvecs = v[:, order]
    for j in range(d):
        col = eigvecs[:, j]
        lead = int(np.argmax(np.abs(col)))
        if col[lead] < 0:
            eigvecs[:, j] = -col
    return eigvals, eigvecs


def _rotate(m: np.ndarray, v: np.ndarray, p: int, q: int) -> None:
    """One Jacobi rotation zeroing ``m[p, q]`` in place."""
    apq = m[p, q]
    if apq == 0.0:
        return
    app, aqq = m[p, p], m[q, q]
    tau = (aqq - app) / (2.0 * apq)
    # smaller-magnitude root for a stable rotation angle
    if tau >= 0.0:
        t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
    else:
        t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
    c = 1.0 / np.sqrt(1.0 + t * t)
    s = t * c
    row_p = m[p, :].copy()
    row_q = m[q, :].copy()
    m[p, :] = c * row_p - s * row_q
    m[q, :] = s * row_p + c * row_q
    col_p = m[:, p].copy()
    col_q = m[:, q].copy()
    m[:, p] = c * col_p - s * col_q
    m[:, q] = s * col_p + c * col_q
    m[p, q] = 0.0
    m[q, p] = 0.0
    vcol_p = v[:, p].copy()
    vcol_q = v[:, q].copy()
    v[:, p] = c * vcol_p - s * vcol_q
    v[:, q] = s * vcol_p + c * vcol_q

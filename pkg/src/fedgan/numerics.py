"""Small dense symmetric linear algebra used by the Frechet distance.

Matrices are plain 2-D float64 ``numpy.ndarray`` objects. The eigensolver is a
cyclic Jacobi sweep, which is slow for big matrices but very accurate for the
tiny (<= 64) covariance matrices this package deals with.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import InvalidMatrix, NotPSD, NumericalFailure

MAX_DIM = 64
SYMMETRY_RTOL = 1e-10
NEG_EIG_TOL = 1e-8
MAX_SWEEPS = 100


class SymEigResult(NamedTuple):
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # orthonormal columns


def _as_symmetric(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidMatrix(f"expected a square matrix, got shape {a.shape}")
    if a.shape[0] > MAX_DIM:
        raise InvalidMatrix(f"dimension {a.shape[0]} exceeds {MAX_DIM}")
    if not np.all(np.isfinite(a)):
        raise InvalidMatrix("matrix has non-finite entries")
    scale = max(np.max(np.abs(a)), 1e-300) if a.size else 1.0
    if a.size and np.max(np.abs(a - a.T)) > SYMMETRY_RTOL * scale:
        raise InvalidMatrix("matrix is not symmetric")
    return 0.5 * (a + a.T)


def sym_eig(a) -> SymEigResult:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns eigenvalues in descending order and the matching orthonormal
    eigenvectors as columns, so that ``V @ diag(w) @ V.T`` reconstructs ``a``.
    """
    a = _as_symmetric(a).copy()
    n = a.shape[0]
    v = np.eye(n)
    if n <= 1:
        return SymEigResult(np.diag(a).copy(), v)

    total = np.sum(a * a)
    for _ in range(MAX_SWEEPS):
        off = np.sum(np.triu(a, 1) ** 2)
        if off <= 1e-32 * total:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                g = 100.0 * abs(apq)
                if abs(a[p, p]) + g == abs(a[p, p]) and abs(a[q, q]) + g == abs(a[q, q]):
                    a[p, q] = a[q, p] = 0.0
                    continue
                # rotation angle zeroing a[p, q]
                h = a[q, q] - a[p, p]
                if abs(h) + g == abs(h):
                    t = apq / h
                else:
                    theta = 0.5 * h / apq
                    t = 1.0 / (abs(theta) + np.sqrt(1.0 + theta * theta))
                    if theta < 0:
                        t = -t
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c

                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                a[p, q] = a[q, p] = 0.0

                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        raise NumericalFailure(f"Jacobi did not converge in {MAX_SWEEPS} sweeps")

    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    return SymEigResult(w[order], v[:, order])


def psd_sqrt(a) -> np.ndarray:
    """Symmetric square root of a positive semi-definite matrix.

    Eigenvalues down to ``-1e-8`` are treated as round-off and clamped to 0.
    """
    w, v = sym_eig(a)
    if w.size and w.min() < -NEG_EIG_TOL:
        raise NotPSD(f"smallest eigenvalue {w.min():.3e} is below -{NEG_EIG_TOL}")
    root = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
    return 0.5 * (root + root.T)


def trace_sqrt_product(s1, s2) -> float:
    """``Tr((s1 s2)^(1/2))`` via the symmetric form ``Tr((sqrt(s2) s1 sqrt(s2))^(1/2))``."""
    s1 = np.asarray(s1, dtype=np.float64)
    s2 = np.asarray(s2, dtype=np.float64)
    if s1.shape != s2.shape:
        raise InvalidMatrix(f"dimension mismatch: {s1.shape} vs {s2.shape}")
    r2 = psd_sqrt(s2)
    inner = r2 @ s1 @ r2
    inner = 0.5 * (inner + inner.T)
    w, _ = sym_eig(inner)
    if w.size and w.min() < -NEG_EIG_TOL * max(1.0, abs(w).max()):
        raise NotPSD("conjugated covariance product is not PSD")
    return max(float(np.sum(np.sqrt(np.clip(w, 0.0, None)))), 0.0)

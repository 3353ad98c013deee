"""Small dense symmetric linear algebra and Gaussian log-densities.

The eigensolver is a cyclic Jacobi method compiled with numba; the matrices
handled here are covariance-sized (p up to a few hundred at most), where
Jacobi is accurate to the last few ulps and cheap enough.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

LOG_2PI = float(np.log(2.0 * np.pi))

JACOBI_TOL = 1e-13
JACOBI_MAX_SWEEPS = 100
SYMMETRY_RTOL = 1e-12


class NotSymmetricError(ValueError):
    pass


class NotPositiveDefiniteError(ValueError):
    pass


@dataclass(frozen=True)
class EigenDecomposition:
    """Eigenvalues in descending order with matching orthonormal columns."""

    values: np.ndarray
    vectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.vectors * self.values) @ self.vectors.T


@njit(cache=True)
def _jacobi_kernel(a, tol, max_sweeps):
    p = a.shape[0]
    v = np.eye(p)
    scale = 0.0
    for i in range(p):
        for j in range(p):
            scale += a[i, j] * a[i, j]
    scale = np.sqrt(scale)
    sweeps = 0
    if scale == 0.0:
        return np.zeros(p), v, sweeps
    while sweeps < max_sweeps:
        off = 0.0
        for i in range(p):
            for j in range(i + 1, p):
                off += a[i, j] * a[i, j]
        if np.sqrt(2.0 * off) <= tol * scale:
            break
        sweeps += 1
        for k in range(p - 1):
            for l in range(k + 1, p):
                akl = a[k, l]
                if akl == 0.0:
                    continue
                theta = (a[l, l] - a[k, k]) / (2.0 * akl)
                if theta >= 0.0:
                    t = 1.0 / (theta + np.sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + np.sqrt(theta * theta + 1.0))
                cs = 1.0 / np.sqrt(t * t + 1.0)
                sn = t * cs
                for r in range(p):
                    ark = a[r, k]
                    arl = a[r, l]
                    a[r, k] = cs * ark - sn * arl
                    a[r, l] = sn * ark + cs * arl
                for r in range(p):
                    akr = a[k, r]
                    alr = a[l, r]
                    a[k, r] = cs * akr - sn * alr
                    a[l, r] = sn * akr + cs * alr
                a[k, l] = 0.0
                a[l, k] = 0.0
                for r in range(p):
                    vrk = v[r, k]
                    vrl = v[r, l]
                    v[r, k] = cs * vrk - sn * vrl
                    v[r, l] = sn * vrk + cs * vrl
    w = np.empty(p)
    for i in range(p):
        w[i] = a[i, i]
    return w, v, sweeps


def _check_symmetric(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise NotSymmetricError(f"expected a square matrix, got shape {m.shape}")
    scale = max(float(np.max(np.abs(m))), 1.0) if m.size else 1.0
    asym = float(np.max(np.abs(m - m.T))) if m.size else 0.0
    if asym > SYMMETRY_RTOL * scale:
        raise NotSymmetricError(f"matrix is not symmetric (max |m - m.T| = {asym:.3g})")
    return m


def canonical_signs(vectors: np.ndarray, atol: float = 1e-12) -> np.ndarray:
    """Flip columns so that the first non-negligible entry of each is positive."""
    vectors = np.asarray(vectors, dtype=float)
    first = np.argmax(np.abs(vectors) > atol, axis=0)
    signs = np.sign(vectors[first, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def sym_eigen(m) -> EigenDecomposition:
    """Eigen-decompose a symmetric matrix with cyclic Jacobi rotations.

    Eigenvalues come back in descending order (stable for ties) and each
    eigenvector column has its first non-negligible component positive.
    """
    m = _check_symmetric(m)
    work = np.ascontiguousarray(0.5 * (m + m.T))
    w, v, _ = _jacobi_kernel(work, JACOBI_TOL, JACOBI_MAX_SWEEPS)
    order = np.argsort(-w, kind="stable")
    return EigenDecomposition(values=w[order], vectors=canonical_signs(v[:, order]))


def svd(m) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Singular value decomposition ``m = U @ diag(S) @ V.T``.

    Thin wrapper over LAPACK; returns V (not V transposed).
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {m.shape}")
    u, s, vt = np.linalg.svd(m)
    return u, s, vt.T


def _decomposition_of(sigma):
    if hasattr(sigma, "eigenvalues") and hasattr(sigma, "orientation"):
        return np.asarray(sigma.eigenvalues, float), np.asarray(sigma.orientation, float)
    eig = sym_eigen(sigma)
    return eig.values, eig.vectors


def mvn_logpdf(x: np.ndarray, mu: np.ndarray, eigenvalues: np.ndarray, orientation: np.ndarray) -> np.ndarray:
    """Row-wise normal log-density for covariance ``D diag(eigenvalues) D'``."""
    x = np.atleast_2d(x)
    p = x.shape[1]
    proj = (x - mu) @ orientation
    maha = np.sum(proj * proj / eigenvalues, axis=1)
    return -0.5 * (p * LOG_2PI + np.sum(np.log(eigenvalues)) + maha)


def mvn_logdensity(x, mu, sigma) -> float:
    """log phi(x; mu, sigma).

    ``sigma`` is either a symmetric positive definite matrix or an object
    exposing ``eigenvalues`` and ``orientation`` (a stored decomposition),
    in which case it is used as-is.
    """
    values, vectors = _decomposition_of(sigma)
    if not np.all(np.isfinite(values)) or np.min(values) <= 0:
        raise NotPositiveDefiniteError("covariance matrix is not positive definite")
    x = np.asarray(x, dtype=float).reshape(1, -1)
    mu = np.asarray(mu, dtype=float).reshape(-1)
    if x.shape[1] != mu.shape[0] or vectors.shape[0] != mu.shape[0]:
        raise ValueError("dimension mismatch between x, mu and sigma")
    return float(mvn_logpdf(x, mu, values, vectors)[0])


"""Eigenvalue-ratio restriction on class covariance matrices.

All eigenvalues ``d_lg`` of all classes must satisfy ``max d / min d <= c``.
The building block is the optimal truncation operator, which clips every
eigenvalue into ``[m, c*m]`` with ``m`` minimising the weighted Gaussian
deviance.  Families with shared volume, shape or orientation wrap it in the
fixed-point loops below.
"""

from __future__ import annotations

import numpy as np

from .covariance import (
    CovarianceDecomposition,
    ScatterMatrices,
    check_model,
    er_required,
)
from .numerics import canonical_signs, svd, sym_eigen

CPC_TOL = 1e-8
CPC_MAX_ITER = 200
MAX_OUTER = 500
FIXED_POINT_TOL = 1e-9
# Multiplicative slack when testing a ratio against c.
_RATIO_SLACK = 1e-13


class ConstraintNotConverged(RuntimeError):
    def __init__(self, message: str, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


def er_ratio(table) -> float:
    table = np.asarray(table, dtype=float)
    return float(np.max(table) / np.min(table))


def satisfies_ratio(table, c: float) -> bool:
    table = np.asarray(table, dtype=float)
    return bool(np.max(table) <= c * (1.0 + _RATIO_SLACK) * np.min(table))


def truncation_deviance(d, truncated, weights) -> float:
    d = np.asarray(d, dtype=float)
    truncated = np.asarray(truncated, dtype=float)
    w = np.asarray(weights, dtype=float).reshape(-1, *([1] * (d.ndim - 1)))
    return float(np.sum(w * (np.log(truncated) + d / truncated)))


def optimal_truncation(table, weights, c: float) -> np.ndarray:
    """Clip a (G, p) table of eigenvalues into ``[m, c*m]`` optimally.

    Between consecutive breakpoints ``{d} U {d/c}`` the deviance is
    ``A log m + B / m`` up to a constant, minimised at ``m = B/A`` clamped into
    the interval; every interval is solved exactly and the best one wins.
    Rows with zero weight do not enter the objective but are still clipped.
    """
    d = np.atleast_2d(np.asarray(table, dtype=float))
    w = np.asarray(weights, dtype=float).reshape(-1)
    if c < 1:
        raise ValueError("c must be >= 1")
    if w.shape[0] != d.shape[0]:
        raise ValueError("one weight per row is required")
    if np.any(w < 0) or not np.any(w > 0):
        raise ValueError("weights must be non-negative and not all zero")
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise ValueError("eigenvalues must be finite and non-negative")
    if np.min(d) > 0 and satisfies_ratio(d, c):
        return d.copy()

    active = d[w > 0]
    wa = np.repeat(w[w > 0], d.shape[1])
    vals = active.ravel()
    cand = np.unique(np.concatenate([vals, vals / c]))
    cand = cand[cand > 0]
    if cand.size == 0:
        raise ValueError("all weighted eigenvalues are zero")
    lo = np.concatenate([cand[:1], cand[:-1]])
    hi = cand
    mids = 0.5 * (lo + hi)
    below = vals[None, :] < mids[:, None]
    above = vals[None, :] > c * mids[:, None]
    A = np.sum(wa * (below | above), axis=1)
    B = np.sum(wa * np.where(below, vals, 0.0) + wa * np.where(above, vals / c, 0.0), axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        m_opt = np.where(A > 0, B / A, mids)
    m_opt = np.clip(m_opt, lo, hi)
    clipped = np.clip(vals[None, :], m_opt[:, None], c * m_opt[:, None])
    dev = np.sum(wa * (np.log(clipped) + vals / clipped), axis=1)
    m = m_opt[int(np.argmin(dev))]
    return np.clip(d, m, c * m)


def _orthonormalize(D: np.ndarray) -> np.ndarray:
    u, _, v = svd(D)
    return u @ v.T


def cpc_objective(W, shapes, volumes, D) -> float:
    rot = np.einsum("ji,gjk,ki->gi", D, np.asarray(W, float), D)
    return float(np.sum(rot / (np.asarray(shapes) * np.asarray(volumes)[:, None])))


def common_principal_components(scatter, shapes, volumes, d_init, tol: float = CPC_TOL,
                                max_iter: int = CPC_MAX_ITER, trace: list | None = None) -> np.ndarray:
    """Common orientation D minimising ``sum_g tr(D A_g^-1 D' W_g) / lambda_g``.

    Majorization-minimization: with ``w_g`` the largest eigenvalue of
    ``W_g / lambda_g``, each step maximises ``tr(D' T)`` for
    ``T = sum_g (w_g I - W_g/lambda_g) D A_g^-1``, i.e. ``D = U V'`` from the
    SVD of T.  The objective never increases.  If ``trace`` is a list the
    objective after every step is appended to it.
    """
    W = scatter.W if isinstance(scatter, ScatterMatrices) else np.asarray(scatter, dtype=float)
    shapes = np.asarray(shapes, dtype=float)
    volumes = np.asarray(volumes, dtype=float)
    D = _orthonormalize(np.asarray(d_init, dtype=float))
    scaled = W / volumes[:, None, None]
    omega = np.array([sym_eigen(s).values[0] for s in scaled])
    inv_shapes = 1.0 / shapes
    obj = cpc_objective(W, shapes, volumes, D)
    if trace is not None:
        trace.append(obj)
    for _ in range(max_iter):
        T = np.zeros_like(D)
        for g in range(W.shape[0]):
            T += (omega[g] * D - scaled[g] @ D) * inv_shapes[g]
        u, _, v = svd(T)
        D = u @ v.T
        new = cpc_objective(W, shapes, volumes, D)
        if trace is not None:
            trace.append(new)
        done = abs(obj - new) <= tol * max(abs(new), 1e-300)
        obj = new
        if done:
            break
    return canonical_signs(D)


def _power_shrink(volumes: np.ndarray, shapes: np.ndarray, c: float):
    """Pull log-eigenvalues toward their centre until the ratio is exactly c.

    Raising volumes (about their geometric mean) and unit-determinant shapes
    to the same power t keeps every equality pattern and ``|A| = 1`` intact
    while the ratio becomes ``ratio**t``.
    """
    table = volumes[:, None] * shapes
    ratio = er_ratio(table)
    if ratio <= c:
        return volumes, shapes
    t = np.log(c) / np.log(ratio) * (1.0 - 1e-12)
    logv = np.log(volumes)
    centre = np.mean(logv)
    return np.exp(centre + t * (logv - centre)), np.exp(t * np.log(shapes))


def _split(table: np.ndarray):
    vol = np.exp(np.mean(np.log(table), axis=1))
    return vol, table / vol[:, None]


def _equal_volume_loop(table, n, c, max_outer):
    delta = table
    for _ in range(max_outer):
        trunc = optimal_truncation(delta, n, c)
        vol, shapes = _split(trunc)
        common = np.sum(n * vol) / np.sum(n)
        new = common * shapes
        if satisfies_ratio(new, c):
            return common, shapes
        change = np.max(np.abs(new - delta) / np.abs(delta))
        delta = new
        if change < FIXED_POINT_TOL:
            vols, shapes = _power_shrink(np.full(len(n), common), shapes, c)
            return float(vols[0]), shapes
    raise ConstraintNotConverged("equal-volume constraint loop did not converge", delta)


def _common_shape_loop(table, volumes, n, c, max_outer):
    p = table.shape[1]
    delta = table
    lam = np.asarray(volumes, dtype=float).copy()
    for _ in range(max_outer):
        trunc = optimal_truncation(delta, n, c)
        pooled = np.sum(trunc / lam[:, None], axis=0)
        shape = pooled / np.exp(np.mean(np.log(pooled)))
        lam = np.sum(trunc / shape, axis=1) / p
        new = lam[:, None] * shape
        if satisfies_ratio(new, c):
            return lam, shape
        change = np.max(np.abs(new - delta) / np.abs(delta))
        delta = new
        if change < FIXED_POINT_TOL:
            lam, shapes = _power_shrink(lam, np.tile(shape, (len(lam), 1)), c)
            return lam, shapes[0]
    raise ConstraintNotConverged("common-shape constraint loop did not converge", delta)


def _vee_loop(covs, n, c, max_outer):
    p = covs[0].p
    K = [d.sigma() for d in covs]
    lam = np.array([d.volume for d in covs])
    prev = None
    for _ in range(max_outer):
        eigs = [sym_eigen(k) for k in K]
        table = np.clip(np.array([e.values for e in eigs]), 0.0, None)
        trunc = optimal_truncation(table, n, c)
        Kstar = [(e.vectors * t) @ e.vectors.T for e, t in zip(eigs, trunc)]
        pooled = sum(k / l for k, l in zip(Kstar, lam))
        ceig = sym_eigen(0.5 * (pooled + pooled.T))
        shape = ceig.values / np.exp(np.mean(np.log(ceig.values)))
        cinv = (ceig.vectors / shape) @ ceig.vectors.T
        lam = np.array([np.trace(k @ cinv) / p for k in Kstar])
        new_table = lam[:, None] * shape
        if satisfies_ratio(new_table, c):
            return ceig.vectors, lam, shape
        change = np.inf if prev is None else np.max(np.abs(new_table - prev) / prev)
        prev = new_table
        K = [l * ((ceig.vectors * shape) @ ceig.vectors.T) for l in lam]
        if change < FIXED_POINT_TOL:
            lam, shapes = _power_shrink(lam, np.tile(shape, (len(lam), 1)), c)
            return ceig.vectors, lam, shapes[0]
    raise ConstraintNotConverged("VEE constraint loop did not converge", K)


def constrain_mstep(model: str, unconstrained, scatter: ScatterMatrices, c: float,
                    max_outer: int = MAX_OUTER):
    """Impose ``max d / min d <= c`` on the M-step covariance estimates.

    Returns ``unconstrained`` untouched when the restriction already holds.
    Shared components (volume, shape, orientation) stay shared.
    """
    model = check_model(model)
    covs = list(unconstrained)
    table = np.array([d.eigenvalues for d in covs], dtype=float)
    if np.min(table) > 0 and satisfies_ratio(table, c):
        return covs
    if not er_required(model):
        raise ValueError(f"model {model} does not take the eigenvalue-ratio constraint")
    n = np.asarray(scatter.n, dtype=float)
    G = len(covs)

    if model in ("VII", "VVI", "VVV"):
        trunc = optimal_truncation(table, n, c)
        return [CovarianceDecomposition(d.orientation, t) for d, t in zip(covs, trunc)]

    if model == "VVE":
        trunc = optimal_truncation(table, n, c)
        D = common_principal_components(scatter, trunc, np.ones(G), covs[0].orientation)
        return [CovarianceDecomposition(D, t) for t in trunc]

    if model in ("EVI", "EVV", "EVE"):
        lam, shapes = _equal_volume_loop(table, n, c, max_outer)
        if model == "EVE":
            D = common_principal_components(scatter, shapes, np.full(G, lam), covs[0].orientation)
            return [CovarianceDecomposition(D, lam * s) for s in shapes]
        return [CovarianceDecomposition(d.orientation, lam * s) for d, s in zip(covs, shapes)]

    if model in ("VEI", "VEV"):
        volumes = np.array([d.volume for d in covs]) if np.min(table) > 0 else np.mean(table, axis=1)
        lam, shape = _common_shape_loop(table, volumes, n, c, max_outer)
        return [CovarianceDecomposition(d.orientation, l * shape) for d, l in zip(covs, lam)]

    # VEE
    D, lam, shape = _vee_loop(covs, n, c, max_outer)
    return [CovarianceDecomposition(D, l * shape) for l in lam]

"""The 14 parsimonious covariance structures and their M-step estimators.

A covariance matrix is stored as ``Sigma = D diag(delta) D'`` where ``delta``
holds the eigenvalues ``lambda * a_l``.  Volume ``lambda = |Sigma|^(1/p)`` and
shape ``A = diag(delta) / lambda`` are derived from it, so ``|A| = 1`` holds by
construction.

Naming follows the usual three-letter code (volume, shape, orientation), each
letter being E (equal across classes), V (varying) or I (identity).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import sym_eigen

MODEL_NAMES = (
    "EII", "VII", "EEI", "VEI", "EVI", "VVI", "EEE",
    "VEE", "EVE", "EEV", "VVE", "VEV", "EVV", "VVV",
)
# Eigenvalue-ratio constraint is unnecessary when volume and shape are shared.
_ER_NOT_REQUIRED = frozenset({"EII", "EEI", "EEE", "EEV"})

INNER_TOL = 1e-8
INNER_MAX_ITER = 50


class DegenerateScatterError(ArithmeticError):
    """A scatter matrix is too singular for the requested estimator."""


def check_model(name: str) -> str:
    name = str(name).upper()
    if name not in MODEL_NAMES:
        raise ValueError(f"unknown covariance model {name!r}; expected one of {', '.join(MODEL_NAMES)}")
    return name


def er_required(name: str) -> bool:
    return check_model(name) not in _ER_NOT_REQUIRED


def is_diagonal(name: str) -> bool:
    return check_model(name)[2] == "I"


def parameter_count(name: str, G: int, p: int) -> tuple[int, int]:
    """(gamma, delta): free rotation and eigenvalue parameters of the model."""
    name = check_model(name)
    if G < 1 or p < 1:
        raise ValueError("G and p must be positive")
    rot = p * (p - 1) // 2
    gamma = {"I": 0, "E": rot, "V": G * rot}[name[2]]
    if name[1] == "I":
        delta = 1 if name[0] == "E" else G
    else:
        delta = {
            ("E", "E"): p,
            ("V", "E"): G + p - 1,
            ("E", "V"): G * p - (G - 1),
            ("V", "V"): G * p,
        }[(name[0], name[1])]
    return gamma, delta


@dataclass(frozen=True)
class CovarianceDecomposition:
    orientation: np.ndarray
    eigenvalues: np.ndarray

    @classmethod
    def from_parts(cls, volume: float, orientation, shape) -> "CovarianceDecomposition":
        shape = np.asarray(shape, dtype=float)
        return cls(np.asarray(orientation, dtype=float), volume * shape)

    @classmethod
    def from_sigma(cls, sigma) -> "CovarianceDecomposition":
        eig = sym_eigen(sigma)
        return cls(eig.vectors, np.clip(eig.values, 0.0, None))

    @property
    def p(self) -> int:
        return self.eigenvalues.shape[0]

    @property
    def volume(self) -> float:
        return float(np.exp(np.mean(np.log(self.eigenvalues))))

    @property
    def shape(self) -> np.ndarray:
        return self.eigenvalues / self.volume

    def sigma(self) -> np.ndarray:
        return compose_sigma(self)


def compose_sigma(d: CovarianceDecomposition) -> np.ndarray:
    s = (d.orientation * d.eigenvalues) @ d.orientation.T
    return 0.5 * (s + s.T)


@dataclass(frozen=True)
class ScatterMatrices:
    """Per-class weighted scatter ``W_g`` and effective weights ``n_g``."""

    W: np.ndarray
    n: np.ndarray

    @property
    def G(self) -> int:
        return self.W.shape[0]

    @property
    def p(self) -> int:
        return self.W.shape[1]


def weighted_scatter(data: np.ndarray, weights: np.ndarray, means: np.ndarray) -> np.ndarray:
    """Sum over units of ``w_ig (x_i - mu_g)(x_i - mu_g)'`` for every class g."""
    G = weights.shape[1]
    p = data.shape[1]
    out = np.zeros((G, p, p))
    for g in range(G):
        w = weights[:, g]
        if not np.any(w):
            continue
        centred = data - means[g]
        out[g] = (centred * w[:, None]).T @ centred
    return 0.5 * (out + out.transpose(0, 2, 1))


def scatter_deviance(covs, scatter: ScatterMatrices) -> float:
    """``sum_g n_g log|Sigma_g| + tr(Sigma_g^-1 W_g)``; minus twice the covariance part of Q."""
    total = 0.0
    for d, W, n in zip(covs, scatter.W, scatter.n):
        rotated = np.einsum("ij,jk,ki->i", d.orientation.T, W, d.orientation)
        total += n * np.sum(np.log(d.eigenvalues)) + np.sum(rotated / d.eigenvalues)
    return float(total)


def _geomean(v: np.ndarray, axis=-1):
    with np.errstate(divide="ignore"):
        return np.exp(np.mean(np.log(v), axis=axis))


def _positive(v, what: str):
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)) or np.any(v <= 0):
        raise DegenerateScatterError(f"{what} is singular or not finite")
    return v


def _diag(W: np.ndarray) -> np.ndarray:
    return np.einsum("gii->gi", W).copy()


def _rotated_diag(W: np.ndarray, D: np.ndarray) -> np.ndarray:
    return np.einsum("ji,gjk,ki->gi", D, W, D)


def _converged(old: float, new: float, tol: float) -> bool:
    return abs(new - old) <= tol * max(abs(new), 1.0)


def _shared(D, delta, G):
    return [CovarianceDecomposition(D, delta) for _ in range(G)]


def _init_volumes(init, W, n, p):
    if init is not None:
        return np.array([d.volume for d in init], dtype=float)
    return np.trace(W, axis1=1, axis2=2) / (p * n)


def _eigen_all(W: np.ndarray):
    vals, vecs = [], []
    for Wg in W:
        e = sym_eigen(Wg)
        vals.append(np.clip(e.values, 0.0, None))
        vecs.append(e.vectors)
    return np.array(vals), vecs


def _vei(W, n, p, init, tol, max_iter):
    G = len(n)
    dW = _diag(W)
    lam = _positive(_init_volumes(init, W, n, p), "class volume")
    obj = np.inf
    for _ in range(max_iter):
        s = _positive(np.sum(dW / lam[:, None], axis=0), "pooled diagonal")
        a = s / _geomean(s)
        lam = _positive(np.sum(dW / a, axis=1) / (p * n), "class volume")
        new = float(np.sum(n * p * np.log(lam)) + np.sum(dW / a / lam[:, None]))
        if _converged(obj, new, tol):
            break
        obj = new
    eye = np.eye(p)
    return [CovarianceDecomposition(eye, lam[g] * a) for g in range(G)]


def _vee(W, n, p, init, tol, max_iter):
    G = len(n)
    lam = _positive(_init_volumes(init, W, n, p), "class volume")
    obj = np.inf
    for _ in range(max_iter):
        eig = sym_eigen(np.sum(W / lam[:, None, None], axis=0))
        vals = _positive(eig.values, "pooled scatter")
        a = vals / _geomean(vals)
        rot = _rotated_diag(W, eig.vectors)
        lam = _positive(np.sum(rot / a, axis=1) / (p * n), "class volume")
        new = float(np.sum(n * p * np.log(lam)) + np.sum(rot / a / lam[:, None]))
        if _converged(obj, new, tol):
            break
        obj = new
    return [CovarianceDecomposition(eig.vectors, lam[g] * a) for g in range(G)]


def _start_orientation(init, W):
    if init is not None:
        return np.asarray(init[0].orientation, dtype=float)
    return sym_eigen(np.sum(W, axis=0)).vectors


def _eve(W, n, p, init, tol, max_iter):
    from .constraints import common_principal_components

    G = len(n)
    D = _start_orientation(init, W)
    obj = np.inf
    for _ in range(max_iter):
        rot = _positive(_rotated_diag(W, D), "rotated scatter")
        gm = _geomean(rot)
        a = rot / gm[:, None]
        lam = float(np.sum(gm) / np.sum(n))
        D = common_principal_components(W, a, np.full(G, lam), D, max_iter=5)
        rot = _rotated_diag(W, D)
        new = float(np.sum(n) * p * np.log(lam) + np.sum(rot / a) / lam)
        if _converged(obj, new, tol):
            break
        obj = new
    return [CovarianceDecomposition(D, lam * a[g]) for g in range(G)]


def _vve(W, n, p, init, tol, max_iter):
    from .constraints import common_principal_components

    G = len(n)
    D = _start_orientation(init, W)
    obj = np.inf
    for _ in range(max_iter):
        delta = _positive(_rotated_diag(W, D) / n[:, None], "rotated scatter")
        D = common_principal_components(W, delta, np.ones(G), D, max_iter=5)
        rot = _rotated_diag(W, D)
        new = float(np.sum(n[:, None] * np.log(delta)) + np.sum(rot / delta))
        if _converged(obj, new, tol):
            break
        obj = new
    return [CovarianceDecomposition(D, delta[g]) for g in range(G)]


def _vev(W, n, p, init, tol, max_iter):
    G = len(n)
    omega, vecs = _eigen_all(W)
    lam = _positive(_init_volumes(init, W, n, p), "class volume")
    obj = np.inf
    for _ in range(max_iter):
        s = _positive(np.sum(omega / lam[:, None], axis=0), "pooled eigenvalues")
        a = s / _geomean(s)
        lam = _positive(np.sum(omega / a, axis=1) / (p * n), "class volume")
        new = float(np.sum(n * p * np.log(lam)) + np.sum(omega / a / lam[:, None]))
        if _converged(obj, new, tol):
            break
        obj = new
    return [CovarianceDecomposition(vecs[g], lam[g] * a) for g in range(G)]


def mstep_unconstrained(model: str, scatter: ScatterMatrices, init=None,
                        tol: float = INNER_TOL, max_iter: int = INNER_MAX_ITER):
    """Maximum-likelihood covariance decompositions for a patterned model.

    ``init`` (a previous list of decompositions under the same model) warm-
    starts the iterative estimators so that each call can only improve on it.
    Closed-form families ignore it.
    """
    model = check_model(model)
    W = np.asarray(scatter.W, dtype=float)
    n = np.asarray(scatter.n, dtype=float)
    G, p = W.shape[0], W.shape[1]
    if np.any(n <= 0):
        raise DegenerateScatterError("a class has zero effective weight")
    eye = np.eye(p)
    ntot = float(np.sum(n))

    if model == "EII":
        lam = np.trace(W.sum(axis=0)) / (ntot * p)
        return _shared(eye, np.full(p, lam), G)
    if model == "VII":
        lam = np.trace(W, axis1=1, axis2=2) / (n * p)
        return [CovarianceDecomposition(eye, np.full(p, lam[g])) for g in range(G)]
    if model == "EEI":
        return _shared(eye, _diag(W).sum(axis=0) / ntot, G)
    if model == "VVI":
        dW = _diag(W) / n[:, None]
        return [CovarianceDecomposition(eye, dW[g]) for g in range(G)]
    if model == "EVI":
        dW = _positive(_diag(W), "class diagonal scatter")
        gm = _geomean(dW)
        lam = np.sum(gm) / ntot
        return [CovarianceDecomposition(eye, lam * dW[g] / gm[g]) for g in range(G)]
    if model == "EEE":
        eig = sym_eigen(W.sum(axis=0) / ntot)
        return _shared(eig.vectors, np.clip(eig.values, 0.0, None), G)
    if model == "VVV":
        out = []
        for g in range(G):
            out.append(CovarianceDecomposition.from_sigma(W[g] / n[g]))
        return out
    if model == "EEV":
        omega, vecs = _eigen_all(W)
        s = _positive(omega.sum(axis=0), "pooled eigenvalues")
        gm = _geomean(s)
        lam = gm / ntot
        return [CovarianceDecomposition(vecs[g], lam * s / gm) for g in range(G)]
    if model == "EVV":
        omega, vecs = _eigen_all(W)
        gm = _geomean(_positive(omega, "class scatter"))
        lam = np.sum(gm) / ntot
        return [CovarianceDecomposition(vecs[g], lam * omega[g] / gm[g]) for g in range(G)]
    if model == "VEI":
        return _vei(W, n, p, init, tol, max_iter)
    if model == "VEE":
        return _vee(W, n, p, init, tol, max_iter)
    if model == "EVE":
        return _eve(W, n, p, init, tol, max_iter)
    if model == "VVE":
        return _vve(W, n, p, init, tol, max_iter)
    return _vev(W, n, p, init, tol, max_iter)

"""Trimmed, eigenvalue-constrained EM for (semi-)supervised Gaussian classifiers.

Four modes share one engine:

* ``edda``     supervised, no trimming, no constraint
* ``upclass``  semi-supervised EM over labelled and unlabelled units
* ``redda``    supervised with impartial trimming and the ratio constraint
* ``rupclass`` semi-supervised with trimming in both sets

Labels are integer codes ``0..G-1``.  Densities are handled in the log domain
throughout; gross outliers would underflow otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from .constraints import ConstraintNotConverged, constrain_mstep, satisfies_ratio
from .covariance import (
    CovarianceDecomposition,
    DegenerateScatterError,
    ScatterMatrices,
    check_model,
    er_required,
    mstep_unconstrained,
    scatter_deviance,
    weighted_scatter,
)
from .numerics import mvn_logpdf
from .selection import rbic_value

MODES = ("edda", "upclass", "redda", "rupclass")
ROBUST_MODES = ("redda", "rupclass")
SEMI_SUPERVISED_MODES = ("upclass", "rupclass")

DEFAULT_NSAMP = 50
DEFAULT_MAX_ITER = 500
DEFAULT_TOL = 1e-5
MAX_CSTEPS = 50
MAX_SUBSET_REDRAWS = 100
SINGULAR_RTOL = 1e-10


class FitError(RuntimeError):
    pass


class DegenerateFitError(FitError):
    """A class lost (almost) all of its weight or its covariance became singular."""


class InfeasibleConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MixtureParams:
    tau: np.ndarray
    mu: np.ndarray
    cov: tuple
    model: str
    c: float

    @property
    def G(self) -> int:
        return self.mu.shape[0]

    @property
    def p(self) -> int:
        return self.mu.shape[1]

    def component_logpdf(self, data: np.ndarray) -> np.ndarray:
        """(n, G) matrix of log phi(x_i; mu_g, Sigma_g)."""
        data = np.asarray(data, dtype=float).reshape(-1, self.p)
        out = np.empty((data.shape[0], self.G))
        for g, d in enumerate(self.cov):
            out[:, g] = mvn_logpdf(data, self.mu[g], d.eigenvalues, d.orientation)
        return out

    def joint_logpdf(self, data: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return self.component_logpdf(data) + np.log(self.tau)

    def sigmas(self) -> np.ndarray:
        return np.array([d.sigma() for d in self.cov])

    def eigenvalue_table(self) -> np.ndarray:
        return np.array([d.eigenvalues for d in self.cov])


@dataclass(frozen=True)
class TrimMask:
    zeta: np.ndarray
    phi: np.ndarray
    alpha_l: float = 0.0
    alpha_u: float = 0.0


@dataclass
class ModelFit:
    params: MixtureParams
    mode: str
    mask: TrimMask
    z: np.ndarray
    labels_unlabelled: np.ndarray
    labels_labelled: np.ndarray
    loglik: float
    loglik_trajectory: list
    cycles: list
    rbic: float
    iterations: int
    converged: bool
    n_retained: int
    labelled_cutoff: float = -np.inf
    unlabelled_cutoff: float = -np.inf
    seed: int | None = None
    notes: list = field(default_factory=list)

    @property
    def model(self) -> str:
        return self.params.model

    @property
    def c(self) -> float:
        return self.params.c

    @property
    def alpha_l(self) -> float:
        return self.mask.alpha_l

    @property
    def alpha_u(self) -> float:
        return self.mask.alpha_u

    @property
    def outliers_labelled(self) -> np.ndarray:
        return ~self.mask.zeta

    @property
    def outliers_unlabelled(self) -> np.ndarray:
        return ~self.mask.phi


def n_trimmed(n: int, alpha: float) -> int:
    """floor(n * alpha), guarded against representation error (0.29 * 100)."""
    if not 0 <= alpha < 1:
        raise InfeasibleConfigError(f"trimming level must lie in [0, 1), got {alpha}")
    return int(math.floor(n * alpha + 1e-9))


def _prepare(X, labels, Y):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("labelled data must be a 2-d array")
    labels = np.asarray(labels)
    if labels.shape != (X.shape[0],) or not np.issubdtype(labels.dtype, np.integer):
        raise ValueError("labels must be an integer vector with one entry per labelled row")
    p = X.shape[1]
    if Y is None:
        Y = np.empty((0, p))
    Y = np.asarray(Y, dtype=float).reshape(-1, p) if np.size(Y) else np.empty((0, p))
    if Y.shape[1] != p:
        raise ValueError("unlabelled data dimension does not match labelled data")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise ValueError("data contain non-finite values")
    return X, labels.astype(int), Y


def _n_classes(labels: np.ndarray, G: int | None) -> int:
    G = int(labels.max()) + 1 if G is None else G
    present = np.bincount(labels, minlength=G)
    if labels.min() < 0 or len(present) > G or np.any(present == 0):
        raise ValueError("every class 0..G-1 must appear among the labels")
    return G


def _one_hot(labels: np.ndarray, G: int) -> np.ndarray:
    out = np.zeros((labels.shape[0], G))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def trimmed_loglik(params: MixtureParams, X, labels, Y, mask: TrimMask) -> float:
    """Trimmed observed-data log-likelihood.

    Retained labelled units contribute log(tau_l phi_l(x)), retained
    unlabelled units the log of the mixture density.
    """
    total = 0.0
    if X.shape[0]:
        joint = params.joint_logpdf(X)[np.arange(X.shape[0]), labels]
        total += float(np.sum(joint[mask.zeta]))
    if Y.shape[0] and np.any(mask.phi):
        total += float(np.sum(logsumexp(params.joint_logpdf(Y[mask.phi]), axis=1)))
    return total


def _lowest(values: np.ndarray, k: int) -> np.ndarray:
    """Boolean mask of the k smallest values, ties broken by index."""
    keep = np.ones(values.shape[0], dtype=bool)
    if k > 0:
        order = np.lexsort((np.arange(values.shape[0]), values))
        keep[order[:k]] = False
    return keep


def labelled_logdensity(params: MixtureParams, X, labels) -> np.ndarray:
    """log phi(x_n; mu_l, Sigma_l) for the class each unit is labelled with."""
    return params.component_logpdf(X)[np.arange(X.shape[0]), labels]


def marginal_logdensity(params: MixtureParams, Y) -> np.ndarray:
    return logsumexp(params.joint_logpdf(Y), axis=1)


def concentration_step(params: MixtureParams, X, labels, Y, alpha_l: float, alpha_u: float) -> TrimMask:
    """Keep the units with the highest density under the current parameters.

    Labelled units are ranked by the density of their own class (no tau, so
    small classes are not trimmed away wholesale); unlabelled units by the
    mixture density.
    """
    zeta = _lowest(labelled_logdensity(params, X, labels), n_trimmed(X.shape[0], alpha_l))
    if Y.shape[0]:
        phi = _lowest(marginal_logdensity(params, Y), n_trimmed(Y.shape[0], alpha_u))
    else:
        phi = np.ones(0, dtype=bool)
    return TrimMask(zeta, phi, alpha_l, alpha_u)


def posterior(params: MixtureParams, data) -> np.ndarray:
    joint = params.joint_logpdf(data)
    return np.exp(joint - logsumexp(joint, axis=1, keepdims=True))


def e_step(params: MixtureParams, Y, phi) -> np.ndarray:
    """Posterior class probabilities; rows of trimmed units are NaN."""
    z = np.full((Y.shape[0], params.G), np.nan)
    if np.any(phi):
        z[phi] = posterior(params, Y[phi])
    return z


def _validate_covs(covs):
    for d in covs:
        ev = d.eigenvalues
        if not np.all(np.isfinite(ev)) or np.min(ev) <= SINGULAR_RTOL * np.max(ev) or np.max(ev) <= 0:
            raise DegenerateFitError("a class covariance matrix is singular")
        if not np.all(np.isfinite(d.orientation)):
            raise DegenerateFitError("a class covariance matrix is not finite")


def m_step(X, labels, Y, zeta, phi, z, model: str, c: float, previous: MixtureParams | None = None,
           G: int | None = None, min_weight: float | None = None) -> MixtureParams:
    """Weighted moments, then the patterned (and if needed constrained) covariance.

    With ``previous`` given, iterative covariance estimators are warm-started
    from it and the new covariances are only accepted if they do not lower
    the expected complete-data log-likelihood; this keeps every EM cycle
    monotone even where the constrained update is a heuristic.
    """
    model = check_model(model)
    G = G if G is not None else (previous.G if previous is not None else int(labels.max()) + 1)
    p = X.shape[1]
    wl = _one_hot(labels, G) * np.asarray(zeta, dtype=float)[:, None]
    n_g = wl.sum(axis=0)
    sum_x = wl.T @ X
    wu = None
    if Y.shape[0] and z is not None:
        wu = np.where(np.asarray(phi)[:, None], np.nan_to_num(z, nan=0.0), 0.0)
        n_g = n_g + wu.sum(axis=0)
        sum_x = sum_x + wu.T @ Y
    floor = p + 1 if min_weight is None else min_weight
    if np.any(n_g < floor - 1e-9):
        raise DegenerateFitError(f"class effective weight fell below {floor}: {np.round(n_g, 3).tolist()}")
    tau = n_g / n_g.sum()
    mu = sum_x / n_g[:, None]
    W = weighted_scatter(X, wl, mu)
    if wu is not None:
        W = W + weighted_scatter(Y, wu, mu)
    scatter = ScatterMatrices(W, n_g)

    prev_cov = previous.cov if previous is not None else None
    try:
        covs = mstep_unconstrained(model, scatter, init=prev_cov)
        if np.isfinite(c) and er_required(model):
            table = np.array([d.eigenvalues for d in covs])
            if not (np.min(table) > 0 and satisfies_ratio(table, c)):
                covs = constrain_mstep(model, covs, scatter, c)
        _validate_covs(covs)
    except (DegenerateScatterError, ConstraintNotConverged, DegenerateFitError) as exc:
        if prev_cov is None:
            raise DegenerateFitError(str(exc)) from exc
        covs = list(prev_cov)
    if prev_cov is not None and scatter_deviance(covs, scatter) > scatter_deviance(prev_cov, scatter):
        covs = list(prev_cov)
    return MixtureParams(tau=tau, mu=mu, cov=tuple(covs), model=model, c=float(c))


def aitken_converged(l_prev: float, l_curr: float, l_next: float, epsilon: float = DEFAULT_TOL) -> bool:
    """Aitken-accelerated stopping rule on three consecutive log-likelihoods."""
    denom = l_curr - l_prev
    step = l_next - l_curr
    if denom == 0.0:
        # Exact plateau: the acceleration is undefined and nothing is moving.
        return True
    a = step / denom
    if a >= 1.0:
        return False
    l_inf = l_curr + step / (1.0 - a)
    return abs(l_inf - l_curr) < epsilon


# ---------------------------------------------------------------- initialisation


@dataclass(frozen=True)
class InitCandidate:
    params: MixtureParams
    zeta: np.ndarray
    objective: float
    restart: int
    csteps: int


def _seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        # Fresh copy: spawning advances the original's child counter.
        return np.random.SeedSequence(seed.entropy, spawn_key=seed.spawn_key, pool_size=seed.pool_size)
    if isinstance(seed, np.random.Generator):
        return np.random.SeedSequence(int(seed.integers(2**63)))
    return np.random.SeedSequence(seed)


def _canonical_members(X, labels, G):
    """Class members ordered by their coordinates, so draws ignore row order."""
    members = []
    for g in range(G):
        idx = np.flatnonzero(labels == g)
        order = np.lexsort(X[idx].T[::-1])
        members.append(idx[order])
    return members


def _subset_params(X, labels, members, model, rng, G):
    p = X.shape[1]
    last = None
    for _ in range(MAX_SUBSET_REDRAWS):
        zeta = np.zeros(X.shape[0], dtype=bool)
        for idx in members:
            zeta[idx[rng.choice(idx.shape[0], p + 1, replace=False)]] = True
        try:
            params = m_step(X, labels, X[:0], zeta, zeta[:0], None, model, np.inf, G=G)
            return params
        except DegenerateFitError:
            last = zeta
    # Ridge fallback on the last subset.
    wl = _one_hot(labels, G) * last[:, None]
    n_g = wl.sum(axis=0)
    mu = (wl.T @ X) / n_g[:, None]
    W = weighted_scatter(X, wl, mu)
    ridge = 1e-6 * np.trace(W, axis1=1, axis2=2) / (p * n_g)
    ridge = np.where(ridge > 0, ridge, 1e-6)
    W = W + (n_g * ridge)[:, None, None] * np.eye(p)
    covs = mstep_unconstrained(model, ScatterMatrices(W, n_g))
    _validate_covs(covs)
    return MixtureParams(np.full(G, 1.0 / G), mu, tuple(covs), model, np.inf)


def _restart(X, labels, members, model, alpha_l, c, rng, G, restart):
    k = n_trimmed(X.shape[0], alpha_l)
    params = _subset_params(X, labels, members, model, rng, G)
    params = replace(params, tau=np.full(G, 1.0 / G))
    empty = X[:0]
    prev_keep = None
    steps = 0
    for steps in range(1, MAX_CSTEPS + 1):
        keep = _lowest(labelled_logdensity(params, X, labels), k)
        if prev_keep is not None and np.array_equal(keep, prev_keep):
            break
        params = m_step(X, labels, empty, keep, keep[:0], None, model, np.inf, G=G)
        prev_keep = keep
    if np.isfinite(c) and er_required(model):
        params = m_step(X, labels, empty, prev_keep, prev_keep[:0], None, model, c, G=G)
    mask = TrimMask(prev_keep, np.ones(0, dtype=bool), alpha_l, 0.0)
    objective = trimmed_loglik(params, X, labels, empty, mask)
    if not np.isfinite(objective):
        raise DegenerateFitError("non-finite trimmed likelihood")
    # csteps counts the concentration steps that changed the retained set.
    return InitCandidate(replace(params, c=float(c)), prev_keep, objective, restart, steps - 1)


def robust_init_candidates(X, labels, model: str, alpha_l: float, c: float, nsamp: int = DEFAULT_NSAMP,
                           seed=None, G: int | None = None) -> list[InitCandidate]:
    """All successful restarts of the robust initialisation, best first.

    Each restart draws a (p+1)-subset per class and runs concentration steps
    on the labelled data until the trimmed set stops changing.  Restart ``r``
    uses the r-th child of ``SeedSequence(seed)``, so results do not depend on
    the order in which restarts are evaluated.
    """
    X, labels, _ = _prepare(X, labels, None)
    model = check_model(model)
    G = _n_classes(labels, G)
    p = X.shape[1]
    if nsamp < 1:
        raise ValueError("nsamp must be at least 1")
    counts = np.bincount(labels, minlength=G)
    if np.any(counts < p + 1):
        small = [int(g) for g in np.flatnonzero(counts < p + 1)]
        raise InfeasibleConfigError(
            f"classes {small} have fewer than p+1={p + 1} labelled units; "
            "try a diagonal model (e.g. EII, VVI) or collect more labelled data"
        )
    members = _canonical_members(X, labels, G)
    children = _seed_sequence(seed).spawn(nsamp)
    out = []
    errors = []
    for r, child in enumerate(children):
        try:
            out.append(_restart(X, labels, members, model, alpha_l, c, np.random.default_rng(child), G, r))
        except (DegenerateFitError, DegenerateScatterError) as exc:
            errors.append(str(exc))
    if not out:
        raise DegenerateFitError(f"all {nsamp} initialisations degenerated; last error: {errors[-1]}")
    out.sort(key=lambda cand: (-cand.objective, cand.restart))
    return out


def robust_init(X, labels, model: str, alpha_l: float, c: float, nsamp: int = DEFAULT_NSAMP,
                seed=None, G: int | None = None) -> MixtureParams:
    return robust_init_candidates(X, labels, model, alpha_l, c, nsamp, seed, G)[0].params


# ---------------------------------------------------------------- driver


def _check_feasible(N, M, G, p, alpha_l, alpha_u):
    retained = N - n_trimmed(N, alpha_l)
    n_trimmed(M, alpha_u)
    if retained < G * (p + 1):
        raise InfeasibleConfigError(
            f"only {retained} labelled units are retained with alpha_l={alpha_l}; "
            f"at least G*(p+1)={G * (p + 1)} are required"
        )


def _run_em(X, labels, Y, params, model, alpha_l, alpha_u, c, max_iter, tol, G):
    trajectory = []
    cycles = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        mask = concentration_step(params, X, labels, Y, alpha_l, alpha_u)
        before = trimmed_loglik(params, X, labels, Y, mask)
        z = e_step(params, Y, mask.phi)
        params = m_step(X, labels, Y, mask.zeta, mask.phi, z, model, c, previous=params, G=G)
        after = trimmed_loglik(params, X, labels, Y, mask)
        if not np.isfinite(after):
            raise DegenerateFitError("non-finite trimmed likelihood")
        cycles.append((before, after))
        trajectory.append(after)
        if len(trajectory) >= 3 and aitken_converged(*trajectory[-3:], tol):
            converged = True
            break
    return params, trajectory, cycles, it, converged


def fit(X, labels, Y=None, *, model: str = "VVV", mode: str = "rupclass", alpha_l: float = 0.0,
        alpha_u: float = 0.0, c: float = 20.0, nsamp: int = DEFAULT_NSAMP, max_iter: int = DEFAULT_MAX_ITER,
        tol: float = DEFAULT_TOL, classify_trimmed: bool = True, seed=None, G: int | None = None,
        init: list[InitCandidate] | None = None) -> ModelFit:
    """Fit a (robust) model-based classifier.

    ``edda`` and ``upclass`` ignore ``alpha_l``, ``alpha_u`` and ``c``.  The
    supervised modes use ``Y`` only for classification.  ``init`` lets several
    fits share one set of robust initialisations (it must come from
    :func:`robust_init_candidates` with the same model, ``alpha_l`` and ``c``).
    """
    mode = str(mode).lower()
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    model = check_model(model)
    X, labels, Y = _prepare(X, labels, Y)
    G = _n_classes(labels, G)
    N, p = X.shape
    M = Y.shape[0]
    robust = mode in ROBUST_MODES
    semi = mode in SEMI_SUPERVISED_MODES
    if not robust:
        alpha_l = alpha_u = 0.0
        c = np.inf
    if c < 1:
        raise InfeasibleConfigError("c must be >= 1")
    if not semi:
        alpha_u = 0.0
    _check_feasible(N, M if semi else 0, G, p, alpha_l, alpha_u)
    if not semi:
        Y_est = Y[:0]
    else:
        Y_est = Y

    if robust:
        candidates = init if init is not None else robust_init_candidates(
            X, labels, model, alpha_l, c, nsamp, seed, G)
    else:
        keep = np.ones(N, dtype=bool)
        params0 = m_step(X, labels, X[:0], keep, keep[:0], None, model, np.inf, G=G)
        objective = trimmed_loglik(params0, X, labels, X[:0], TrimMask(keep, keep[:0]))
        candidates = [InitCandidate(params0, keep, objective, 0, 0)]

    notes = []
    result = None
    for cand in candidates:
        try:
            if semi:
                params, trajectory, cycles, iterations, converged = _run_em(
                    X, labels, Y_est, cand.params, model, alpha_l, alpha_u, c, max_iter, tol, G)
            else:
                params, trajectory, cycles, iterations, converged = cand.params, [cand.objective], [], 0, True
            result = (params, trajectory, cycles, iterations, converged)
            break
        except DegenerateFitError as exc:
            notes.append(f"initialisation {cand.restart} abandoned: {exc}")
    if result is None:
        raise DegenerateFitError("; ".join(notes) or "no usable initialisation")
    params, trajectory, cycles, iterations, converged = result

    mask = concentration_step(params, X, labels, Y_est, alpha_l, alpha_u)
    phi = np.ones(M, dtype=bool) if not semi else mask.phi
    mask = TrimMask(mask.zeta, phi, alpha_l, alpha_u)
    loglik = trimmed_loglik(params, X, labels, Y_est, TrimMask(mask.zeta, phi if semi else phi[:0]))
    if not np.isfinite(loglik):
        raise DegenerateFitError("non-finite trimmed likelihood")

    z = posterior(params, Y) if M else np.empty((0, G))
    labels_u = np.argmax(z, axis=1) if M else np.empty(0, dtype=int)
    if not classify_trimmed and M:
        z = np.where(phi[:, None], z, np.nan)
        labels_u = np.where(phi, labels_u, -1)
    labels_l = np.argmax(posterior(params, X), axis=1)

    n_retained = int(mask.zeta.sum() + (phi.sum() if semi else 0))
    c_eff = c if (robust and er_required(model)) else np.inf
    rbic = rbic_value(loglik, model, G, p, c_eff, n_retained) if converged else float("nan")

    dens_l = labelled_logdensity(params, X, labels)
    cut_l = float(np.min(dens_l[mask.zeta])) if n_trimmed(N, alpha_l) else -np.inf
    cut_u = -np.inf
    if semi and M and n_trimmed(M, alpha_u):
        cut_u = float(np.min(marginal_logdensity(params, Y)[phi]))

    return ModelFit(
        params=replace(params, c=float(c)), mode=mode, mask=mask, z=z, labels_unlabelled=labels_u,
        labels_labelled=labels_l, loglik=loglik, loglik_trajectory=trajectory, cycles=cycles, rbic=rbic,
        iterations=iterations, converged=converged, n_retained=n_retained, labelled_cutoff=cut_l,
        unlabelled_cutoff=cut_u, seed=seed if isinstance(seed, (int, np.integer)) else None, notes=notes,
    )


def predict(fit_or_params, newdata, classify_trimmed: bool = True, labels=None):
    """MAP classification of new units.

    Returns ``(labels, posteriors, outlier)``.  ``outlier`` marks units whose
    density falls below the fitted trimming cutoff: the own-class density
    for rows with a known label (``labels >= 0``), the mixture density
    otherwise.  Exact ties go to the lowest class index.
    """
    if isinstance(fit_or_params, ModelFit):
        params = fit_or_params.params
        cut_l, cut_u = fit_or_params.labelled_cutoff, fit_or_params.unlabelled_cutoff
    else:
        params, cut_l, cut_u = fit_or_params, -np.inf, -np.inf
    data = np.asarray(newdata, dtype=float)
    if data.ndim != 2 or data.shape[1] != params.p:
        raise ValueError(f"expected data with {params.p} columns, got shape {data.shape}")
    z = posterior(params, data)
    pred = np.argmax(z, axis=1)
    known = np.zeros(data.shape[0], dtype=bool) if labels is None else np.asarray(labels) >= 0
    outlier = np.zeros(data.shape[0], dtype=bool)
    if np.any(~known):
        outlier[~known] = marginal_logdensity(params, data[~known]) < cut_u
    if np.any(known):
        own = np.asarray(labels)[known]
        outlier[known] = labelled_logdensity(params, data[known], own) < cut_l
    if not classify_trimmed:
        pred = np.where(outlier, -1, pred)
        z = np.where(outlier[:, None], np.nan, z)
    return pred, z, outlier

"""Trimmed BIC-type criterion and model selection over patterns and c."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .covariance import MODEL_NAMES, check_model, er_required, parameter_count

DEFAULT_C_GRID = (4.0, 20.0, 100.0)


def penalty(model: str, G: int, p: int, c: float) -> float:
    """Number of free parameters, discounted for the eigenvalue-ratio bound.

    ``c = inf`` gives the classical count ``Gp + G - 1 + gamma + delta``.
    """
    if c < 1:
        raise ValueError("c must be >= 1")
    gamma, delta = parameter_count(model, G, p)
    shrink = 1.0 if math.isinf(c) else 1.0 - 1.0 / c
    return G * p + G - 1 + gamma + (delta - 1) * shrink + 1


def rbic_value(loglik: float, model: str, G: int, p: int, c: float, n_retained: int) -> float:
    return 2.0 * loglik - penalty(model, G, p, c) * math.log(n_retained)


def rbic(fit) -> float:
    """RBIC of a fitted model; NaN when the fit did not converge."""
    if not fit.converged:
        return float("nan")
    c = fit.c if (fit.mode in ("redda", "rupclass") and er_required(fit.model)) else math.inf
    return rbic_value(fit.loglik, fit.model, fit.params.G, fit.params.p, c, fit.n_retained)


def bic(loglik: float, n_params: float, n: int) -> float:
    return 2.0 * loglik - n_params * math.log(n)


@dataclass
class Candidate:
    model: str
    c: float
    rbic: float
    penalty: float
    loglik: float = float("nan")
    iterations: int = 0
    converged: bool = False
    error: str | None = None
    fit: object = None


@dataclass
class SelectionReport:
    candidates: list = field(default_factory=list)
    winner: Candidate | None = None

    def ranked(self) -> list:
        return list(self.candidates)


def _rank_key(cand: Candidate):
    finite = np.isfinite(cand.rbic)
    return (not finite, -cand.rbic if finite else 0.0, cand.penalty, MODEL_NAMES.index(cand.model), cand.c)


def select(X, labels, Y=None, models=MODEL_NAMES, c_grid=DEFAULT_C_GRID, **fit_config) -> SelectionReport:
    """Fit every (model, c) pair and rank the candidates by RBIC.

    Models that never need the ratio constraint do not depend on c and are
    fitted once, at the largest c in the grid.  Ties go to the smaller
    penalty, then to the earlier model in the standard ordering.
    """
    from .em import FitError, fit

    models = [check_model(m) for m in models]
    c_grid = sorted(float(c) for c in c_grid)
    if not models or not c_grid:
        raise ValueError("model list and c grid must be nonempty")
    mode = fit_config.get("mode", "rupclass")
    robust = mode in ("redda", "rupclass")
    labels = np.asarray(labels)
    G = int(fit_config.get("G") or labels.max() + 1)
    p = np.asarray(X).shape[1]

    report = SelectionReport()
    for model in models:
        grid = c_grid if (robust and er_required(model)) else [c_grid[-1]]
        for c in grid:
            c_pen = c if (robust and er_required(model)) else math.inf
            cand = Candidate(model, c, float("nan"), penalty(model, G, p, c_pen))
            try:
                f = fit(X, labels, Y, model=model, c=c, **fit_config)
                cand.rbic = f.rbic
                cand.loglik = f.loglik
                cand.iterations = f.iterations
                cand.converged = f.converged
                cand.fit = f
                if not f.converged:
                    cand.error = "did not converge"
            except (FitError, ArithmeticError) as exc:
                cand.error = f"{type(exc).__name__}: {exc}"
            report.candidates.append(cand)
    report.candidates.sort(key=_rank_key)
    best = report.candidates[0]
    if not np.isfinite(best.rbic):
        details = "; ".join(f"{c.model}/c={c.c:g}: {c.error}" for c in report.candidates)
        raise FitError(f"no candidate produced a finite RBIC ({details})")
    report.winner = best
    return report

"""Monte Carlo benchmark: contaminated Gaussian and t mixtures.

Two designs are available.  ``study1`` is a bivariate, three-class Gaussian
mixture whose labelled set is corrupted with label flips (class 3 relabelled
as class 1) and uniform outliers on ``[-20, 20]^2``; ``study2`` is a
ten-dimensional, four-class mixture of multivariate t with 10 flipped labels
and 15 outliers on ``[10, 15]^10``.

Class codes are 0-based, so "class 1" in the design is code 0.
"""

from __future__ import annotations

import csv
import io
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .covariance import check_model
from .em import MODES, FitError, fit, robust_init_candidates

STUDY1_TAU = np.array([0.3, 0.2, 0.5])
STUDY1_MU = np.array([[0.0, 0.0], [4.0, -4.0], [0.0, 8.0]])
STUDY1_SIGMA = np.array([
    [[1.0, 0.3], [0.3, 1.0]],
    [[1.0, -0.3], [-0.3, 1.0]],
    [[6.71, 2.09], [2.09, 6.71]],
])
STUDY1_ETAS = (0.0, 0.05, 0.10, 0.15, 0.20, 0.25)

STUDY2_TAU = np.array([0.2, 0.4, 0.1, 0.3])
STUDY2_NU = 6.0
# The reference fourth mean vector lists eleven entries for ten dimensions; the first ten are used.
_STUDY2_MU4_LISTED = (8, 0, 8, 0, 8, 0, 8, 0, 8, 0, 8)
STUDY2_MU = np.array([
    np.zeros(10),
    [4, -4, 4, -4, 4, -4, 4, -4, 4, -4],
    [0, 0, 7, 7, 7, 3, 6, 8, -4, -4],
    _STUDY2_MU4_LISTED[:10],
], dtype=float)
_STUDY2_SIGMA34 = np.array([
    [5.05, 1.26, -0.35, -0.00, -1.04, -1.35, 0.29, 0.07, 0.69, 1.17],
    [1.26, 2.57, 0.17, 0.00, 0.27, 0.11, 0.61, 0.11, 0.59, 0.89],
    [-0.35, 0.17, 6.74, -0.00, -0.26, -0.31, -0.01, 0.00, 0.08, 0.14],
    [-0.00, 0.00, -0.00, 5.47, -0.00, -0.00, 0.00, 0.00, 0.00, 0.00],
    [-1.04, 0.27, -0.26, -0.00, 6.80, -0.76, -0.12, -0.01, 0.09, 0.21],
    [-1.35, 0.11, -0.31, -0.00, -0.76, 7.75, -0.26, -0.04, -0.03, 0.03],
    [0.29, 0.61, -0.01, 0.00, -0.12, -0.26, 4.76, 0.06, 0.38, 0.60],
    [0.07, 0.11, 0.00, 0.00, -0.01, -0.04, 0.06, 4.18, 0.07, 0.11],
    [0.69, 0.59, 0.08, 0.00, 0.09, -0.03, 0.38, 0.07, 3.23, 0.60],
    [1.17, 0.89, 0.14, 0.00, 0.21, 0.03, 0.60, 0.11, 0.60, 3.24],
])
STUDY2_SIGMA = np.array([np.eye(10), 2.0 * np.eye(10), _STUDY2_SIGMA34, _STUDY2_SIGMA34])

METRICS = ("error", "pct_trimmed", "pct_assigned", "pct_contaminated_trimmed")


@dataclass(frozen=True)
class StudyIConfig:
    N: int = 200
    M: int = 400
    eta: float = 0.0
    B: int = 100
    seed: int = 0
    # "replace" keeps N fixed by overwriting clean labelled units with the
    # outliers; "add" appends them.
    outliers: str = "add"

    def __post_init__(self):
        if not 0.0 <= self.eta <= 0.25 + 1e-12:
            raise ValueError("eta must lie in [0, 0.25]")
        if self.outliers not in ("replace", "add"):
            raise ValueError("outliers must be 'replace' or 'add'")


@dataclass(frozen=True)
class StudyIIConfig:
    N: int = 250
    M: int = 750
    B: int = 100
    seed: int = 0
    n_flipped: int = 10
    n_outliers: int = 15
    outliers: str = "add"

    def __post_init__(self):
        if self.outliers not in ("replace", "add"):
            raise ValueError("outliers must be 'replace' or 'add'")


@dataclass
class SimulatedData:
    """A labelled/unlabelled split with ground truth.

    ``true_labelled`` is -1 for planted outliers; ``flipped`` and ``outlier``
    flag the two kinds of contamination in the labelled set.
    """

    X: np.ndarray
    labels: np.ndarray
    Y: np.ndarray
    true_labelled: np.ndarray
    true_unlabelled: np.ndarray
    flipped: np.ndarray
    outlier: np.ndarray

    @property
    def contaminated(self) -> np.ndarray:
        return self.flipped | self.outlier

    @property
    def G(self) -> int:
        return int(max(self.labels.max(), self.true_unlabelled.max())) + 1


def sample_gaussian_mixture(n, tau, mu, sigma, rng):
    cls = rng.choice(len(tau), size=n, p=tau)
    chol = np.linalg.cholesky(sigma)
    z = rng.standard_normal((n, mu.shape[1]))
    x = mu[cls] + np.einsum("nij,nj->ni", chol[cls], z)
    return x, cls


def sample_t_mixture(n, tau, mu, sigma, nu, rng):
    """x = mu + z * sqrt(nu / u) with z ~ N(0, sigma), u ~ chi2(nu)."""
    x, cls = sample_gaussian_mixture(n, tau, np.zeros_like(mu), sigma, rng)
    u = rng.chisquare(nu, size=n)
    return mu[cls] + x * np.sqrt(nu / u)[:, None], cls


def _split(x, cls, N, rng):
    perm = rng.permutation(x.shape[0])
    return x[perm[:N]], cls[perm[:N]], x[perm[N:]], cls[perm[N:]]


def _plant_outliers(X, labels, truth, flipped, n_out, low, high, G, mode, rng):
    p = X.shape[1]
    pts = rng.uniform(low, high, size=(n_out, p))
    lab = rng.integers(0, G, size=n_out)
    outlier = np.zeros(X.shape[0], dtype=bool)
    if n_out == 0:
        return X, labels, truth, flipped, outlier
    if mode == "replace":
        candidates = np.flatnonzero(~flipped)
        idx = np.sort(rng.choice(candidates, size=n_out, replace=False))
        X, labels, truth = X.copy(), labels.copy(), truth.copy()
        X[idx], labels[idx], truth[idx] = pts, lab, -1
        outlier[idx] = True
        return X, labels, truth, flipped, outlier
    X = np.vstack([X, pts])
    labels = np.concatenate([labels, lab])
    truth = np.concatenate([truth, np.full(n_out, -1)])
    flipped = np.concatenate([flipped, np.zeros(n_out, dtype=bool)])
    outlier = np.concatenate([outlier, np.ones(n_out, dtype=bool)])
    return X, labels, truth, flipped, outlier


def n_contaminated(eta: float, N: int) -> int:
    """ceil(eta / 2 * N), guarded against representation error."""
    return int(math.ceil(eta / 2.0 * N - 1e-9))


def gen_study1(config: StudyIConfig, rng: np.random.Generator) -> SimulatedData:
    x, cls = sample_gaussian_mixture(config.N + config.M, STUDY1_TAU, STUDY1_MU, STUDY1_SIGMA, rng)
    X, truth, Y, truth_u = _split(x, cls, config.N, rng)
    k = n_contaminated(config.eta, config.N)
    labels = truth.copy()
    flipped = np.zeros(config.N, dtype=bool)
    if k:
        group3 = np.flatnonzero(truth == 2)
        if group3.size < k:
            raise ValueError(f"only {group3.size} labelled units of class 3 available for {k} flips")
        idx = rng.choice(group3, size=k, replace=False)
        labels[idx] = 0
        flipped[idx] = True
    X, labels, truth, flipped, outlier = _plant_outliers(
        X, labels, truth, flipped, k, -20.0, 20.0, 3, config.outliers, rng)
    return SimulatedData(X, labels, Y, truth, truth_u, flipped, outlier)


def gen_study2(config: StudyIIConfig, rng: np.random.Generator) -> SimulatedData:
    x, cls = sample_t_mixture(config.N + config.M, STUDY2_TAU, STUDY2_MU, STUDY2_SIGMA, STUDY2_NU, rng)
    X, truth, Y, truth_u = _split(x, cls, config.N, rng)
    G = len(STUDY2_TAU)
    labels = truth.copy()
    flipped = np.zeros(config.N, dtype=bool)
    if config.n_flipped:
        idx = rng.choice(config.N, size=config.n_flipped, replace=False)
        labels[idx] = (truth[idx] + rng.integers(1, G, size=idx.size)) % G
        flipped[idx] = True
    X, labels, truth, flipped, outlier = _plant_outliers(
        X, labels, truth, flipped, config.n_outliers, 10.0, 15.0, G, config.outliers, rng)
    return SimulatedData(X, labels, Y, truth, truth_u, flipped, outlier)


def metrics(fit_result, data: SimulatedData) -> dict:
    """Error on the unlabelled set plus label-noise detection rates.

    ``pct_trimmed`` is the share of flipped labelled units that were trimmed;
    ``pct_assigned`` the share of those trimmed flips that the fitted
    classifier puts back in their true class.  Both are NaN when undefined.
    """
    pred_u = fit_result.labels_unlabelled
    error = float(np.mean(pred_u != data.true_unlabelled)) if pred_u.size else float("nan")
    trimmed = ~fit_result.mask.zeta
    n_flip = int(data.flipped.sum())
    caught = data.flipped & trimmed
    pct_trimmed = caught.sum() / n_flip if n_flip else float("nan")
    if caught.any():
        pct_assigned = float(np.mean(fit_result.labels_labelled[caught] == data.true_labelled[caught]))
    else:
        pct_assigned = float("nan")
    n_cont = int(data.contaminated.sum())
    pct_cont = (data.contaminated & trimmed).sum() / n_cont if n_cont else float("nan")
    return {
        "error": error,
        "pct_trimmed": float(pct_trimmed),
        "pct_assigned": pct_assigned,
        "pct_contaminated_trimmed": float(pct_cont),
    }


# ---------------------------------------------------------------- benchmark


_NAME_TO_MODE = {m.upper(): m for m in MODES}


@dataclass(frozen=True)
class MethodSpec:
    """A method and its settings, written ``NAME[:key=value,...]``.

    Keys: ``al`` (labelled trimming), ``au`` (unlabelled trimming), ``c``,
    ``model`` and ``label`` (the name used in reports).
    """

    mode: str
    alpha_l: float = 0.0
    alpha_u: float = 0.0
    c: float = 20.0
    model: str = "VVV"
    label: str = ""

    @property
    def name(self) -> str:
        return self.label or self.mode.upper()

    @property
    def robust(self) -> bool:
        return self.mode in ("redda", "rupclass")

    @classmethod
    def parse(cls, text: str, defaults: dict | None = None) -> "MethodSpec":
        head, _, tail = text.strip().partition(":")
        mode = _NAME_TO_MODE.get(head.strip().upper())
        if mode is None:
            raise ValueError(f"unknown method {head!r}; expected one of {sorted(_NAME_TO_MODE)}")
        opts = dict(defaults.get(mode, {}) if defaults else {})
        for item in filter(None, (s.strip() for s in tail.split(","))):
            key, eq, value = item.partition("=")
            if not eq:
                raise ValueError(f"malformed option {item!r} in method {text!r}")
            key = key.strip().lower()
            if key in ("al", "alpha_l"):
                opts["alpha_l"] = float(value)
            elif key in ("au", "alpha_u"):
                opts["alpha_u"] = float(value)
            elif key == "c":
                opts["c"] = float(value)
            elif key == "model":
                opts["model"] = check_model(value.strip())
            elif key == "label":
                opts["label"] = value.strip()
            else:
                raise ValueError(f"unknown option {key!r} in method {text!r}")
        if mode not in ("redda", "rupclass"):
            opts["alpha_l"] = opts["alpha_u"] = 0.0
        if mode == "redda":
            opts["alpha_u"] = 0.0
        return cls(mode=mode, **opts)


# Trimming levels used for the first study when none are given.
STUDY1_DEFAULTS = {"redda": {"alpha_l": 0.15}, "rupclass": {"alpha_l": 0.15, "alpha_u": 0.05}}
STUDY2_DEFAULTS = {"redda": {"alpha_l": 0.10}, "rupclass": {"alpha_l": 0.10, "alpha_u": 0.05}}
DEFAULT_METHODS = ("EDDA", "UPCLASS", "REDDA", "RUPCLASS")


def parse_methods(texts, study: str = "study1") -> list[MethodSpec]:
    defaults = STUDY1_DEFAULTS if study == "study1" else STUDY2_DEFAULTS
    specs = [MethodSpec.parse(t, defaults) for t in texts]
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ValueError("method names must be unique; use label=... to tell variants apart")
    return specs


def replicate_seeds(seed: int, n: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(n)


@dataclass
class ReplicateResult:
    index: int
    eta: float
    metrics: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)


def generate(study: str, eta: float, N: int | None, M: int | None, rng, outliers="add") -> SimulatedData:
    if study == "study1":
        cfg = StudyIConfig(N=N or 200, M=M or 400, eta=eta, outliers=outliers)
        return gen_study1(cfg, rng)
    if study == "study2":
        cfg = StudyIIConfig(N=N or 250, M=M or 750, outliers=outliers)
        return gen_study2(cfg, rng)
    raise ValueError(f"unknown study {study!r}")


def run_replicate(study, eta, methods, seq, index, nsamp, N=None, M=None, outliers="add"):
    """One data set, every method fitted to it.

    Robust methods with the same model, alpha_l and c share one set of
    initialisations, so they differ only in how the unlabelled data are used.
    """
    data_seq, init_seq = seq.spawn(2)
    data = generate(study, eta, N, M, np.random.default_rng(data_seq), outliers)
    result = ReplicateResult(index, eta)
    init_cache = {}
    for spec in methods:
        try:
            init = None
            if spec.robust:
                key = (spec.model, spec.alpha_l, spec.c)
                if key not in init_cache:
                    init_cache[key] = robust_init_candidates(
                        data.X, data.labels, spec.model, spec.alpha_l, spec.c, nsamp, init_seq, G=data.G)
                init = init_cache[key]
            f = fit(data.X, data.labels, data.Y, model=spec.model, mode=spec.mode, alpha_l=spec.alpha_l,
                    alpha_u=spec.alpha_u, c=spec.c, nsamp=nsamp, G=data.G, init=init)
            result.metrics[spec.name] = metrics(f, data)
        except (FitError, ArithmeticError) as exc:
            result.failures[spec.name] = f"{type(exc).__name__}: {exc}"
    return result


def _run_task(args):
    return run_replicate(*args)


def default_jobs() -> int:
    value = os.environ.get("RUPCLASS_JOBS", "1")
    try:
        return max(1, int(value))
    except ValueError:
        return 1


@dataclass
class BenchmarkReport:
    study: str
    B: int
    seed: int
    methods: list
    etas: list
    rows: list
    replicates: list

    def cell(self, method: str, eta: float, metric: str = "error") -> dict:
        for row in self.rows:
            if row["method"] == method and math.isclose(row["eta"], eta) and row["metric"] == metric:
                return row
        raise KeyError((method, eta, metric))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["method", "eta", "metric", "mean", "sd", "B", "failures"])
        for r in self.rows:
            writer.writerow([r["method"], f"{r['eta']:.2f}", r["metric"], _fmt(r["mean"]), _fmt(r["sd"]),
                             r["B"], r["failures"]])
        return buf.getvalue()


def _fmt(x: float) -> str:
    return "NA" if not np.isfinite(x) else repr(float(x))


def _aggregate(replicates, methods, etas, B):
    rows = []
    for spec in methods:
        for eta in etas:
            reps = [r for r in replicates if r.eta == eta]
            failures = sum(spec.name in r.failures for r in reps)
            for metric in METRICS:
                if metric != "error" and not spec.robust:
                    continue
                vals = np.array([r.metrics[spec.name][metric] for r in reps if spec.name in r.metrics])
                vals = vals[np.isfinite(vals)]
                mean = float(np.mean(vals)) if vals.size else float("nan")
                sd = float(np.std(vals, ddof=1)) if vals.size > 1 else (0.0 if vals.size else float("nan"))
                rows.append({"method": spec.name, "eta": eta, "metric": metric, "mean": mean, "sd": sd,
                             "B": B, "failures": failures})
    return rows


def run_benchmark(study: str, methods, B: int, seed: int, etas=None, nsamp: int = 50, jobs: int | None = None,
                  N: int | None = None, M: int | None = None, outliers: str = "add") -> BenchmarkReport:
    """B replicates per contamination level, every method on the same data.

    Replicate ``b`` at level ``eta`` draws its data and initialisations from
    child ``b`` of a per-level child of ``SeedSequence(seed)``, so results do
    not depend on ``jobs``.
    """
    if B < 1:
        raise ValueError("B must be at least 1")
    if study not in ("study1", "study2"):
        raise ValueError(f"unknown study {study!r}")
    methods = parse_methods(methods, study) if methods and isinstance(methods[0], str) else list(methods)
    if not methods:
        raise ValueError("at least one method is required")
    if etas is None:
        etas = list(STUDY1_ETAS) if study == "study1" else [0.1]
    etas = [float(e) for e in etas]
    if study == "study2" and len(etas) > 1:
        raise ValueError("the second study has a single, fixed contamination level")
    tasks = []
    for level_seq, eta in zip(np.random.SeedSequence(seed).spawn(len(etas)), etas):
        for b, seq in enumerate(level_seq.spawn(B)):
            tasks.append((study, eta, methods, seq, b, nsamp, N, M, outliers))
    jobs = default_jobs() if jobs is None else max(1, jobs)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        if jobs == 1:
            replicates = [_run_task(t) for t in tasks]
        else:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                replicates = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    rows = _aggregate(replicates, methods, etas, B)
    return BenchmarkReport(study, B, seed, methods, etas, rows, replicates)

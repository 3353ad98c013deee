"""Delimited data files and JSON model artifacts."""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass

import numpy as np

from .covariance import CovarianceDecomposition
from .em import MixtureParams, ModelFit, TrimMask

UNLABELLED = "?"
DEFAULT_LABEL_COLUMN = "label"
# Bookkeeping columns written by the simulator; never treated as features.
RESERVED_COLUMNS = ("true_class", "contaminated")
ARTIFACT_FORMAT = "rupclass-model/1"


class DataParseError(ValueError):
    pass


def natural_key(text: str):
    return [(0, int(tok), "") if tok.isdigit() else (1, 0, tok) for tok in re.split(r"(\d+)", text) if tok]


@dataclass
class Dataset:
    """Rows split into labelled and unlabelled parts.

    ``labelled_rows`` and ``unlabelled_rows`` give the position of each unit
    in the original file.
    """

    features: list
    class_names: list
    X: np.ndarray
    labels: np.ndarray
    Y: np.ndarray
    labelled_rows: np.ndarray
    unlabelled_rows: np.ndarray

    @property
    def data(self) -> np.ndarray:
        out = np.empty((self.X.shape[0] + self.Y.shape[0], self.X.shape[1]))
        out[self.labelled_rows] = self.X
        out[self.unlabelled_rows] = self.Y
        return out

    @property
    def row_labels(self) -> np.ndarray:
        """Class code per file row, -1 where unlabelled."""
        out = np.full(self.X.shape[0] + self.Y.shape[0], -1)
        out[self.labelled_rows] = self.labels
        return out


def read_dataset(path, label_column: str | None = DEFAULT_LABEL_COLUMN, class_names=None,
                 delimiter: str = ",") -> Dataset:
    """Read a CSV with a header row.

    Every column other than the label column and the simulator bookkeeping
    columns must be numeric.  Label values are sorted naturally ("2" before
    "10") to define class codes, unless ``class_names`` fixes the order.
    A missing label column means every row is unlabelled.
    """
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh, delimiter=delimiter))
    except OSError as exc:
        raise DataParseError(f"cannot read {path}: {exc}") from exc
    rows = [r for r in rows if any(cell.strip() for cell in r)]
    if not rows:
        raise DataParseError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if len(set(header)) != len(header):
        raise DataParseError("duplicate column names in header")
    has_label = label_column is not None and label_column in header
    feat_idx = [i for i, h in enumerate(header) if h not in RESERVED_COLUMNS and not (has_label and h == label_column)]
    if not feat_idx:
        raise DataParseError("no feature columns found")
    data = np.empty((len(body), len(feat_idx)))
    raw_labels = []
    lab_idx = header.index(label_column) if has_label else None
    for r, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataParseError(f"line {r}: expected {len(header)} fields, found {len(row)}")
        try:
            data[r - 2] = [float(row[i]) for i in feat_idx]
        except ValueError as exc:
            raise DataParseError(f"line {r}: non-numeric feature value ({exc})") from exc
        raw_labels.append(row[lab_idx].strip() if has_label else UNLABELLED)
    if not np.all(np.isfinite(data)):
        raise DataParseError("feature values must be finite")
    raw_labels = np.array(raw_labels, dtype=object)
    known = raw_labels != UNLABELLED
    if np.any(raw_labels[known] == ""):
        raise DataParseError(f"empty label; mark unlabelled rows with {UNLABELLED!r}")
    if class_names is None:
        class_names = sorted(set(raw_labels[known]), key=natural_key)
    else:
        class_names = list(class_names)
        unknown = sorted(set(raw_labels[known]) - set(class_names), key=natural_key)
        if unknown:
            raise DataParseError(f"labels {unknown} are not among the model classes {class_names}")
    code = {name: g for g, name in enumerate(class_names)}
    lab_rows = np.flatnonzero(known)
    unl_rows = np.flatnonzero(~known)
    labels = np.array([code[v] for v in raw_labels[known]], dtype=int)
    return Dataset([header[i] for i in feat_idx], class_names, data[lab_rows], labels, data[unl_rows],
                   lab_rows, unl_rows)


def fmt(x) -> str:
    """Shortest representation that round-trips exactly."""
    return repr(float(x))


# ---------------------------------------------------------------- artifacts


def _floats(a):
    return np.asarray(a, dtype=float).tolist()


def fit_to_dict(f: ModelFit, class_names, features, version: str, seed=None, nsamp=None) -> dict:
    p = f.params
    classes = []
    for g, d in enumerate(p.cov):
        classes.append({
            "name": class_names[g],
            "tau": float(p.tau[g]),
            "mu": _floats(p.mu[g]),
            "eigenvalues": _floats(d.eigenvalues),
            "volume": float(d.volume),
            "shape": _floats(d.shape),
            "orientation": _floats(d.orientation),
        })
    return {
        "format": ARTIFACT_FORMAT,
        "version": version,
        "mode": f.mode,
        "model": p.model,
        "c": None if not np.isfinite(p.c) else float(p.c),
        "alpha_labelled": float(f.alpha_l),
        "alpha_unlabelled": float(f.alpha_u),
        "seed": seed,
        "nsamp": nsamp,
        "features": list(features),
        "classes": classes,
        "loglik": float(f.loglik),
        "rbic": None if not np.isfinite(f.rbic) else float(f.rbic),
        "iterations": int(f.iterations),
        "converged": bool(f.converged),
        "n_retained": int(f.n_retained),
        "labelled_cutoff": None if not np.isfinite(f.labelled_cutoff) else float(f.labelled_cutoff),
        "unlabelled_cutoff": None if not np.isfinite(f.unlabelled_cutoff) else float(f.unlabelled_cutoff),
        "trajectory": _floats(f.loglik_trajectory),
        "retained_labelled": [bool(v) for v in f.mask.zeta],
        "retained_unlabelled": [bool(v) for v in f.mask.phi],
        "classification_labelled": [int(v) for v in f.labels_labelled],
        "classification_unlabelled": [int(v) for v in f.labels_unlabelled],
    }


def write_artifact(path, document: dict) -> None:
    with open(path, "w") as fh:
        json.dump(document, fh, indent=1, allow_nan=False)
        fh.write("\n")


def _opt(x, default):
    return default if x is None else float(x)


@dataclass
class LoadedModel:
    params: MixtureParams
    document: dict
    class_names: list
    features: list
    labelled_cutoff: float
    unlabelled_cutoff: float


def read_artifact(path) -> LoadedModel:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataParseError(f"cannot read model file {path}: {exc}") from exc
    if doc.get("format") != ARTIFACT_FORMAT:
        raise DataParseError(f"{path} is not a model file of format {ARTIFACT_FORMAT}")
    try:
        cls = doc["classes"]
        covs = tuple(CovarianceDecomposition(np.array(k["orientation"], dtype=float),
                                             np.array(k["eigenvalues"], dtype=float)) for k in cls)
        params = MixtureParams(
            tau=np.array([k["tau"] for k in cls], dtype=float),
            mu=np.array([k["mu"] for k in cls], dtype=float),
            cov=covs,
            model=doc["model"],
            c=_opt(doc["c"], np.inf),
        )
        return LoadedModel(params, doc, [k["name"] for k in cls], list(doc["features"]),
                           _opt(doc["labelled_cutoff"], -np.inf), _opt(doc["unlabelled_cutoff"], -np.inf))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataParseError(f"malformed model file {path}: {exc}") from exc


def mask_from_document(doc: dict) -> TrimMask:
    return TrimMask(np.array(doc["retained_labelled"], dtype=bool), np.array(doc["retained_unlabelled"], dtype=bool),
                    doc["alpha_labelled"], doc["alpha_unlabelled"])

"""Figures for benchmark reports (rendered off-screen to files)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# No software/date stamps, so identical reports give identical files.
_METADATA = {"png": {"Software": None}, "svg": {"Date": None, "Creator": None}, "pdf": {"CreationDate": None, "Creator": None, "Producer": None}}


def plot_error_curves(report, path, metric: str = "error") -> None:
    """Mean error against contamination rate, one line per method, +-1 sd bars."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0), dpi=100)
    offsets = np.linspace(-0.003, 0.003, max(len(report.methods), 1))
    for off, spec in zip(offsets, report.methods):
        rows = [r for r in report.rows if r["method"] == spec.name and r["metric"] == metric]
        eta = np.array([r["eta"] for r in rows]) + (off if len(rows) > 1 else 0.0)
        mean = np.array([r["mean"] for r in rows])
        sd = np.array([r["sd"] for r in rows])
        ax.errorbar(eta, mean, yerr=sd, marker="o", ms=4, capsize=3, lw=1.2, label=spec.name)
    ax.set_xlabel("contamination rate")
    ax.set_ylabel("misclassification error" if metric == "error" else metric)
    ax.set_title(f"{report.study}, B = {report.B}")
    ax.grid(True, alpha=0.3)
    ax.legend(frameon=False)
    fig.tight_layout()
    fmt = str(path).rsplit(".", 1)[-1].lower()
    fig.savefig(path, metadata=_METADATA.get(fmt))
    plt.close(fig)

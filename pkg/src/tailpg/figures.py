"""Matplotlib renderers for experiment artifacts (file output only)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["save_rmse_figure", "save_sweep_figure"]

_STYLE = {"pot": dict(color="tab:blue"), "sa": dict(color="tab:orange", linestyle="--")}


def save_rmse_figure(iterations, columns: dict, path) -> Path:
    """Two-panel RMSE-versus-iteration comparison, one line per estimator.

    ``columns`` maps estimator name to ``(rmse_theta, rmse_j)`` arrays.
    """
    fig, (ax_theta, ax_j) = plt.subplots(1, 2, figsize=(9.0, 3.6), sharex=True)
    for estimator, (rmse_theta, rmse_j) in columns.items():
        style = _STYLE.get(estimator, {})
        ax_theta.plot(iterations, rmse_theta, label=estimator, **style)
        ax_j.plot(iterations, rmse_j, label=estimator, **style)
    ax_theta.set_xlabel("iteration")
    ax_theta.set_ylabel("RMSE of policy")
    ax_j.set_xlabel("iteration")
    ax_j.set_ylabel("RMSE of CVaR estimate")
    ax_j.set_yscale("log")
    ax_theta.legend(frameon=False)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_sweep_figure(thetas, values, path) -> Path:
    """CVaR-versus-policy curve with the empirical argmin highlighted."""
    thetas = np.asarray(thetas)
    values = np.asarray(values)
    best = int(np.argmin(values))
    fig, ax = plt.subplots(figsize=(5.4, 3.6))
    ax.plot(thetas, values, marker="o", markersize=3, color="tab:blue")
    ax.axvline(thetas[best], color="tab:red", linestyle=":",
               label=f"argmin = {thetas[best]:.3f}")
    ax.set_xlabel("policy value")
    ax.set_ylabel("sample-average CVaR")
    ax.legend(frameon=False)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path

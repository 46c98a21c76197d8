"""Matplotlib renderings written next to the CSV/JSON outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "slopehom",  # deterministic element ids
    "svg.fonttype": "none",
}
GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def _figure(width: float = 4.5):
    return plt.subplots(figsize=(width, width * GOLDEN))


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None} if path.suffix == ".svg" else None)
    plt.close(fig)
    return path


def plot_power_curve(result, path, alpha: float = 0.05, title: str | None = None) -> Path:
    with plt.rc_context(RC):
        fig, ax = _figure()
        rate = result.rates["selfnorm"]
        se = result.stderr["selfnorm"]
        ax.plot(result.grid, rate, "k-^", ms=4, lw=1)
        ax.fill_between(result.grid, rate - 2 * se, rate + 2 * se, color="0.85", lw=0)
        ax.axhline(alpha, color="0.6", lw=0.8)
        ax.axvline(0.0, color="0.6", lw=0.8)
        ax.set_xlabel(r"$\epsilon = S_N - \Delta$")
        ax.set_ylabel("rejection rate")
        ax.set_ylim(-0.02, 1.02)
        if title:
            ax.set_title(title)
        return _save(fig, path)


def plot_mse_study(result, path, alpha: float = 0.05) -> Path:
    with plt.rc_context(RC):
        fig, ax = _figure()
        ax.plot(result.grid, result.mse_ind, "k-", lw=1, label=r"MSE$_{ind}$")
        ax.plot(result.grid, result.mse_pool, "k--", lw=1, label=r"MSE$_{pool}$")
        ax.set_xlabel(r"$R^2$")
        ax.set_ylabel("MSE")
        right = ax.twinx()
        right.spines["right"].set_visible(True)
        right.plot(result.grid, result.rates["pesaran"], color="0.55", lw=1.5,
                   label="Swamy/Pesaran rejection")
        right.axhline(alpha, color="0.8", lw=0.8)
        right.set_ylim(-0.02, 1.02)
        right.set_ylabel("rejection rate")
        lines = ax.get_lines() + right.get_lines()[:1]
        ax.legend(lines, [ln.get_label() for ln in lines], frameon=False, loc="center right")
        return _save(fig, path)


def plot_path(path_obj, out) -> Path:
    """Sequential dispersion (raw and bias corrected) against the window fraction."""
    with plt.rc_context(RC):
        fig, ax = _figure()
        k = np.asarray(path_obj.grid.points)
        ax.plot(k, path_obj.s_hat, "k-o", ms=3, lw=1, label="uncorrected")
        ax.plot(k, path_obj.s_tilde, "k--s", ms=3, lw=1, label="bias corrected")
        ax.set_xlabel(r"window fraction $\kappa$")
        ax.set_ylabel("dispersion")
        ax.legend(frameon=False)
        return _save(fig, out)

"""Banded residual autocovariances and the bias correction of the dispersion path."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDenominator, SlopehomError
from .panel import PanelData, validate_window_feasibility
from .sequential import (
    KappaGrid,
    gram_inverse,
    s_hat,
    s_hat_pred,
    unit_slopes,
    unit_sum,
    window_design,
)


class Variant(str, enum.Enum):
    RawSlope = "slope"
    Prediction = "pred"


@dataclass(frozen=True, eq=False)
class HeterogeneityPath:
    """Dispersion estimates along the kappa grid.

    ``bias`` is expressed in the units of ``s_hat`` so that
    ``s_tilde = s_hat - bias`` holds entrywise; ``bias_raw`` keeps the
    unnormalized estimate returned by :func:`bias_hat` / :func:`bias_hat_pred`.
    """

    grid: KappaGrid
    variant: Variant
    s_hat: np.ndarray
    bias: np.ndarray
    s_tilde: np.ndarray
    bias_raw: np.ndarray
    bandwidth: int

    def at(self, kappa: float) -> float:
        return float(self.s_tilde[self.index(kappa)])

    def index(self, kappa: float) -> int:
        for j, k in enumerate(self.grid.points):
            if abs(k - kappa) < 1e-12:
                return j
        raise KeyError(kappa)

    def to_dict(self) -> dict:
        return {
            "variant": self.variant.value,
            "bandwidth": self.bandwidth,
            "kappa": list(self.grid.points),
            "s_hat": self.s_hat.tolist(),
            "bias": self.bias.tolist(),
            "bias_raw": self.bias_raw.tolist(),
            "s_tilde": self.s_tilde.tolist(),
        }


def _residuals(panel: PanelData, kappa: float) -> np.ndarray:
    """Window residuals (N, L) from the full-sample slopes, window-demeaned with intercepts."""
    beta_full = unit_slopes(panel, 1.0).betas
    length = window_design(panel, kappa)[1].shape[1]
    r = panel.y[:, :length] - np.einsum("nlk,nk->nl", panel.x[:, :length, :], beta_full)
    if panel.has_intercepts:
        r = r - r.mean(axis=1, keepdims=True)
    return r


def _autocov_denominators(panel: PanelData, length: int, b: int, kappa: float) -> np.ndarray:
    k = panel.n_regressors
    extra = int(panel.has_intercepts)
    lags = np.arange(b)
    if b and length - (b - 1) - k - extra <= 0:
        raise DegenerateDenominator(
            f"lag {b - 1} leaves no degrees of freedom on a window of length {length}",
            kappa=kappa, lag=b - 1, window=length, K=k,
        )
    return (length - lags - k).astype(float)


def _autocov_lags(r: np.ndarray, b: int) -> np.ndarray:
    """Unnormalized lagged cross products sum_t r_t r_{t+h}, shape (N, b)."""
    length = r.shape[1]
    return np.stack([np.einsum("nt,nt->n", r[:, : length - h], r[:, h:]) for h in range(b)],
                    axis=1) if b else np.zeros((r.shape[0], 0))


def residual_autocov(panel: PanelData, unit: int, kappa: float, h: int) -> float:
    """Lag-h autocovariance estimate of one unit's residuals on the window."""
    r = _residuals(panel, kappa)[unit]
    length = r.shape[0]
    denom = length - h - panel.n_regressors
    if h < 0 or denom - int(panel.has_intercepts) <= 0:
        raise DegenerateDenominator(
            f"lag {h} is not estimable on a window of length {length}",
            kappa=kappa, lag=h, window=length, K=panel.n_regressors,
        )
    return float(r[: length - h] @ r[h:] / denom)


def autocov_table(panel: PanelData, kappa: float, b: int) -> np.ndarray:
    """Autocovariances of every unit for lags 0..b-1, shape (N, b)."""
    r = _residuals(panel, kappa)
    denom = _autocov_denominators(panel, r.shape[1], b, kappa)
    return _autocov_lags(r, b) / denom


def _band_trace_sums(panel: PanelData, kappa: float, b: int, power: int) -> np.ndarray:
    """Per-unit Tr[Sigma_i(kappa, b) H_i] for the kernel H = X (X'X)^-power X'.

    With A = X (X'X)^-1 the kernel is A A' (power 2) or A X' (power 1). The
    trace against the banded Toeplitz matrix only needs the band sums
    sum_t H[t, t+h], each counted twice off the diagonal.
    """
    n = panel.n_units
    if b == 0:
        return np.zeros(n)
    xi = autocov_table(panel, kappa, b)
    x, _ = window_design(panel, kappa)
    a = np.einsum("nlk,nkj->nlj", x, gram_inverse(x, kappa))
    other = a if power == 2 else x
    length = x.shape[1]
    sums = np.stack(
        [np.einsum("nlk,nlk->n", a[:, : length - h, :], other[:, h:, :]) for h in range(b)],
        axis=1,
    )
    weights = np.full(b, 2.0)
    weights[0] = 1.0
    return (xi * sums) @ weights


def _scale(panel: PanelData, kappa: float) -> float:
    return kappa * math.sqrt(panel.n_periods / panel.n_units)


def bias_hat(panel: PanelData, kappa: float, b: int) -> float:
    """Bias estimate ``kappa sqrt(T/N) sum_i Tr[Sigma_i X_i (X_i'X_i)^-2 X_i']``.

    This is on the scale of ``kappa sqrt(NT) (s_hat(kappa) - S_N)``.
    """
    return float(_scale(panel, kappa) * unit_sum(_band_trace_sums(panel, kappa, b, 2)))


def bias_hat_pred(panel: PanelData, kappa: float, b: int) -> float:
    """Prediction-variant bias estimate with the projection kernel X (X'X)^-1 X'."""
    return float(_scale(panel, kappa) * unit_sum(_band_trace_sums(panel, kappa, b, 1)))


def build_path(panel: PanelData, grid: KappaGrid, b: int = 2,
               variant: Variant | str = Variant.RawSlope) -> HeterogeneityPath:
    """Evaluate dispersion, bias and bias-corrected dispersion on every grid point."""
    variant = Variant(variant)
    if b < 0:
        raise ValueError("bandwidth must be nonnegative")
    validate_window_feasibility(panel, grid.points[0])
    n = panel.n_units
    s_vals, bias, raw = [], [], []
    for kappa in grid.points:
        try:
            if variant is Variant.RawSlope:
                s = s_hat(panel, kappa)
                traces = float(unit_sum(_band_trace_sums(panel, kappa, b, 2)))
                corr = traces / n
            else:
                s = s_hat_pred(panel, kappa)
                traces = float(unit_sum(_band_trace_sums(panel, kappa, b, 1)))
                corr = traces / (n * window_design(panel, kappa)[1].shape[1])
        except SlopehomError as exc:
            exc.context.setdefault("kappa", kappa)
            raise
        s_vals.append(s)
        bias.append(corr)
        raw.append(_scale(panel, kappa) * traces)
    s_arr = np.array(s_vals)
    bias_arr = np.array(bias)
    return HeterogeneityPath(
        grid=grid, variant=variant, s_hat=s_arr, bias=bias_arr,
        s_tilde=s_arr - bias_arr, bias_raw=np.array(raw), bandwidth=b,
    )

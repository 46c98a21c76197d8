"""Time-sequential least squares on the windows t = 1..floor(T*kappa).

All per-unit quantities are computed as stacked (N, ...) arrays and reduced
in unit order, so results do not depend on how work is scheduled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import SingularGram, WindowTooSmall
from .panel import PanelData, window_length

#: Gram matrices with a larger eigenvalue ratio are treated as singular.
COND_THRESHOLD = 1e12


@dataclass(frozen=True)
class KappaGrid:
    """Ascending window fractions in [p, 1]; always contains 1."""

    p: float
    points: tuple

    def __post_init__(self):
        pts = tuple(float(k) for k in self.points)
        object.__setattr__(self, "points", pts)
        if not 0.0 < self.p < 1.0:
            raise WindowTooSmall(f"p={self.p} must lie in (0, 1)")
        if any(b <= a for a, b in zip(pts, pts[1:])):
            raise ValueError("grid points must be strictly ascending")
        if not pts or pts[-1] != 1.0:
            raise ValueError("grid must contain the point 1")
        if pts[0] < self.p - 1e-12:
            raise ValueError(f"grid point {pts[0]} lies below p={self.p}")

    @classmethod
    def from_points(cls, points, p: float | None = None) -> KappaGrid:
        pts = sorted(set(float(k) for k in points) | {1.0})
        if p is None:
            p = pts[0] if pts[0] < 1.0 else 0.6
        return cls(p=p, points=tuple(pts))

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True, eq=False)
class SlopeEstimates:
    betas: np.ndarray  # (N, K)
    kappa: float
    window_len: int


def unit_sum(values: np.ndarray) -> np.ndarray:
    """Exactly rounded sum over the leading (unit) axis.

    The result does not depend on the order of the units, so statistics are
    invariant under relabelling to the last bit.
    """
    values = np.asarray(values, dtype=float)
    flat = values.reshape(values.shape[0], -1)
    out = np.array([math.fsum(flat[:, j]) for j in range(flat.shape[1])])
    return out.reshape(values.shape[1:])


def window_design(panel: PanelData, kappa: float) -> tuple[np.ndarray, np.ndarray]:
    """Regressors (N, L, K) and responses (N, L) on the first L = floor(T*kappa) periods.

    With intercepts both are demeaned by their window mean, which is the
    within transformation applied to the window only.
    """
    length = window_length(panel.n_periods, kappa)
    need = panel.n_regressors + int(panel.has_intercepts)
    if length <= need:
        raise WindowTooSmall(
            f"window length {length} at kappa={kappa} must exceed {need}",
            kappa=kappa, window=length, K=panel.n_regressors,
        )
    x = panel.x[:, :length, :]
    y = panel.y[:, :length]
    if panel.has_intercepts:
        x = x - x.mean(axis=1, keepdims=True)
        y = y - y.mean(axis=1, keepdims=True)
    return x, y


def check_gram(gram: np.ndarray, what: str = "unit", kappa: float | None = None) -> None:
    """Raise SingularGram for the first (K, K) matrix in the stack that is ill conditioned."""
    gram = np.asarray(gram)
    stack = gram.reshape(-1, gram.shape[-2], gram.shape[-1])
    eig = np.linalg.eigvalsh(stack)
    top = eig[:, -1]
    bad = (eig[:, 0] <= 0) | (top <= 0) | (eig[:, 0] * COND_THRESHOLD < top)
    if np.any(bad):
        i = int(np.argmax(bad))
        cond = np.inf if eig[i, 0] <= 0 else top[i] / eig[i, 0]
        raise SingularGram(
            f"Gram matrix of {what} {i} is singular or ill conditioned (cond={cond:.3g})",
            unit=i, kappa=kappa, condition=cond,
        )


def gram_inverse(x: np.ndarray, kappa: float | None = None) -> np.ndarray:
    """Stacked inverses of X_i'X_i for x of shape (N, L, K)."""
    gram = np.einsum("nlk,nlj->nkj", x, x)
    check_gram(gram, kappa=kappa)
    eye = np.broadcast_to(np.eye(gram.shape[-1]), gram.shape)
    return np.linalg.solve(gram, eye)


def unit_slopes(panel: PanelData, kappa: float) -> SlopeEstimates:
    """Individual OLS slopes of every unit on the window of fraction kappa."""
    x, y = window_design(panel, kappa)
    gram = np.einsum("nlk,nlj->nkj", x, x)
    check_gram(gram, kappa=kappa)
    xty = np.einsum("nlk,nl->nk", x, y)
    betas = np.linalg.solve(gram, xty[..., None])[..., 0]
    return SlopeEstimates(betas=betas, kappa=kappa, window_len=x.shape[1])


def ols_window(panel: PanelData, unit: int, kappa: float) -> np.ndarray:
    """OLS slope of a single unit on the window t = 1..floor(T*kappa)."""
    return unit_slopes(panel.take_units([unit]), kappa).betas[0]


def mean_group(slopes: SlopeEstimates | np.ndarray) -> np.ndarray:
    betas = slopes.betas if isinstance(slopes, SlopeEstimates) else np.asarray(slopes)
    return unit_sum(betas) / betas.shape[0]


def s_hat(panel: PanelData, kappa: float) -> float:
    """Empirical variance of the window slopes around their mean-group average."""
    betas = unit_slopes(panel, kappa).betas
    dev = betas - mean_group(betas)
    return float(unit_sum(np.sum(dev * dev, axis=1))) / betas.shape[0]


def beta_pred_window(panel: PanelData, kappa: float) -> np.ndarray:
    """Pooled (fixed-effects) slope on the window: (sum X'X)^-1 sum X'y."""
    x, y = window_design(panel, kappa)
    gram = unit_sum(np.einsum("nlk,nlj->nkj", x, x))
    check_gram(gram, what="pooled gram", kappa=kappa)
    return np.linalg.solve(gram, unit_sum(np.einsum("nlk,nl->nk", x, y)))


def s_hat_pred(panel: PanelData, kappa: float) -> float:
    """Prediction dispersion ``sum_i ||X_i (b_i - b_pred)||^2 / (N * L)``, L the window length.

    At kappa = 1 the divisor is N*T. Dividing by the window length rather
    than T keeps every point of the path on the same scale.
    """
    x, y = window_design(panel, kappa)
    gram = np.einsum("nlk,nlj->nkj", x, x)
    check_gram(gram, kappa=kappa)
    xty = np.einsum("nlk,nl->nk", x, y)
    betas = np.linalg.solve(gram, xty[..., None])[..., 0]
    pooled_gram = unit_sum(gram)
    check_gram(pooled_gram, what="pooled gram", kappa=kappa)
    pooled = np.linalg.solve(pooled_gram, unit_sum(xty))
    fit_gap = np.einsum("nlk,nk->nl", x, betas - pooled)
    n, length = y.shape
    return float(unit_sum(np.einsum("nl,nl->n", fit_gap, fit_gap))) / (n * length)


"""Classical tests of exact slope homogeneity (Swamy dispersion, Pesaran standardization)."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .errors import ZeroResidual
from .panel import PanelData, demean_full
from .sequential import check_gram, unit_sum


class Reference(str, enum.Enum):
    SwamyRaw = "swamy"
    PesaranNormal = "pesaran"


@dataclass(frozen=True)
class BaselineResult:
    statistic: float
    reference: Reference
    p_value: float | None = None
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"statistic": self.statistic, "reference": self.reference.value,
                "p_value": self.p_value, **self.meta}


@dataclass(frozen=True, eq=False)
class _FullFit:
    x: np.ndarray
    y: np.ndarray
    betas: np.ndarray
    rss: np.ndarray
    dof: int


def _full_fit(panel: PanelData) -> _FullFit:
    dof = panel.n_periods - panel.n_regressors
    if panel.has_intercepts:
        panel = demean_full(panel)
        dof -= 1
    x, y = panel.x, panel.y
    gram = np.einsum("ntk,ntj->nkj", x, x)
    check_gram(gram, kappa=1.0)
    betas = np.linalg.solve(gram, np.einsum("ntk,nt->nk", x, y)[..., None])[..., 0]
    resid = y - np.einsum("ntk,nk->nt", x, betas)
    rss = np.einsum("nt,nt->n", resid, resid)
    scale = np.maximum(np.einsum("nt,nt->n", y, y), 1.0)
    if np.any(rss <= 1e-24 * scale):
        i = int(np.argmax(rss <= 1e-24 * scale))
        raise ZeroResidual(f"unit {i} is fitted exactly; pooling weights are infinite", unit=i)
    return _FullFit(x=x, y=y, betas=betas, rss=rss, dof=dof)


def _pool(fit: _FullFit) -> np.ndarray:
    w = 1.0 / fit.rss
    gram = unit_sum(np.einsum("n,ntk,ntj->nkj", w, fit.x, fit.x))
    check_gram(gram, what="weighted pooled gram", kappa=1.0)
    return np.linalg.solve(gram, unit_sum(np.einsum("n,ntk,nt->nk", w, fit.x, fit.y)))


def beta_pool(panel: PanelData) -> np.ndarray:
    """Pooled slope weighting each unit by the inverse of its OLS residual sum of squares."""
    return _pool(_full_fit(panel))


def swamy_stat(panel: PanelData) -> float:
    """Swamy's dispersion statistic, averaged over units.

    Each unit contributes ||X_i (b_i - b_pool)||^2 / s_i^2 with
    s_i^2 = RSS_i / (T - K), or T - K - 1 once intercepts are swept out.
    """
    fit = _full_fit(panel)
    pooled = _pool(fit)
    gap = np.einsum("ntk,nk->nt", fit.x, fit.betas - pooled)
    num = np.einsum("nt,nt->n", gap, gap)
    return float(unit_sum(num / (fit.rss / fit.dof))) / num.shape[0]


def pesaran_delta(panel: PanelData) -> BaselineResult:
    """Standardized dispersion sqrt(N)(S - K)/sqrt(2K) with an upper-tail normal p-value."""
    s = swamy_stat(panel)
    k = panel.n_regressors
    stat = math.sqrt(panel.n_units) * (s - k) / math.sqrt(2 * k)
    return BaselineResult(statistic=stat, reference=Reference.PesaranNormal,
                          p_value=float(norm.sf(stat)),
                          meta={"swamy": s, "N": panel.n_units, "K": k})


def swamy_result(panel: PanelData) -> BaselineResult:
    s = swamy_stat(panel)
    return BaselineResult(statistic=s, reference=Reference.SwamyRaw, p_value=None,
                          meta={"N": panel.n_units, "K": panel.n_regressors})

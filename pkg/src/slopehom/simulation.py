"""Data-generating processes, Monte Carlo experiments and the decomposition diagnostic."""

from __future__ import annotations

import csv
import enum
import json
import math
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .baselines import _full_fit, _pool, pesaran_delta
from .bias import Variant, build_path
from .errors import SlopehomError
from .panel import PanelData
from .selfnorm import QuantileTable, WeightMeasure, v_hat
from .sequential import s_hat, window_design, gram_inverse

__all__ = [
    "DgpSpec", "ErrorKind", "SlopeKind", "SimulatedPanel", "SimResult", "TestConfig",
    "gen_regressors", "gen_errors", "gen_slopes", "simulate_panel",
    "decomposition_check", "power_curve", "mse_study", "sym_sqrt", "crossing_point",
]


class ErrorKind(str, enum.Enum):
    Normal = "normal"
    ChiSquared = "chisq"
    IID = "iid"  # i.i.d. standard normal, the pooling example


class SlopeKind(str, enum.Enum):
    UnitBall = "ball"
    Ring = "ring"


@dataclass(frozen=True)
class DgpSpec:
    n_units: int
    n_periods: int
    n_regressors: int = 2
    error_kind: ErrorKind = ErrorKind.Normal
    slope_kind: SlopeKind = SlopeKind.UnitBall
    ring_radius: float = 0.3
    ring_center: tuple = (0.5, 0.5)
    burn_in: int = 100
    rho_range: tuple = (0.05, 0.95)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "error_kind", ErrorKind(self.error_kind))
        object.__setattr__(self, "slope_kind", SlopeKind(self.slope_kind))
        if self.burn_in < 0:
            raise ValueError("burn_in must be nonnegative")
        if self.slope_kind is SlopeKind.Ring and self.n_regressors != 2:
            raise ValueError("ring slopes require K = 2")
        if min(self.n_units, self.n_periods, self.n_regressors) < 1:
            raise ValueError("dimensions must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["error_kind"] = self.error_kind.value
        d["slope_kind"] = self.slope_kind.value
        return d


def sym_sqrt(mat: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Symmetric PSD square root; eigenvalues below tol (relative) are clamped to 0."""
    vals, vecs = np.linalg.eigh(mat)
    cut = tol * max(float(np.abs(vals).max()), 1.0)
    vals = np.where(vals < cut, 0.0, vals)
    return (vecs * np.sqrt(vals)) @ vecs.T


def decay_matrix(n: int) -> np.ndarray:
    """Toeplitz matrix with entries (1 + |i - j|)^-2."""
    d = np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
    return 1.0 / (1.0 + d) ** 2


def regressor_cov(k: int) -> np.ndarray:
    d = np.abs(np.subtract.outer(np.arange(k), np.arange(k)))
    return 0.5 ** d


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


def gen_regressors(spec: DgpSpec, rng=None, rho: np.ndarray | None = None):
    """AR(1) regressors with correlated Gaussian innovations; returns (x, rho)."""
    rng = _rng(spec.seed if rng is None else rng)
    n, t, k = spec.n_units, spec.n_periods, spec.n_regressors
    if rho is None:
        rho = rng.uniform(*spec.rho_range, size=n)
    root = sym_sqrt(regressor_cov(k))
    innov = rng.standard_normal((n, spec.burn_in + t, k)) @ root
    x = np.zeros((n, k))
    out = np.empty((n, t, k))
    for s in range(spec.burn_in + t):
        x = rho[:, None] * x + innov[:, s, :]
        if s >= spec.burn_in:
            out[:, s - spec.burn_in, :] = x
    return out, np.asarray(rho, dtype=float)


def gen_errors(spec: DgpSpec, rng=None, z: np.ndarray | None = None):
    """Model errors with covariance Sigma_N (x) Sigma_T; returns (eps, z).

    ``z`` is None for i.i.d. errors.
    """
    rng = _rng(spec.seed if rng is None else rng)
    n, t = spec.n_units, spec.n_periods
    if spec.error_kind is ErrorKind.IID:
        return rng.standard_normal((n, t)), None
    if z is None:
        z = rng.normal(0.0, math.sqrt(0.5), size=n)
    z = np.asarray(z, dtype=float)
    sigma_n = decay_matrix(n) * np.outer(z, z)
    sigma_t = decay_matrix(t)
    g = rng.standard_normal((n, t))
    eps = sym_sqrt(sigma_n) @ g @ sym_sqrt(sigma_t)
    if spec.error_kind is ErrorKind.ChiSquared:
        second_moment = np.outer(np.diag(sigma_n), np.diag(sigma_t))
        eps = (eps * eps - second_moment) / math.sqrt(2.0)
    return eps, z


def slope_dispersion(beta: np.ndarray) -> float:
    dev = beta - beta.mean(axis=0)
    return float(np.mean(np.sum(dev * dev, axis=1)))


def gen_slopes(spec: DgpSpec, rng=None, zero_noise: bool = False):
    """Unit slopes (N, K) and their realized dispersion S_N."""
    rng = _rng(spec.seed if rng is None else rng)
    n, k = spec.n_units, spec.n_regressors
    if spec.slope_kind is SlopeKind.Ring:
        theta = 2.0 * np.pi * np.arange(1, n + 1) / n
        beta = np.asarray(spec.ring_center) + spec.ring_radius * np.column_stack(
            [np.cos(theta), np.sin(theta)])
    else:
        direction = rng.standard_normal((n, k))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        radius = rng.uniform(size=n) ** (1.0 / k)
        u = direction * radius[:, None]
        if zero_noise:
            u = np.zeros_like(u)
        beta = 1.0 + u
    return beta, slope_dispersion(beta)


@dataclass(frozen=True, eq=False)
class SimulatedPanel:
    panel: PanelData
    beta: np.ndarray
    eps: np.ndarray
    s_n: float
    rho: np.ndarray
    z: np.ndarray | None


def simulate_panel(spec: DgpSpec, seed=None) -> SimulatedPanel:
    """Draw one panel. Regressors, errors and slopes use separate child streams."""
    seed = spec.seed if seed is None else seed
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    r_x, r_e, r_b = (np.random.Generator(np.random.PCG64(s)) for s in ss.spawn(3))
    x, rho = gen_regressors(spec, r_x)
    eps, z = gen_errors(spec, r_e)
    beta, s_n = gen_slopes(spec, r_b)
    y = np.einsum("ntk,nk->nt", x, beta) + eps
    return SimulatedPanel(panel=PanelData(y=y, x=x), beta=beta, eps=eps, s_n=s_n, rho=rho, z=z)


# ---------------------------------------------------------------- decomposition


@dataclass(frozen=True)
class DecompositionRecord:
    kappa: float
    e1: float
    e2: float
    e3: float
    lhs: float
    residual: float


def decomposition_check(panel: PanelData, beta_true: np.ndarray, kappa: float) -> DecompositionRecord:
    """Split kappa sqrt(NT)(S_hat(kappa) - S_N) into its linear, quadratic and cross terms.

    Needs the true slopes; errors are recovered as y - X beta on the window.
    """
    beta_true = np.asarray(beta_true, dtype=float)
    n, t = panel.n_units, panel.n_periods
    x, y = window_design(panel, kappa)
    eps = y - np.einsum("nlk,nk->nl", x, beta_true)
    ginv = gram_inverse(x, kappa)
    # d_i = (X'X)^-1 X' eps_i, the estimation error of unit i
    d = np.einsum("nkj,nlj,nl->nk", ginv, x, eps)
    scale = kappa * math.sqrt(t / n)
    centered = beta_true - beta_true.mean(axis=0)
    e1 = scale * 2.0 * float(np.einsum("nk,nk->", d, centered))
    e2 = scale * float(np.einsum("nk,nk->", d, d))
    total = d.sum(axis=0)
    e3 = -scale * float(total @ total) / n
    lhs = kappa * math.sqrt(n * t) * (s_hat(panel, kappa) - slope_dispersion(beta_true))
    return DecompositionRecord(kappa=kappa, e1=e1, e2=e2, e3=e3, lhs=lhs,
                               residual=lhs - (e1 + e2 + e3))


# ---------------------------------------------------------------- experiments


@dataclass(frozen=True, eq=False)
class TestConfig:
    table: QuantileTable
    alpha: float = 0.05
    bandwidth: int = 2
    variant: Variant = Variant.RawSlope

    __test__ = False

    @property
    def measure(self) -> WeightMeasure:
        return self.table.measure


@dataclass(eq=False)
class SimResult:
    grid_name: str
    grid: np.ndarray
    rates: dict  # method -> (n_grid,) rejection rates
    stderr: dict  # method -> (n_grid,) MC standard errors
    n_reps: int
    n_failed: int = 0
    mse_ind: np.ndarray | None = None
    mse_pool: np.ndarray | None = None
    mse_ind_se: np.ndarray | None = None
    mse_pool_se: np.ndarray | None = None
    manifest: dict = field(default_factory=dict)

    def rows(self) -> list[dict]:
        out = []
        for j, g in enumerate(self.grid):
            row = {self.grid_name: float(g)}
            for m in self.rates:
                row[f"rate_{m}"] = float(self.rates[m][j])
                row[f"se_{m}"] = float(self.stderr[m][j])
            if self.mse_ind is not None:
                row["mse_ind"] = float(self.mse_ind[j])
                row["mse_ind_se"] = float(self.mse_ind_se[j])
                row["mse_pool"] = float(self.mse_pool[j])
                row["mse_pool_se"] = float(self.mse_pool_se[j])
            row["n_reps"] = self.n_reps
            row["n_failed"] = self.n_failed
            out.append(row)
        return out

    def write_csv(self, path) -> Path:
        rows = self.rows()
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            for r in rows:
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
        return path

    def write_manifest(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.manifest, indent=2, sort_keys=True) + "\n")
        return path


def _rep_seed(master: int, rep: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master, spawn_key=(rep,))


def _power_rep(args):
    spec, config, eps_grid, master, rep = args
    sim = simulate_panel(spec, _rep_seed(master, rep))
    try:
        path = build_path(sim.panel, config.measure.grid(), config.bandwidth, config.variant)
        v = v_hat(path, config.measure)
    except SlopehomError:
        return None
    if v == 0.0:
        return None
    s_end = path.at(1.0)
    q = config.table.quantile(1.0 - config.alpha)
    with np.errstate(invalid="ignore"):
        delta = np.maximum(sim.s_n - eps_grid, 0.0)
    w = (s_end - delta) / v
    return w > q


def _map(fn, jobs, n_jobs: int):
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * n_jobs))))
    return [fn(j) for j in jobs]


def _binomial_se(rate: np.ndarray, n: int) -> np.ndarray:
    return np.sqrt(rate * (1.0 - rate) / max(n, 1))


def _manifest(kind: str, **kw) -> dict:
    from . import __version__
    return {"kind": kind, "package_version": __version__, "numpy": np.__version__,
            "python": platform.python_version(), **kw}


def power_curve(spec: DgpSpec, epsilon_grid, n_reps: int, config: TestConfig,
                master_seed: int = 0, n_jobs: int = 1) -> SimResult:
    """Rejection rate of the self-normalized test against eps = S_N - delta.

    Each replication draws a panel, reads off its realized S_N and tests
    delta = max(S_N - eps, 0) for every grid value (one path per replication).
    """
    if n_reps < 1:
        raise ValueError("n_reps must be at least 1")
    grid = np.asarray(epsilon_grid, dtype=float)
    jobs = [(spec, config, grid, master_seed, r) for r in range(n_reps)]
    out = _map(_power_rep, jobs, n_jobs)
    good = [o for o in out if o is not None]
    n_ok = len(good)
    rates = np.mean(good, axis=0) if good else np.full(grid.shape, np.nan)
    return SimResult(
        grid_name="epsilon", grid=grid, rates={"selfnorm": rates},
        stderr={"selfnorm": _binomial_se(rates, n_ok)}, n_reps=n_reps, n_failed=n_reps - n_ok,
        manifest=_manifest(
            "power_curve", spec=spec.to_dict(), epsilon_grid=grid.tolist(), n_reps=n_reps,
            master_seed=master_seed, alpha=config.alpha, bandwidth=config.bandwidth,
            variant=config.variant.value, measure=str(config.measure),
            quantile_table=config.table.key(), delta_rule="delta = max(realized S_N - eps, 0)",
        ),
    )


def _mse_rep(args):
    n, t, r2_grid, alpha, master, rep = args
    base = DgpSpec(n_units=n, n_periods=t, n_regressors=2, error_kind=ErrorKind.IID,
                   slope_kind=SlopeKind.Ring)
    ss = _rep_seed(master, rep)
    r_x, r_e = (np.random.Generator(np.random.PCG64(s)) for s in ss.spawn(2))
    x, _ = gen_regressors(base, r_x)
    eps, _ = gen_errors(base, r_e)
    out = np.empty((len(r2_grid), 3))
    for j, r2 in enumerate(r2_grid):
        spec = DgpSpec(n_units=n, n_periods=t, n_regressors=2, error_kind=ErrorKind.IID,
                       slope_kind=SlopeKind.Ring, ring_radius=math.sqrt(r2))
        beta, _ = gen_slopes(spec)
        panel = PanelData(y=np.einsum("ntk,nk->nt", x, beta) + eps, x=x)
        try:
            fit = _full_fit(panel)
            pooled = _pool(fit)
            res = pesaran_delta(panel)
        except SlopehomError:
            return None
        out[j, 0] = np.mean(np.sum((fit.betas - beta) ** 2, axis=1))
        out[j, 1] = np.mean(np.sum((pooled - beta) ** 2, axis=1))
        out[j, 2] = float(res.p_value < alpha)
    return out


def mse_study(r2_grid, n_reps: int, n_units: int = 50, n_periods: int = 20,
              alpha: float = 0.05, master_seed: int = 0, n_jobs: int = 1) -> SimResult:
    """Individual vs pooled estimation error on ring slopes, plus Swamy/Pesaran power.

    Regressors and errors of replication r are shared across the R^2 grid
    (common random numbers), so the MSE curves are compared on equal draws.
    """
    grid = np.asarray(r2_grid, dtype=float)
    if np.any(grid < 0):
        raise ValueError("R^2 values must be nonnegative")
    jobs = [(n_units, n_periods, tuple(grid), alpha, master_seed, r) for r in range(n_reps)]
    out = [o for o in _map(_mse_rep, jobs, n_jobs) if o is not None]
    n_ok = len(out)
    arr = np.stack(out) if out else np.full((1, grid.size, 3), np.nan)
    mean = arr.mean(axis=0)
    sd = arr.std(axis=0, ddof=1) if n_ok > 1 else np.zeros_like(mean)
    se = sd / math.sqrt(max(n_ok, 1))
    return SimResult(
        grid_name="r2", grid=grid, rates={"pesaran": mean[:, 2]},
        stderr={"pesaran": _binomial_se(mean[:, 2], n_ok)}, n_reps=n_reps,
        n_failed=n_reps - n_ok, mse_ind=mean[:, 0], mse_pool=mean[:, 1],
        mse_ind_se=se[:, 0], mse_pool_se=se[:, 1],
        manifest=_manifest("mse_study", r2_grid=grid.tolist(), n_reps=n_reps, N=n_units,
                           T=n_periods, alpha=alpha, master_seed=master_seed),
    )


def crossing_point(grid: np.ndarray, mse_ind: np.ndarray, mse_pool: np.ndarray) -> float:
    """R^2 where MSE_pool - MSE_ind changes sign, by linear interpolation (nan if none)."""
    diff = np.asarray(mse_pool) - np.asarray(mse_ind)
    for j in range(len(diff) - 1):
        if diff[j] <= 0 < diff[j + 1]:
            return float(grid[j] - diff[j] * (grid[j + 1] - grid[j]) / (diff[j + 1] - diff[j]))
    return float("nan")

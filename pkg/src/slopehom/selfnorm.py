"""Self-normalized test statistic and Monte Carlo quantiles of its pivotal limit.

The limit law is

    W = B(1) / sqrt( sum_j w_j k_j^2 (B(k_j) - k_j B(1))^2 )

for a standard Brownian motion B and the discrete weight measure
{(k_j, w_j)}. Quantile tables are simulated once, stored on disk and reused.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import struct
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

from .bias import HeterogeneityPath, Variant, build_path
from .errors import (
    ChecksumMismatch,
    DegenerateDenominator,
    GridMismatch,
    InvalidMeasure,
    MeasureMismatch,
    VersionMismatch,
)
from .panel import PanelData
from .sequential import KappaGrid

FORMAT_MAGIC = b"SLHQ"
FORMAT_VERSION = 1
#: Paths per RNG stream. Fixed, so the sample never depends on the worker count.
CHUNK_PATHS = 1 << 18

DEFAULT_N_PATHS = 1 << 21
DEFAULT_N_STEPS = 2048


@dataclass(frozen=True)
class WeightMeasure:
    """Discrete probability measure on [p, 1] used in the self-normalizer."""

    support: tuple
    weights: tuple

    def __post_init__(self):
        s = tuple(float(v) for v in self.support)
        w = tuple(float(v) for v in self.weights)
        object.__setattr__(self, "support", s)
        object.__setattr__(self, "weights", w)
        if not s or len(s) != len(w):
            raise InvalidMeasure("support and weights must be non-empty and of equal length")
        if any(b <= a for a, b in zip(s, s[1:])):
            raise InvalidMeasure("support must be strictly ascending")
        if s[0] <= 0.0 or s[-1] > 1.0:
            raise InvalidMeasure("support must lie in (0, 1]")
        if any(v <= 0 for v in w):
            raise InvalidMeasure("weights must be positive")
        if abs(math.fsum(w) - 1.0) > 1e-9:
            raise InvalidMeasure(f"weights sum to {math.fsum(w)}, not 1")
        if s[-1] == 1.0 and w[-1] >= 1.0:
            raise InvalidMeasure("the measure must not concentrate at the point 1")

    @classmethod
    def uniform(cls, points) -> WeightMeasure:
        pts = sorted(float(v) for v in points)
        return cls(tuple(pts), tuple([1.0 / len(pts)] * len(pts)))

    @classmethod
    def default(cls) -> WeightMeasure:
        return cls.uniform([0.6, 0.7, 0.8, 0.9, 1.0])

    @classmethod
    def parse(cls, text: str) -> WeightMeasure:
        """Parse ``"k1:w1,k2:w2,..."``; bare ``"k1,k2,..."`` means uniform weights.

        Weights are rescaled to sum to one.
        """
        items = [t.strip() for t in text.split(",") if t.strip()]
        if not items:
            raise InvalidMeasure("empty measure specification")
        try:
            if all(":" in t for t in items):
                pairs = sorted((float(a), float(b)) for a, b in (t.split(":", 1) for t in items))
                total = math.fsum(b for _, b in pairs)
                if total <= 0:
                    raise InvalidMeasure("weights must be positive")
                return cls(tuple(a for a, _ in pairs), tuple(b / total for _, b in pairs))
            return cls.uniform(float(t) for t in items)
        except ValueError:
            raise InvalidMeasure(f"cannot parse measure {text!r}") from None

    @property
    def p(self) -> float:
        return self.support[0]

    def grid(self) -> KappaGrid:
        return KappaGrid.from_points(self.support, p=self.p)

    def to_strings(self) -> tuple[list[str], list[str]]:
        return [repr(v) for v in self.support], [repr(v) for v in self.weights]

    def __str__(self):
        return ",".join(f"{k:g}:{w:g}" for k, w in zip(self.support, self.weights))


# ---------------------------------------------------------------- statistic


def v_hat(path: HeterogeneityPath, measure: WeightMeasure) -> float:
    """Self-normalizer sqrt( sum_j w_j k_j^4 (S~(k_j) - S~(1))^2 )."""
    try:
        idx = [path.index(k) for k in measure.support]
        end = path.at(1.0)
    except KeyError as exc:
        raise GridMismatch(f"path has no value at kappa={exc.args[0]}") from None
    k = np.asarray(measure.support)
    w = np.asarray(measure.weights)
    diff = path.s_tilde[idx] - end
    top = float(np.max(np.abs(diff)))
    if top == 0.0:
        return 0.0
    # scale first so tiny or huge differences do not underflow/overflow when squared
    diff = diff / top
    return top * float(math.sqrt(np.sum(w * k**4 * diff * diff)))


def w_hat(path: HeterogeneityPath, delta: float, measure: WeightMeasure) -> float:
    """(S~(1) - delta) / V; DegenerateDenominator when the path is flat."""
    v = v_hat(path, measure)
    if v == 0.0:
        raise DegenerateDenominator("self-normalizer is zero: the corrected path is constant")
    return (path.at(1.0) - delta) / v


# ---------------------------------------------------------------- quantiles


@dataclass(frozen=True, eq=False)
class QuantileTable:
    measure: WeightMeasure
    n_paths: int
    n_steps: int
    seed: int
    sample: np.ndarray  # sorted ascending
    n_degenerate: int = 0

    def quantile(self, level: float) -> float:
        return float(np.quantile(self.sample, level))

    def quantiles(self, alphas) -> dict:
        return {a: self.quantile(1.0 - a) for a in alphas}

    def p_value(self, w: float) -> float:
        """Right-tail proportion of the sample that is >= w."""
        n_below = np.searchsorted(self.sample, w, side="left")
        return float((self.sample.size - n_below) / self.sample.size)

    def key(self) -> str:
        return table_key(self.measure, self.n_paths, self.n_steps, self.seed)

    def equals(self, other: QuantileTable) -> bool:
        return (
            self.measure == other.measure
            and (self.n_paths, self.n_steps, self.seed, self.n_degenerate)
            == (other.n_paths, other.n_steps, other.seed, other.n_degenerate)
            and np.array_equal(self.sample, other.sample)
        )


def table_key(measure: WeightMeasure, n_paths: int, n_steps: int, seed: int) -> str:
    support, weights = measure.to_strings()
    blob = json.dumps([support, weights, n_paths, n_steps, seed]).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _grid_indices(measure: WeightMeasure, n_steps: int) -> tuple[np.ndarray, np.ndarray]:
    """Random-walk indices floor(k * n_steps) read for each support point and for 1."""
    idx = np.array([int(math.floor(k * n_steps + 1e-9)) for k in measure.support])
    nodes = np.unique(np.append(idx, n_steps))
    return nodes, np.searchsorted(nodes, idx)


def _w_from_walk(b_nodes: np.ndarray, pos: np.ndarray, measure: WeightMeasure) -> np.ndarray:
    k = np.asarray(measure.support)
    w = np.asarray(measure.weights)
    b1 = b_nodes[:, -1]
    bridge = b_nodes[:, pos] - k * b1[:, None]
    denom = np.sqrt(np.sum(w * k * k * bridge * bridge, axis=1))
    with np.errstate(divide="ignore", invalid="ignore"):
        return b1 / denom, denom


def _simulate_chunk(chunk: int, n: int, measure: WeightMeasure, n_steps: int,
                    seed: int) -> tuple[np.ndarray, int]:
    nodes, pos = _grid_indices(measure, n_steps)
    times = nodes / n_steps
    # Walk increments between read-out nodes are exact normals with
    # variance (number of steps) / n_steps.
    scale = np.sqrt(np.diff(np.concatenate(([0.0], times))))
    ss = np.random.SeedSequence(seed, spawn_key=(chunk,))
    rng = np.random.Generator(np.random.PCG64(ss))
    # Randomly scrambled Sobol points: each draw is still exactly distributed
    # as W, but tail counts fluctuate far less than with iid normals.
    sobol = qmc.Sobol(nodes.size, scramble=True, seed=rng)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)  # partial chunks are not powers of 2
        u = sobol.random(n)
    np.clip(u, 2.0**-60, 1.0 - 2.0**-53, out=u)
    vals, denom = _w_from_walk(np.cumsum(ndtri(u) * scale, axis=1), pos, measure)
    ok = denom > 0
    degenerate = int((~ok).sum())
    vals = vals[ok]
    while vals.size < n:
        walk = np.cumsum(rng.standard_normal((n - vals.size, nodes.size)) * scale, axis=1)
        extra, denom = _w_from_walk(walk, pos, measure)
        degenerate += int((denom <= 0).sum())
        vals = np.concatenate([vals, extra[denom > 0]])
    return vals, degenerate


def simulate_w_sample(measure: WeightMeasure | None = None, n_paths: int = DEFAULT_N_PATHS,
                      n_steps: int = DEFAULT_N_STEPS, seed: int = 0,
                      n_jobs: int = 1) -> QuantileTable:
    """Monte Carlo sample of the pivotal limit W.

    Paths are split into fixed chunks, each with its own counter-derived RNG
    stream, so the sorted sample is bitwise identical for any ``n_jobs``.
    """
    measure = measure or WeightMeasure.default()
    if n_steps < 100:
        raise ValueError("n_steps must be at least 100")
    if n_paths < 1000:
        raise ValueError("n_paths must be at least 1000")
    nodes, _ = _grid_indices(measure, n_steps)
    if nodes.size < 2:
        raise InvalidMeasure("measure support collapses onto the point 1 at this resolution")
    sizes = [min(CHUNK_PATHS, n_paths - s) for s in range(0, n_paths, CHUNK_PATHS)]
    args = [(c, n, measure, n_steps, seed) for c, n in enumerate(sizes)]
    if n_jobs > 1 and len(args) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            parts = list(pool.map(lambda a: _simulate_chunk(*a), args))
    else:
        parts = [_simulate_chunk(*a) for a in args]
    sample = np.sort(np.concatenate([p[0] for p in parts]))
    sample.setflags(write=False)
    return QuantileTable(measure=measure, n_paths=n_paths, n_steps=n_steps, seed=seed,
                         sample=sample, n_degenerate=sum(p[1] for p in parts))


# ---------------------------------------------------------------- persistence
#
# Layout (little endian):
#   4 bytes   magic "SLHQ"
#   uint32    format version
#   uint32    header length H
#   H bytes   UTF-8 JSON header: support/weights as decimal strings,
#             n_paths, n_steps, seed, n_degenerate
#   8*n_paths float64 sorted sample
#   32 bytes  SHA-256 of every preceding byte


def table_to_bytes(table: QuantileTable) -> bytes:
    support, weights = table.measure.to_strings()
    header = json.dumps({
        "support": support, "weights": weights, "n_paths": table.n_paths,
        "n_steps": table.n_steps, "seed": table.seed, "n_degenerate": table.n_degenerate,
    }, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(FORMAT_MAGIC)
    buf.write(struct.pack("<II", FORMAT_VERSION, len(header)))
    buf.write(header)
    buf.write(np.ascontiguousarray(table.sample, dtype="<f8").tobytes())
    body = buf.getvalue()
    return body + hashlib.sha256(body).digest()


def table_from_bytes(data: bytes) -> QuantileTable:
    if len(data) < 44 or data[:4] != FORMAT_MAGIC:
        raise ChecksumMismatch("not a quantile table or file is truncated")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumMismatch("quantile table checksum does not match")
    version, hlen = struct.unpack("<II", body[4:12])
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"table format version {version}, expected {FORMAT_VERSION}")
    header = json.loads(body[12: 12 + hlen].decode("utf-8"))
    sample = np.frombuffer(body[12 + hlen:], dtype="<f8").astype(np.float64)
    if sample.size != header["n_paths"]:
        raise ChecksumMismatch("sample length disagrees with header")
    sample.setflags(write=False)
    measure = WeightMeasure(tuple(float(s) for s in header["support"]),
                            tuple(float(w) for w in header["weights"]))
    return QuantileTable(measure=measure, n_paths=header["n_paths"], n_steps=header["n_steps"],
                         seed=header["seed"], sample=sample,
                         n_degenerate=header.get("n_degenerate", 0))


def save_table(table: QuantileTable, path) -> Path:
    path = Path(path)
    path.write_bytes(table_to_bytes(table))
    return path


def load_table(path) -> QuantileTable:
    return table_from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------- decision


@dataclass(frozen=True, eq=False)
class TestResult:
    variant: Variant
    delta: float
    w_stat: float
    quantile: float
    alpha: float
    reject: bool
    p_value: float
    path: HeterogeneityPath
    v_hat: float
    extra: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class

    def to_dict(self) -> dict:
        return {
            "variant": self.variant.value,
            "delta": self.delta,
            "alpha": self.alpha,
            "w_stat": self.w_stat,
            "quantile": self.quantile,
            "reject": self.reject,
            "p_value": self.p_value,
            "v_hat": self.v_hat,
            "path": self.path.to_dict(),
            **self.extra,
        }


def decide(path: HeterogeneityPath, delta: float, alpha: float, measure: WeightMeasure,
           table: QuantileTable) -> TestResult:
    """Test decision for an already computed path."""
    if table.measure != measure:
        raise MeasureMismatch("quantile table was simulated for a different measure",
                              table_measure=str(table.measure), measure=str(measure))
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    v = v_hat(path, measure)
    w = w_hat(path, delta, measure)
    q = table.quantile(1.0 - alpha)
    return TestResult(variant=path.variant, delta=delta, w_stat=w, quantile=q, alpha=alpha,
                      reject=bool(w > q), p_value=table.p_value(w), path=path, v_hat=v)


def run_test(panel: PanelData, variant: Variant | str = Variant.RawSlope, delta: float = 0.0,
             alpha: float = 0.05, measure: WeightMeasure | None = None, b: int = 2,
             table: QuantileTable | None = None) -> TestResult:
    """Self-normalized test of H0: dispersion <= delta against H1: dispersion > delta."""
    measure = measure or WeightMeasure.default()
    if table is None:
        raise ValueError("a quantile table is required")
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    if table.measure != measure:
        raise MeasureMismatch("quantile table was simulated for a different measure",
                              table_measure=str(table.measure), measure=str(measure))
    path = build_path(panel, measure.grid(), b, variant)
    return decide(path, delta, alpha, measure, table)

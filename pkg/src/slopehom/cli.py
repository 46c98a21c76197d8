"""Command line interface: ``slopehom {test,baselines,quantiles,simulate,mse-study}``."""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import beta_pool, pesaran_delta, swamy_stat
from .bias import Variant
from .errors import ConfigError, MeasureMismatch, QuantileTableMissing, SlopehomError
from .panel import PanelSchema, load_panel_csv, validate_window_feasibility
from .selfnorm import (
    DEFAULT_N_PATHS,
    DEFAULT_N_STEPS,
    WeightMeasure,
    load_table,
    run_test,
    save_table,
    simulate_w_sample,
    table_key,
)
from .sequential import beta_pred_window, mean_group, unit_slopes

DEFAULT_NU = "0.6:0.2,0.7:0.2,0.8:0.2,0.9:0.2,1.0:0.2"


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}")


def _cache_dir(args) -> Path:
    if getattr(args, "cache_dir", None):
        return Path(args.cache_dir)
    base = os.environ.get("XDG_CACHE_HOME") or Path.home() / ".cache"
    return Path(base) / "slopehom"


# ---------------------------------------------------------------- shared options


def _add_panel_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--csv", required=True, help="long-format panel file")
    p.add_argument("--schema", help="JSON file (or inline JSON) with the column mapping")
    p.add_argument("--unit-col", default="unit")
    p.add_argument("--time-col", default="time")
    p.add_argument("--response", default="y")
    p.add_argument("--regressors", help="comma separated regressor columns")
    p.add_argument("--log", action="store_true", help="take natural logs of all variables")
    p.add_argument("--intercepts", action="store_true",
                   help="include unit-specific intercepts (removed by demeaning)")
    p.add_argument("--json", action="store_true", help="print the report as JSON")
    p.add_argument("--out", help="directory for report files and figures")


def _add_quantile_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--nu", default=DEFAULT_NU, help='weight measure "k1:w1,k2:w2,..."')
    p.add_argument("--quantile-table", help="quantile table file")
    p.add_argument("--simulate-quantiles", action="store_true",
                   help="simulate the quantile table if it is not available")
    p.add_argument("--n-paths", type=int, default=DEFAULT_N_PATHS)
    p.add_argument("--n-steps", type=int, default=DEFAULT_N_STEPS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cache-dir", help="quantile table cache (default ~/.cache/slopehom)")


def _schema(args) -> PanelSchema:
    if args.schema:
        text = args.schema
        if not text.lstrip().startswith("{"):
            text = Path(text).read_text()
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"schema is not valid JSON: {exc}") from None
        if args.log:
            d["log_transform"] = True
        return PanelSchema.from_dict(d)
    if not args.regressors:
        raise ConfigError("either --schema or --regressors is required")
    return PanelSchema(args.unit_col, args.time_col, args.response,
                       tuple(c.strip() for c in args.regressors.split(",")), args.log)


def _load_panel(args):
    return load_panel_csv(args.csv, _schema(args), has_intercepts=args.intercepts)


def _measure(args) -> WeightMeasure:
    return WeightMeasure.parse(args.nu)


def _obtain_table(args, measure: WeightMeasure):
    """Load the requested quantile table; simulate only when explicitly allowed."""
    if args.quantile_table:
        path = Path(args.quantile_table)
    else:
        path = _cache_dir(args) / f"w_{table_key(measure, args.n_paths, args.n_steps, args.seed)}.slq"
    if path.exists():
        table = load_table(path)
        if table.measure != measure:
            raise MeasureMismatch(f"{path} was simulated for measure {table.measure}, "
                                  f"not {measure}")
        return table
    if not args.simulate_quantiles:
        raise QuantileTableMissing(
            f"no quantile table at {path}; run `slopehom quantiles` or pass --simulate-quantiles",
            path=str(path))
    table = simulate_w_sample(measure, args.n_paths, args.n_steps, args.seed)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_table(table, path)
    return table


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_default)


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o))


def _outdir(args) -> Path | None:
    if not getattr(args, "out", None):
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- commands


def cmd_test(args) -> int:
    panel = _load_panel(args)
    measure = _measure(args)
    if args.delta < 0:
        raise ConfigError("--delta must be nonnegative")
    if not 0 < args.alpha < 1:
        raise ConfigError("--alpha must lie in (0, 1)")
    if args.band < 0:
        raise ConfigError("--band must be nonnegative")
    validate_window_feasibility(panel, measure.p)
    table = _obtain_table(args, measure)
    variant = Variant(args.variant)
    res = run_test(panel, variant, args.delta, args.alpha, measure, args.band, table)
    report = {
        "command": "test",
        "version": __version__,
        "N": panel.n_units,
        "T": panel.n_periods,
        "K": panel.n_regressors,
        "intercepts": panel.has_intercepts,
        "regressors": list(panel.regressor_names),
        "bandwidth": args.band,
        "measure": {"support": list(measure.support), "weights": list(measure.weights)},
        "quantile_table": {"key": table.key(), "n_paths": table.n_paths,
                           "n_steps": table.n_steps, "seed": table.seed},
        "beta_mean_group": mean_group(unit_slopes(panel, 1.0)).tolist(),
        "beta_pred": beta_pred_window(panel, 1.0).tolist(),
        "decision": "reject" if res.reject else "fail to reject",
        **res.to_dict(),
    }
    out = _outdir(args)
    if out:
        (out / "report.json").write_text(_dump(report) + "\n")
        _write_path_csv(res.path, out / "path.csv")
        from .plotting import plot_path
        plot_path(res.path, out / "path.svg")
    if args.json:
        print(_dump(report))
    else:
        _print_test_report(report)
    return 0


def _write_path_csv(path_obj, dest: Path) -> None:
    d = path_obj.to_dict()
    lines = ["kappa,s_hat,bias,s_tilde"]
    for row in zip(d["kappa"], d["s_hat"], d["bias"], d["s_tilde"]):
        lines.append(",".join(repr(float(v)) for v in row))
    dest.write_text("\n".join(lines) + "\n")


def _fmt_vec(v) -> str:
    return "(" + ", ".join(f"{x:.4f}" for x in v) + ")"


def _print_test_report(r: dict) -> None:
    label = "raw slopes" if r["variant"] == "slope" else "prediction"
    print(f"Approximate slope homogeneity test ({label})")
    print(f"  N={r['N']}  T={r['T']}  K={r['K']}  intercepts={r['intercepts']}  b={r['bandwidth']}")
    print(f"  mean-group slope     {_fmt_vec(r['beta_mean_group'])}")
    print(f"  fixed-effect slope   {_fmt_vec(r['beta_pred'])}")
    print("  kappa     S_hat        bias         S_tilde")
    p = r["path"]
    for k, s, b, st in zip(p["kappa"], p["s_hat"], p["bias"], p["s_tilde"]):
        print(f"  {k:5.3f}  {s:11.6g}  {b:11.6g}  {st:11.6g}")
    print(f"  V_hat = {r['v_hat']:.6g}   W_hat = {r['w_stat']:.4f}")
    print(f"  q_(1-{r['alpha']:g}) = {r['quantile']:.4f}   p-value = {r['p_value']:.4f}")
    print(f"  delta = {r['delta']:g}: {r['decision']} approximate homogeneity")


def cmd_baselines(args) -> int:
    panel = _load_panel(args)
    pes = pesaran_delta(panel)
    report = {
        "command": "baselines",
        "version": __version__,
        "N": panel.n_units,
        "T": panel.n_periods,
        "K": panel.n_regressors,
        "intercepts": panel.has_intercepts,
        "swamy": swamy_stat(panel),
        "pesaran_statistic": pes.statistic,
        "pesaran_p_value": pes.p_value,
        "beta_pool": beta_pool(panel).tolist(),
    }
    out = _outdir(args)
    if out:
        (out / "baselines.json").write_text(_dump(report) + "\n")
    if args.json:
        print(_dump(report))
    else:
        print("Exact slope homogeneity baselines")
        print(f"  Swamy statistic      {report['swamy']:.6g}")
        print(f"  Pesaran statistic    {pes.statistic:.4f}  (p = {pes.p_value:.4g})")
        print(f"  pooled slope         {_fmt_vec(report['beta_pool'])}")
    return 0


def cmd_quantiles(args) -> int:
    measure = _measure(args)
    alphas = args.alphas or [0.1, 0.05, 0.01]
    table = simulate_w_sample(measure, args.n_paths, args.n_steps, args.seed, n_jobs=args.jobs)
    path = Path(args.out) if args.out else (
        _cache_dir(args) / f"w_{table.key()}.slq")
    path.parent.mkdir(parents=True, exist_ok=True)
    save_table(table, path)
    digest = hashlib.sha256(path.read_bytes()).hexdigest()
    report = {
        "command": "quantiles",
        "path": str(path),
        "key": table.key(),
        "sha256": digest,
        "n_paths": table.n_paths,
        "n_steps": table.n_steps,
        "seed": table.seed,
        "n_degenerate": table.n_degenerate,
        "quantiles": {f"{1 - a:g}": table.quantile(1 - a) for a in alphas},
    }
    if args.json:
        print(_dump(report))
    else:
        print(f"wrote {path}  (sha256 {digest[:16]}...)")
        for a in alphas:
            print(f"  q_{1 - a:g} = {table.quantile(1 - a):.4f}")
    return 0


def _test_config(args):
    from .simulation import TestConfig
    measure = _measure(args)
    return TestConfig(table=_obtain_table(args, measure), alpha=args.alpha, bandwidth=args.band,
                      variant=Variant(args.variant))


def cmd_simulate(args) -> int:
    from .simulation import DgpSpec, power_curve
    spec = DgpSpec(n_units=args.n_units, n_periods=args.n_periods, n_regressors=args.k,
                   error_kind=args.errors)
    if args.reps < 1:
        raise ConfigError("--reps must be positive")
    config = _test_config(args)
    res = power_curve(spec, args.eps_grid, args.reps, config, master_seed=args.seed,
                      n_jobs=args.jobs)
    return _finish_sim(args, res, "power")


def cmd_mse_study(args) -> int:
    from .simulation import mse_study
    if args.reps < 2:
        raise ConfigError("--reps must be at least 2")
    res = mse_study(args.r2_grid, args.reps, args.n_units, args.n_periods, alpha=args.alpha,
                    master_seed=args.seed, n_jobs=args.jobs)
    return _finish_sim(args, res, "mse")


def _finish_sim(args, res, stem: str) -> int:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    res.write_csv(out / f"{stem}.csv")
    res.write_manifest(out / f"{stem}_manifest.json")
    if not args.no_plot:
        from . import plotting
        if stem == "power":
            plotting.plot_power_curve(res, out / f"{stem}.svg", alpha=args.alpha)
        else:
            plotting.plot_mse_study(res, out / f"{stem}.svg", alpha=args.alpha)
    if args.json:
        print(_dump({"command": stem, "rows": res.rows(), "n_failed": res.n_failed}))
    else:
        for row in res.rows():
            print("  ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}"
                            for k, v in row.items()))
        print(f"wrote {out / (stem + '.csv')}")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="slopehom", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("test", help="self-normalized test of approximate slope homogeneity")
    _add_panel_args(p)
    _add_quantile_args(p)
    p.add_argument("--delta", type=float, default=0.0)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--band", type=int, default=2, help="autocovariance bandwidth b")
    p.add_argument("--variant", choices=["slope", "pred"], default="slope")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("baselines", help="Swamy and Pesaran tests of exact homogeneity")
    _add_panel_args(p)
    p.set_defaults(func=cmd_baselines)

    p = sub.add_parser("quantiles", help="simulate and store a quantile table")
    p.add_argument("--nu", default=DEFAULT_NU)
    p.add_argument("--n-paths", type=int, default=DEFAULT_N_PATHS)
    p.add_argument("--n-steps", type=int, default=DEFAULT_N_STEPS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alphas", type=_floats)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", help="output file (default: cache directory)")
    p.add_argument("--cache-dir")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_quantiles)

    for name, func in (("simulate", cmd_simulate), ("mse-study", cmd_mse_study)):
        p = sub.add_parser(name)
        p.add_argument("--n-units", "-N", type=int, default=20 if name == "simulate" else 50)
        p.add_argument("--n-periods", "-T", type=int, default=100 if name == "simulate" else 20)
        p.add_argument("--reps", type=int, default=1000)
        p.add_argument("--alpha", type=float, default=0.05)
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--out", help="output directory (default: current directory)")
        p.add_argument("--no-plot", action="store_true")
        p.add_argument("--json", action="store_true")
        p.set_defaults(func=func)
        if name == "simulate":
            p.help = "power curve of the self-normalized test"
            p.add_argument("--k", type=int, default=2)
            p.add_argument("--errors", choices=["normal", "chisq"], default="normal")
            p.add_argument("--eps-grid", type=_floats,
                           default=[-0.2, -0.1, 0.0, 0.05, 0.1, 0.15, 0.2, 0.3])
            p.add_argument("--band", type=int, default=2)
            p.add_argument("--variant", choices=["slope", "pred"], default="slope")
            _add_quantile_args(p)
            p.set_defaults(seed=0)
        else:
            p.add_argument("--r2-grid", type=_floats,
                           default=[0.0, 0.01, 0.02, 0.04, 0.06, 0.09, 0.12, 0.15])
            p.add_argument("--seed", type=int, default=0)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SlopehomError as exc:
        print(json.dumps(exc.to_dict(), sort_keys=True), file=sys.stderr)
        return exc.exit_status
    except (ValueError, OSError) as exc:
        err = ConfigError(str(exc))
        print(json.dumps(err.to_dict(), sort_keys=True), file=sys.stderr)
        return err.exit_status


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface: data ingestion, fitting, prediction,
scenario replication, and weight inspection.

Reports are machine-readable (JSON for fits, CSV for predictions and
scenario studies); plotting is deliberately left to external tools.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import re
import sys
from dataclasses import dataclass, field

import numpy as np

from . import estimation, scenarios
from .errors import DataFormatError, PairpoisError
from .model import CountSeries, Params, make_weights
from .simulate import SimConfig, predict, simulate_series

SCHEMA_VERSION = 1
EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 3

_MONTH_RE = re.compile(r"^(\d{4})-(\d{2})$")
_RESTRICTIONS = {"none": None, "phi0": estimation.PHI_ZERO, "indep": estimation.INDEPENDENCE}


# ---------------------------------------------------------------------------
# months and CSV ingestion


def month_to_ordinal(text: str) -> int:
    m = _MONTH_RE.match(text)
    if not m:
        raise ValueError(f"expected a YYYY-MM month, got {text!r}")
    year, month = int(m.group(1)), int(m.group(2))
    if not 1 <= month <= 12:
        raise ValueError(f"month out of range in {text!r}")
    return year * 12 + (month - 1)


def ordinal_to_month(o: int) -> str:
    return f"{o // 12:04d}-{o % 12 + 1:02d}"


@dataclass
class ParsedData:
    months: list[str]
    counts: np.ndarray
    covariates: dict[str, np.ndarray]

    @property
    def n(self) -> int:
        return len(self.months)


def read_count_csv(path: str) -> ParsedData:
    """Read a monthly count CSV (columns: date, count, optional covariates).

    Months must be consecutive with no gaps or duplicates; counts must
    parse as non-negative integers.  Violations raise
    :class:`DataFormatError` naming the offending line.
    """
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        if len(header) < 2 or header[0] != "date" or header[1] != "count":
            raise DataFormatError(
                f"{path}: line 1: header must start with 'date,count', got {','.join(header)!r}"
            )
        cov_names = header[2:]

        months: list[str] = []
        counts: list[int] = []
        cov_values: list[list[float]] = []
        prev_ord: int | None = None
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise DataFormatError(
                    f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}"
                )
            date = row[0].strip()
            try:
                cur = month_to_ordinal(date)
            except ValueError as err:
                raise DataFormatError(f"{path}: line {lineno}: {err}") from None
            if prev_ord is not None:
                if cur == prev_ord:
                    raise DataFormatError(f"{path}: line {lineno}: duplicate date {date}")
                if cur < prev_ord:
                    raise DataFormatError(f"{path}: line {lineno}: dates out of order at {date}")
                if cur > prev_ord + 1:
                    raise DataFormatError(
                        f"{path}: line {lineno}: gap in months before {date} "
                        f"(expected {ordinal_to_month(prev_ord + 1)})"
                    )
            prev_ord = cur

            raw_count = row[1].strip()
            try:
                value = int(raw_count)
            except ValueError:
                raise DataFormatError(
                    f"{path}: line {lineno}: count {raw_count!r} is not an integer"
                ) from None
            if value < 0:
                raise DataFormatError(f"{path}: line {lineno}: negative count {value}")

            covs = []
            for name, cell in zip(cov_names, row[2:]):
                try:
                    covs.append(float(cell))
                except ValueError:
                    raise DataFormatError(
                        f"{path}: line {lineno}: covariate {name!r} value {cell!r} is not numeric"
                    ) from None

            months.append(date)
            counts.append(value)
            cov_values.append(covs)

    if not months:
        raise DataFormatError(f"{path}: no data rows")
    cov_arr = np.asarray(cov_values, dtype=float) if cov_names else np.empty((len(months), 0))
    covariates = {name: cov_arr[:, i] for i, name in enumerate(cov_names)}
    return ParsedData(months=months, counts=np.asarray(counts, dtype=np.int64), covariates=covariates)


# ---------------------------------------------------------------------------
# model specification and design matrices


@dataclass
class ModelSpec:
    """Formula terms plus fitting controls for the CLI surface."""

    trend: bool = False
    harmonics: bool = False
    period: int = 12
    level_shift: str | None = None
    covariates: tuple[str, ...] = ()
    d: int = 1
    scheme: str = "rectangular"
    quad_order: int = 20
    restriction: str | None = None
    hac_lags: int | None = None

    def to_json(self) -> dict:
        return {
            "trend": self.trend,
            "harmonics": self.harmonics,
            "period": self.period,
            "level_shift": self.level_shift,
            "covariates": list(self.covariates),
            "d": self.d,
            "scheme": self.scheme,
            "quad_order": self.quad_order,
            "restriction": self.restriction,
            "hac_lags": self.hac_lags,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ModelSpec":
        return cls(
            trend=obj["trend"],
            harmonics=obj["harmonics"],
            period=obj["period"],
            level_shift=obj["level_shift"],
            covariates=tuple(obj["covariates"]),
            d=obj["d"],
            scheme=obj["scheme"],
            quad_order=obj["quad_order"],
            restriction=obj["restriction"],
            hac_lags=obj["hac_lags"],
        )


def build_design(
    spec: ModelSpec,
    months: list[str],
    n_train: int,
    covariates: dict[str, np.ndarray] | None = None,
) -> tuple[np.ndarray, list[str]]:
    """Design matrix over ``months`` (which may extend past training).

    Time is 1-based over the given months; the trend term is t / n_train
    with the scale frozen at the training length, so horizons extend it
    past one.  The level-shift indicator is one strictly before the
    shift month and zero from it onward.
    """
    n = len(months)
    t = np.arange(1, n + 1, dtype=float)
    cols = [np.ones(n)]
    names = ["intercept"]
    if spec.trend:
        cols.append(t / n_train)
        names.append("trend")
    if spec.harmonics:
        cols.append(np.sin(2.0 * math.pi * t / spec.period))
        cols.append(np.cos(2.0 * math.pi * t / spec.period))
        names.extend(["sin", "cos"])
    if spec.level_shift is not None:
        shift = month_to_ordinal(spec.level_shift)
        ords = np.array([month_to_ordinal(m) for m in months])
        cols.append((ords < shift).astype(float))
        names.append(f"before_{spec.level_shift}")
    for name in spec.covariates:
        if covariates is None or name not in covariates:
            raise DataFormatError(f"covariate column {name!r} not available")
        values = covariates[name]
        if values.shape[0] != n:
            raise DataFormatError(
                f"covariate column {name!r} covers {values.shape[0]} months, need {n} "
                "(supply a future-covariate file for prediction horizons)"
            )
        cols.append(values)
        names.append(name)
    return np.column_stack(cols), names


def _nan_to_none(values) -> list:
    return [None if (isinstance(v, float) and math.isnan(v)) else v for v in values]


def _fit_to_report(
    data_path: str,
    spec: ModelSpec,
    months_train: list[str],
    result: estimation.FitResult,
    coef_names: list[str],
    X_train: np.ndarray,
    dispersion: dict,
    holdout_months: int,
    n_total: int,
) -> dict:
    p = result.params_hat
    se = result.se
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "fit_report",
        "data_path": data_path,
        "n_total": n_total,
        "n_train": len(months_train),
        "holdout_months": holdout_months,
        "start_month": months_train[0],
        "model": spec.to_json(),
        "coef_names": coef_names,
        "estimates": {
            "beta": [float(b) for b in p.beta],
            "sigma2": p.sigma2,
            "phi": p.phi,
            "tau2": p.tau2,
        },
        "working": [float(v) for v in result.working_hat.as_vector()],
        "se": {
            "beta": _nan_to_none([float(s) for s in se[: p.n_coef]]),
            "sigma2": _nan_to_none([float(se[p.n_coef])])[0],
            "phi": _nan_to_none([float(se[p.n_coef + 1])])[0],
            "tau2": _nan_to_none([float(se[p.n_coef + 2])])[0],
        },
        "loglik": result.loglik,
        "clic": result.clic,
        "converged": bool(result.converged),
        "iterations": result.iterations,
        "hac_lags_used": result.hac_lags,
        "weights": {
            "d": result.weights.d,
            "scheme": result.weights.scheme,
            "m_d": result.weights.m_d,
            "values": [float(w) for w in result.weights.w],
        },
        "dispersion_index": dispersion,
        "matrices": {
            "H": result.H_hat.tolist(),
            "J": result.J_hat.tolist(),
            "godambe": result.godambe.tolist(),
        },
        "X_train": X_train.tolist(),
    }


def _print_fit_table(result: estimation.FitResult, coef_names: list[str], dispersion: dict) -> None:
    p = result.params_hat
    print(
        f"weighted pairwise likelihood fit "
        f"(d={result.weights.d}, {result.weights.scheme}, {result.quad_order} nodes)"
    )
    status = "converged" if result.converged else "NOT CONVERGED"
    print(f"{status} after {result.iterations} iterations; "
          f"loglik = {result.loglik:.4f}; CLIC = {result.clic:.4f}; "
          f"HAC lags r = {result.hac_lags}")
    if result.restriction:
        print(f"restriction: {result.restriction}")
    print()
    print(f"{'parameter':<16}{'estimate':>12}{'std. error':>12}")
    rows = list(zip(coef_names, p.beta, result.se[: p.n_coef]))
    rows += [
        ("sigma2", p.sigma2, result.se[p.n_coef]),
        ("phi", p.phi, result.se[p.n_coef + 1]),
        ("tau2", p.tau2, result.se[p.n_coef + 2]),
    ]
    for name, est, se in rows:
        se_txt = f"{se:>12.4f}" if np.isfinite(se) else f"{'--':>12}"
        print(f"{name:<16}{est:>12.4f}{se_txt}")
    print()
    print(
        "dispersion index D_t (preliminary): "
        f"min {dispersion['min']:.2f}, median {dispersion['median']:.2f}, "
        f"max {dispersion['max']:.2f}"
    )


# ---------------------------------------------------------------------------
# subcommands


def cmd_fit(args) -> int:
    data = read_count_csv(args.data)
    holdout = args.holdout_months
    if holdout < 0 or holdout >= data.n:
        raise DataFormatError(f"holdout of {holdout} months leaves no training data")
    n_train = data.n - holdout
    months_train = data.months[:n_train]

    spec = ModelSpec(
        trend=args.trend,
        harmonics=args.harmonics,
        period=args.period,
        level_shift=args.level_shift,
        covariates=tuple(args.covariates.split(",")) if args.covariates else (),
        d=args.order,
        scheme=args.weights,
        quad_order=args.nodes,
        restriction=_RESTRICTIONS[args.restriction],
        hac_lags=args.hac_lags,
    )
    if spec.level_shift is not None:
        shift = month_to_ordinal(spec.level_shift)
        if not (month_to_ordinal(months_train[0]) < shift <= month_to_ordinal(months_train[-1])):
            raise DataFormatError(
                f"level-shift month {spec.level_shift} must fall inside the training window"
            )

    covs_train = {k: v[:n_train] for k, v in data.covariates.items()}
    X, coef_names = build_design(spec, months_train, n_train, covs_train)
    series = CountSeries(y=data.counts[:n_train], X=X, t_index=np.asarray(months_train))

    start = estimation.moment_init(series)
    mu = np.exp(series.X @ start.beta + 0.5 * start.tau2)
    d_t = mu * math.expm1(start.tau2)
    dispersion = {
        "min": float(d_t.min()),
        "median": float(np.median(d_t)),
        "max": float(d_t.max()),
    }

    weights = make_weights(spec.d, spec.scheme)
    if spec.restriction is None:
        result = estimation.fit(
            series, weights, quad_order=spec.quad_order, init=start,
            hac_lags=spec.hac_lags, max_iter=args.max_iter,
        )
    else:
        result = estimation.fit_restricted(
            series, weights, quad_order=spec.quad_order, restriction=spec.restriction,
            init=start, hac_lags=spec.hac_lags, max_iter=args.max_iter,
        )

    report = _fit_to_report(
        args.data, spec, months_train, result, coef_names, X, dispersion, holdout, data.n
    )
    with open(args.output, "w") as handle:
        json.dump(report, handle, indent=2)
        handle.write("\n")
    _print_fit_table(result, coef_names, dispersion)
    print(f"report written to {args.output}")
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def _result_from_report(report: dict) -> tuple[estimation.FitResult, ModelSpec]:
    spec = ModelSpec.from_json(report["model"])
    est = report["estimates"]
    params = Params(beta=np.asarray(est["beta"]), sigma2=est["sigma2"], phi=est["phi"])
    weights = make_weights(spec.d, spec.scheme)
    h = np.asarray(report["matrices"]["H"])
    j = np.asarray(report["matrices"]["J"])
    godambe = np.asarray(report["matrices"]["godambe"])
    se_block = report["se"]
    to_nan = lambda v: math.nan if v is None else float(v)
    se = np.array(
        [to_nan(v) for v in se_block["beta"]]
        + [to_nan(se_block["sigma2"]), to_nan(se_block["phi"]), to_nan(se_block["tau2"])]
    )
    result = estimation.FitResult(
        params_hat=params,
        working_hat=params.to_working(),
        loglik=report["loglik"],
        H_hat=h,
        J_hat=j,
        godambe=godambe,
        se=se,
        clic=report["clic"],
        iterations=report["iterations"],
        converged=report["converged"],
        quad_order=spec.quad_order,
        weights=weights,
        hac_lags=report["hac_lags_used"],
        restriction=spec.restriction,
    )
    return result, spec


def cmd_predict(args) -> int:
    with open(args.report) as handle:
        report = json.load(handle)
    if report.get("kind") != "fit_report":
        raise DataFormatError(f"{args.report}: not a fit report")
    result, spec = _result_from_report(report)

    n_train = report["n_train"]
    start_ord = month_to_ordinal(report["start_month"])
    horizon = args.horizon_months
    months_all = [ordinal_to_month(start_ord + k) for k in range(n_train + horizon)]

    observed = {}
    covariates_all = None
    if args.data:
        data = read_count_csv(args.data)
        observed = dict(zip(data.months, data.counts.tolist()))
        covariates_all = data.covariates
    if spec.covariates and horizon > 0:
        future = None
        if args.future_covariates:
            future = read_count_csv_covariates(args.future_covariates, spec.covariates)
        covariates_all = _extend_covariates(
            spec, months_all, n_train, covariates_all, future, args
        )
    elif spec.covariates:
        if covariates_all is None:
            raise DataFormatError(
                "the model uses covariate columns; pass --data to supply them"
            )
        covariates_all = {k: v[:n_train] for k, v in covariates_all.items()}

    X_all, _ = build_design(spec, months_all, n_train, covariates_all)
    band = predict(result, None, n_sim=args.n_sim, seed=args.seed, X_insample=X_all)

    with open(args.output, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["date", "point", "upper95", "observed", "exceeds"])
        for idx, month in enumerate(months_all):
            obs = observed.get(month, "")
            exceeds = ""
            if obs != "":
                exceeds = "true" if obs > band.upper95[idx] else "false"
            writer.writerow(
                [month, repr(float(band.point[idx])), int(band.upper95[idx]), obs, exceeds]
            )
    print(f"prediction band written to {args.output}")
    return EXIT_OK


def read_count_csv_covariates(path: str, names: tuple[str, ...]) -> dict[str, np.ndarray]:
    """Covariate rows for a prediction horizon, keyed by month."""
    data = read_count_csv(path)
    missing = [n for n in names if n not in data.covariates]
    if missing:
        raise DataFormatError(f"{path}: missing future covariate columns {missing}")
    return {"__months__": np.asarray(data.months), **data.covariates}


def _extend_covariates(spec, months_all, n_train, covariates_all, future, args):
    if covariates_all is None:
        raise DataFormatError("the model uses covariate columns; pass --data to supply them")
    if future is None:
        raise DataFormatError(
            "the model uses covariate columns whose future values are unknown; "
            "pass --future-covariates with one row per horizon month"
        )
    months_future = months_all[n_train:]
    future_months = list(future["__months__"])
    out = {}
    for name in spec.covariates:
        base = covariates_all[name][:n_train]
        idx = []
        for m in months_future:
            if m not in future_months:
                raise DataFormatError(
                    f"{args.future_covariates}: no covariate row for horizon month {m}"
                )
            idx.append(future_months.index(m))
        out[name] = np.concatenate([base, future[name][idx]])
    return out


def cmd_simulate(args) -> int:
    if args.scenario is not None:
        params = scenarios.SCENARIOS[args.scenario].params
    else:
        if args.beta is None or args.sigma2 is None or args.phi is None:
            raise DataFormatError("either --scenario or all of --beta/--sigma2/--phi are required")
        params = Params(beta=np.array([args.beta]), sigma2=args.sigma2, phi=args.phi)
    X = np.ones((args.n, 1))
    series = simulate_series(SimConfig(params=params, X=X, n_rep=1, seed=args.seed))
    start_ord = month_to_ordinal(args.start)
    with open(args.output, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["date", "count"])
        for k, value in enumerate(series.y):
            writer.writerow([ordinal_to_month(start_ord + k), int(value)])
    print(f"simulated series written to {args.output}")
    return EXIT_OK


def cmd_scenarios(args) -> int:
    ids = [int(s) for s in args.ids.split(",")]
    d_values = [int(s) for s in args.orders.split(",")]
    schemes = args.schemes.split(",")
    orders = [int(s) for s in args.nodes.split(",")]
    rows, _ = scenarios.run_scenario_study(
        ids, args.n_series, args.n_len, d_values, schemes, orders, args.seed
    )
    fieldnames = list(rows[0].keys())
    with open(args.output, "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    print(f"scenario study written to {args.output}")
    return EXIT_OK


def cmd_weights(args) -> int:
    weights = make_weights(args.order, args.weights)
    d = weights.d
    if weights.scheme == "rectangular":
        raw = np.ones(len(weights.w))
    else:
        lags = weights.lags
        raw = np.where(lags < d, 1.0, (2.0 * d - lags) / d)
    print(f"order d = {d}, scheme = {weights.scheme}, window m_d = {weights.m_d}")
    print(f"{'lag':>4}{'unnormalized':>14}{'normalized':>12}")
    for lag, u, w in zip(weights.lags, raw, weights.w):
        print(f"{lag:>4}{u:>14.6f}{w:>12.6f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _add_common_fit_flags(parser) -> None:
    parser.add_argument("-d", "--order", type=int, default=1, help="pairwise likelihood order d")
    parser.add_argument(
        "--weights", choices=["rect", "trap"], default="rect", help="pair weight scheme"
    )
    parser.add_argument("--nodes", type=int, default=20, help="quadrature nodes per dimension")
    parser.add_argument("--hac-lags", type=int, default=None, help="HAC window semi-length r")
    parser.add_argument(
        "--restriction",
        choices=sorted(_RESTRICTIONS),
        default="none",
        help="none: full model; phi0: no autocorrelation; indep: plain Poisson regression",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pairpois",
        description="Latent AR(1) Poisson count models by maximum weighted pairwise likelihood.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit a model to a monthly count CSV")
    p_fit.add_argument("data", help="input CSV with date,count[,covariates] columns")
    p_fit.add_argument("--output", required=True, help="path for the JSON fit report")
    _add_common_fit_flags(p_fit)
    p_fit.add_argument("--holdout-months", type=int, default=0,
                       help="reserve the last K months for prediction checks")
    p_fit.add_argument("--trend", action="store_true",
                       help="include a linear trend t/n scaled by the training length")
    p_fit.add_argument("--harmonics", action="store_true",
                       help="include the seasonal sin/cos pair")
    p_fit.add_argument("--period", type=int, default=12, help="harmonic period in months")
    p_fit.add_argument("--level-shift", default=None, metavar="YYYY-MM",
                       help="indicator equal to 1 strictly before this month")
    p_fit.add_argument("--covariates", default=None,
                       help="comma-separated extra covariate columns from the CSV")
    p_fit.add_argument("--max-iter", type=int, default=estimation.DEFAULT_MAX_ITER)
    p_fit.set_defaults(func=cmd_fit)

    p_pred = sub.add_parser("predict", help="simulation-based prediction band from a fit report")
    p_pred.add_argument("report", help="JSON fit report from the fit subcommand")
    p_pred.add_argument("--output", required=True, help="path for the band CSV")
    p_pred.add_argument("--horizon-months", type=int, default=12)
    p_pred.add_argument("--n-sim", type=int, default=10_000)
    p_pred.add_argument("--seed", type=int, default=1)
    p_pred.add_argument("--data", default=None,
                        help="CSV with observed counts for exceedance flags")
    p_pred.add_argument("--future-covariates", default=None,
                        help="CSV supplying covariate columns over the horizon")
    p_pred.set_defaults(func=cmd_predict)

    p_sim = sub.add_parser("simulate", help="simulate a series from the model")
    p_sim.add_argument("--output", required=True)
    p_sim.add_argument("--scenario", type=int, choices=sorted(scenarios.SCENARIOS), default=None)
    p_sim.add_argument("--beta", type=float, default=None, help="intercept on the log scale")
    p_sim.add_argument("--sigma2", type=float, default=None)
    p_sim.add_argument("--phi", type=float, default=None)
    p_sim.add_argument("--n", type=int, default=500)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--start", default="2000-01", metavar="YYYY-MM")
    p_sim.set_defaults(func=cmd_simulate)

    p_sc = sub.add_parser("scenarios", help="simulate-and-refit study over benchmark scenarios")
    p_sc.add_argument("--output", required=True, help="path for the summary CSV")
    p_sc.add_argument("--ids", default="1,2,3,4,5,6,7,8,9", help="comma-separated scenario ids")
    p_sc.add_argument("--n-series", type=int, default=100)
    p_sc.add_argument("--n-len", type=int, default=500)
    p_sc.add_argument("--orders", default="1", help="comma-separated pairwise orders d")
    p_sc.add_argument("--schemes", default="rect", help="comma-separated schemes (rect,trap)")
    p_sc.add_argument("--nodes", default="20", help="comma-separated node counts")
    p_sc.add_argument("--seed", type=int, default=0)
    p_sc.set_defaults(func=cmd_scenarios)

    p_w = sub.add_parser("weights", help="print a pair-weight table")
    p_w.add_argument("-d", "--order", type=int, required=True)
    p_w.add_argument("--weights", choices=["rect", "trap"], default="rect")
    p_w.set_defaults(func=cmd_weights)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (PairpoisError, OSError, ValueError, KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

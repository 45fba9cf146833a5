"""Command-line interface: ``twotiergp {fit,predict,simulate,bench,make-analog}``.

Exit codes: 0 success, 2 bad input, 3 numerical failure, 4 optimizer or
replication failure. The log level is read from ``TWOTIERGP_LOG_LEVEL``.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .analog import AnalogParams, analog_schema, make_analog, params_dict
from .bench import run_benchmark
from .dataio import (
    DatasetSchema,
    atomic_write_text,
    file_sha256,
    format_csv,
    load_artifact,
    load_dataset,
    load_queries,
    save_artifact,
    write_columns_csv,
)
from .errors import InputError, TwoTierError
from .oracle import mc_twotier_predict
from .simulation import GRIDS, ScenarioConfig, config_dict, format_table, run_grid, run_scenario, write_grid
from .tier2 import twotier_fit, twotier_predict_batch

logger = logging.getLogger("twotiergp")


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _common(p, restarts_default):
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--kernel", choices=("exp", "sqexp"), default="exp", help="covariance family")
    p.add_argument("--degree", type=_positive_int, default=5, help="number of polynomial basis terms Q")
    p.add_argument("--restarts", type=_positive_int, default=restarts_default, help="optimizer starts per GP")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twotiergp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a two-tier model and save it")
    p.add_argument("data", help="training CSV with a header row")
    p.add_argument("schema", help="JSON file declaring column roles")
    p.add_argument("--out", required=True, help="model artifact path (JSON)")
    _common(p, 8)

    p = sub.add_parser("predict", help="predict with a saved model")
    p.add_argument("model", help="model artifact")
    p.add_argument("queries", help="CSV with the x, u and omega columns of the schema")
    p.add_argument("--out", help="output CSV (default: stdout)")
    p.add_argument("--mc", action="store_true", help="use Monte Carlo propagation instead of closed forms")
    p.add_argument("--samples", type=_positive_int, default=10_000, help="Monte Carlo samples per query")
    p.add_argument("--include-noise", action="store_true", help="add the observation noise variance")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("simulate", help="run the synthetic simulation study")
    p.add_argument("scenario", help=f"grid name ({'|'.join(GRIDS)}) or a JSON scenario file")
    p.add_argument("--replications", type=_positive_int, help="replications per cell (default 25)")
    p.add_argument("--n", type=_positive_int, help="rows per dataset (default 1500)")
    p.add_argument("--train-frac", type=float, help="training fraction (default 0.5)")
    p.add_argument("--normalize", choices=("none", "range", "std"), help="MAE normalization")
    p.add_argument("--out", default="sim_out", help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="parallel replications")
    p.add_argument("--seed", type=int)
    p.add_argument("--kernel", choices=("exp", "sqexp"))
    p.add_argument("--degree", type=_positive_int)
    p.add_argument("--restarts", type=_positive_int)

    p = sub.add_parser("bench", help="compare with a single GP over random splits")
    p.add_argument("data")
    p.add_argument("schema")
    p.add_argument("--splits", type=_positive_int, default=25)
    p.add_argument("--train-frac", type=float, default=0.6)
    p.add_argument("--out", help="directory for the per-split CSV and report")
    _common(p, 2)

    p = sub.add_parser("make-analog", help="write the synthetic growth-campaign dataset")
    p.add_argument("--out", required=True, help="CSV path")
    p.add_argument("--schema-out", help="write the matching schema JSON here")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _describe(model) -> str:
    top = model.top
    lines = [
        f"top GP: kernel={top.kernel.family.value} length_scales="
        + ", ".join(f"{v:.6g}" for v in top.kernel.length_scales)
        + f" signal_variance={top.kernel.signal_variance:.6g} noise_variance={top.noise_variance:.6g}"
        + f" (standardized y) log_ml={top.log_marginal:.6f}"
    ]
    for j, t1 in enumerate(model.tier1s):
        lines.append(
            f"tier-1[{j}]: Q={t1.degree} alpha={t1.alpha:.6g} beta=["
            + ", ".join(f"{b:.6g}" for b in t1.beta)
            + f"] b_omega={t1.residual_kernel.length_scales[0]:.6g}"
            + f" sigma2={t1.residual_kernel.signal_variance:.6g} nugget={t1.nugget:.6g}"
            + f" log_ml={t1.log_marginal:.6f}"
        )
    return "\n".join(lines)


def cmd_fit(args) -> int:
    schema = DatasetSchema.load(args.schema)
    data = load_dataset(args.data, schema)
    if data.n <= args.degree + 1:
        raise InputError(f"need more than Q+1={args.degree + 1} rows, got {data.n}")
    model = twotier_fit(
        data.x, data.z, data.y, u=data.u, omega=data.omega,
        kernel_family=args.kernel, degree=args.degree, restarts=args.restarts, seed=args.seed,
    )
    settings = {"seed": args.seed, "kernel": args.kernel, "degree": args.degree, "restarts": args.restarts}
    save_artifact(args.out, model, schema, file_sha256(args.data), settings)
    print(_describe(model))
    return 0


def cmd_predict(args) -> int:
    model, schema, _ = load_artifact(args.model)
    q = load_queries(args.queries, schema)
    T = q.n
    if T == 0:
        means = variances = np.empty(0)
        extra = {}
    elif args.mc:
        res = []
        for i in range(T):
            xi = None if q.x is None else q.x[i]
            res.append(mc_twotier_predict(
                model, xi, [u[i] for u in q.u], [o[i] for o in q.omega],
                samples=args.samples, seed=args.seed + i, include_noise=args.include_noise,
            ))
        means = np.array([r.mean for r in res])
        variances = np.array([r.variance for r in res])
        extra = {"mean_se": [r.mean_se for r in res], "variance_se": [r.variance_se for r in res]}
    else:
        means, variances = twotier_predict_batch(model, q.x, q.u, q.omega, include_noise=args.include_noise)
        extra = {}
    header = ["mean", "variance"] + list(extra)
    text = format_csv(header, [means, variances] + [np.asarray(v) for v in extra.values()])
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def _sim_base(args):
    overrides = {}
    grid = args.scenario
    if grid not in GRIDS:
        try:
            with open(grid) as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise InputError(f"{grid!r} is neither a grid name ({', '.join(GRIDS)}) nor a readable file: {exc}") from None
        except json.JSONDecodeError as exc:
            raise InputError(f"{grid}: invalid JSON ({exc})") from None
        if not isinstance(doc, dict):
            raise InputError(f"{grid}: scenario file must hold a JSON object")
        grid = doc.pop("grid", None)
        if grid is not None and grid not in GRIDS:
            raise InputError(f"unknown grid {grid!r}")
        overrides.update(doc)
    cfg = ScenarioConfig.from_dict(overrides) if overrides else ScenarioConfig()
    cli = {
        "replications": args.replications, "N": args.n, "train_fraction": args.train_frac,
        "normalize": args.normalize, "seed": args.seed, "kernel": args.kernel, "Q": args.degree,
        "restarts": args.restarts,
    }
    cfg = replace(cfg, **{k: v for k, v in cli.items() if v is not None})
    return grid, cfg


def cmd_simulate(args) -> int:
    grid, cfg = _sim_base(args)
    os.makedirs(args.out, exist_ok=True)
    if grid is None:
        res = run_scenario(cfg, n_jobs=args.jobs)
        rows = ["metric,mean,sd"]
        for metric in ("g", "z", "y"):
            m, s = res.summary(f"mae_{metric}")
            rows.append(f"mae_{metric},{m!r},{s!r}")
            print(f"MAE {metric}: {m:.4f} ({s:.4f})")
        atomic_write_text(os.path.join(args.out, "scenario_summary.csv"), "\n".join(rows) + "\n")
        atomic_write_text(os.path.join(args.out, "scenario_config.json"),
                          json.dumps(config_dict(cfg), indent=1, sort_keys=True) + "\n")
        return 0

    def progress(name, r, c, res):
        logger.info("%s cell (%g, %g): %d reps, %d failed", name, r, c, len(res.reps), len(res.failures))

    result = run_grid(grid, cfg, n_jobs=args.jobs, progress=progress)
    write_grid(result, args.out)
    for metric in result.tables:
        print(f"MAE of {metric} ({grid}; rows {result.row_param}, columns {result.col_param})")
        print(format_table(result, metric))
    return 0


def cmd_bench(args) -> int:
    schema = DatasetSchema.load(args.schema)
    data = load_dataset(args.data, schema)
    res = run_benchmark(
        data, splits=args.splits, train_fraction=args.train_frac, seed=args.seed,
        kernel=args.kernel, degree=args.degree, restarts=args.restarts,
        progress=lambda k, row: logger.info("split %d done", k),
    )
    report = res.report()
    if args.out:
        atomic_write_text(os.path.join(args.out, "bench_splits.csv"), res.splits_csv())
        atomic_write_text(os.path.join(args.out, "bench_report.txt"), report)
    sys.stdout.write(report)
    return 0


def cmd_make_analog(args) -> int:
    params = AnalogParams()
    write_columns_csv(args.out, make_analog(args.seed, params))
    if args.schema_out:
        atomic_write_text(args.schema_out, json.dumps(analog_schema(), indent=1) + "\n")
    print(f"wrote {params.n_rows} rows to {args.out}")
    print("generator parameters: " + json.dumps(params_dict(params), sort_keys=True))
    return 0


COMMANDS = {
    "fit": cmd_fit,
    "predict": cmd_predict,
    "simulate": cmd_simulate,
    "bench": cmd_bench,
    "make-analog": cmd_make_analog,
}


def main(argv=None) -> int:
    level = os.environ.get("TWOTIERGP_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(
        level=level if isinstance(logging.getLevelName(level), int) else "WARNING",
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except TwoTierError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: simulate, estimate, montecarlo and baseline
workflows with a full configuration surface and replayable manifests.

Exit codes: 0 success, 1 configuration or validation error, 2 runtime or
numeric error. Errors go to stderr; stdout carries only output paths and
result tables.
"""

import argparse
import os
import sys
import time
from pathlib import Path

from .dgp import SimConfig, simulate
from .errors import EstimationError, NumericError, SchemaError
from .estimator import (
    BaselineFit,
    estimate_adt,
    estimate_ait,
    monte_carlo,
    ols_baseline,
)
from .exposure import parse_exposure
from .gmm import MOMENT_VARIANCE_WEIGHT
from .io import (
    file_sha256,
    read_edgelist,
    read_panel,
    write_edgelist,
    write_manifest,
    write_panel,
    write_report,
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _add_sim_flags(p):
    p.add_argument("--n", type=int, help="number of units to simulate")
    p.add_argument("--p-edge", type=float, default=0.5, help="edge probability")
    p.add_argument("--tau", type=float, default=0.5, help="true direct effect")
    p.add_argument("--noise-sd", type=float, default=0.1, help="noise standard deviation")


def _add_data_flags(p):
    p.add_argument("--dataset", help="panel CSV path")
    p.add_argument("--graph", help="edge-list path")


def _add_training_flags(p):
    p.add_argument("--exposure", default="any",
                   help="exposure mapping: any | atleast:T | relative:F | fraction")
    p.add_argument("--g", type=float, default=1.0, help="target exposure level")
    p.add_argument("--estimand", choices=("adt", "ait"), default="adt")
    p.add_argument("--k", type=int, default=1, help="interference radius for ait")
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--learning-rate", type=float, default=0.01)
    p.add_argument("--hidden-dim", type=int, default=16)
    p.add_argument("--embed-dim", type=int, default=16)
    p.add_argument("--depth", type=int, default=1)
    p.add_argument("--positive-q", action="store_true")
    p.add_argument("--instrument-intercept", action="store_true")
    p.add_argument("--moment-variance-weight", type=float,
                   default=MOMENT_VARIANCE_WEIGHT)


def build_parser() -> _Parser:
    parser = _Parser(prog="netdid", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate a synthetic panel and graph")
    _add_sim_flags(p_sim)
    p_sim.add_argument("--with-latent", action="store_true",
                       help="include the latent confounder columns in the CSV")

    p_est = sub.add_parser("estimate", help="doubly robust effect on one dataset")
    _add_data_flags(p_est)
    _add_sim_flags(p_est)
    _add_training_flags(p_est)

    p_mc = sub.add_parser("montecarlo", help="replicated simulate-and-estimate study")
    _add_sim_flags(p_mc)
    _add_training_flags(p_mc)
    p_mc.add_argument("--reps", type=int, required=True)
    p_mc.add_argument("--estimator", choices=("dr", "baseline", "oracle"), default="dr")
    p_mc.add_argument("--jobs", type=int, default=1)
    p_mc.add_argument("--no-inference", action="store_true",
                      help="skip HAC inference inside each replication")

    p_base = sub.add_parser("baseline", help="spillover OLS on one dataset")
    _add_data_flags(p_base)
    _add_sim_flags(p_base)

    for p in (p_sim, p_est, p_mc, p_base):
        p.add_argument("--seed", type=int, default=None,
                       help="seed; falls back to NETDID_SEED, then 0")
        p.add_argument("--out", default=".", help="output directory")
    return parser


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("NETDID_SEED")
    return int(env) if env else 0


def _load_inputs(args, seed):
    """Dataset and graph from files or a fresh simulation; never both."""
    from_files = args.dataset is not None or args.graph is not None
    if from_files and args.n is not None:
        raise _UsageError("--dataset/--graph conflict with simulation flags (--n)")
    if from_files:
        if args.dataset is None or args.graph is None:
            raise _UsageError("--dataset and --graph must be given together")
        ds = read_panel(args.dataset)
        g = read_edgelist(args.graph, ds.n)
        inputs = {"dataset": args.dataset, "graph": args.graph}
        return ds, g, inputs
    if args.n is None:
        raise _UsageError("either --dataset/--graph or --n is required")
    cfg = SimConfig(n=args.n, p_edge=args.p_edge, tau=args.tau,
                    noise_sd=args.noise_sd, seed=seed)
    g, ds = simulate(cfg)
    return ds, g, {}


def _config_snapshot(args, seed) -> dict:
    config = {k: v for k, v in vars(args).items() if k not in ("out",)}
    config["seed"] = seed
    return config


def _cmd_simulate(args, seed, out):
    cfg = SimConfig(n=args.n, p_edge=args.p_edge, tau=args.tau,
                    noise_sd=args.noise_sd, seed=seed)
    g, ds = simulate(cfg)
    panel_path = out / "panel.csv"
    graph_path = out / "graph.edges"
    write_panel(ds, panel_path, include_latent=args.with_latent)
    write_edgelist(g, graph_path)
    print(panel_path)
    print(graph_path)
    return {"panel": str(panel_path), "graph": str(graph_path)}, {}


def _cmd_estimate(args, seed, out):
    ds, g, inputs = _load_inputs(args, seed)
    common = dict(
        epochs=args.epochs,
        learning_rate=args.learning_rate,
        hidden_dim=args.hidden_dim,
        embed_dim=args.embed_dim,
        depth=args.depth,
        seed=seed,
        positive_q=args.positive_q,
        instrument_intercept=args.instrument_intercept,
        moment_variance_weight=args.moment_variance_weight,
    )
    if args.estimand == "adt":
        report = estimate_adt(ds, g, spec=parse_exposure(args.exposure),
                              target_g=args.g, **common)
    else:
        report = estimate_ait(ds, g, K=args.k, **common)
    report_path = out / "report.json"
    write_report(report, report_path)
    print(report_path)
    print(report.to_table())
    return {"report": str(report_path)}, inputs


def _cmd_montecarlo(args, seed, out):
    cfg = SimConfig(n=args.n, p_edge=args.p_edge, tau=args.tau,
                    noise_sd=args.noise_sd, seed=seed)
    options = {}
    if args.estimator == "dr":
        options = dict(
            spec=parse_exposure(args.exposure),
            target_g=args.g,
            epochs=args.epochs,
            learning_rate=args.learning_rate,
            hidden_dim=args.hidden_dim,
            embed_dim=args.embed_dim,
            depth=args.depth,
            positive_q=args.positive_q,
            instrument_intercept=args.instrument_intercept,
            moment_variance_weight=args.moment_variance_weight,
            inference=not args.no_inference,
        )
    summary = monte_carlo(cfg, args.reps, estimator=args.estimator,
                          jobs=args.jobs, **options)
    summary_path = out / "summary.json"
    write_report(summary, summary_path)
    print(summary_path)
    print(summary.to_table())
    return {"summary": str(summary_path)}, {}


def _cmd_baseline(args, seed, out):
    import json

    ds, g, inputs = _load_inputs(args, seed)
    fit = ols_baseline(ds, g)
    payload = {
        "tau": fit.tau,
        "tau_se": fit.tau_se,
        "coefficients": dict(zip(fit.column_names, fit.coefficients.tolist())),
        "se": dict(zip(fit.column_names, fit.se.tolist())),
        "n": fit.n,
    }
    base_path = out / "baseline.json"
    with open(base_path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(base_path)
    return {"baseline": str(base_path)}, inputs


def run(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        seed = _resolve_seed(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        start = time.time()
        handler = {
            "simulate": _cmd_simulate,
            "estimate": _cmd_estimate,
            "montecarlo": _cmd_montecarlo,
            "baseline": _cmd_baseline,
        }[args.command]
        outputs, inputs = handler(args, seed, out)
        write_manifest(
            out / "manifest.json",
            config=_config_snapshot(args, seed),
            inputs=inputs,
            outputs=outputs,
            wall_clock=time.time() - start,
        )
        return 0
    except (_UsageError, SchemaError, ValueError) as exc:
        print(f"netdid: error: {exc}", file=sys.stderr)
        return 1
    except (EstimationError, NumericError, ArithmeticError, OSError) as exc:
        print(f"netdid: runtime error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()

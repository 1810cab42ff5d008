"""The `topsel` command: fit models, evaluate error probabilities, run
experiments, check trace ingestion.

Exit codes: 0 success, 1 runtime or numerical failure, 2 usage or
validation failure. All randomness flows from --seed; when the flag is
absent a fixed default (20240817) keeps published tables reproducible.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import _kernels as K
from .errors import ParameterError, ParseError, TopselError
from .geometry import grid_covering, load_deployment
from .harness import load_spec, run_experiment, write_results
from .ingest import DEFAULT_BUCKET_MS, build_fit_dataset, parse_traces
from .maxsel import TopPProblem, error_probability
from .propagation import (
    PropagationModel,
    SplineModel,
    fit_log_linear,
    fit_spline,
    load_model,
    save_model,
)

DEFAULT_SEED = 20240817


def parse_p_values(text: str) -> tuple[int, ...]:
    """Accept '3', '1,2,5', or '1..10'."""
    text = text.strip()
    try:
        if ".." in text:
            lo_s, hi_s = text.split("..", 1)
            lo, hi = int(lo_s), int(hi_s)
            if hi < lo:
                raise ValueError("empty range")
            vals = tuple(range(lo, hi + 1))
        elif "," in text:
            vals = tuple(int(v) for v in text.split(","))
        else:
            vals = (int(text),)
    except ValueError as exc:
        raise ParameterError(f"cannot parse p values from {text!r}: {exc}") from exc
    if not vals or any(v < 1 for v in vals):
        raise ParameterError(f"p values must be >= 1, got {text!r}")
    return vals


def parse_grid(text: str) -> tuple[int, int]:
    """Accept 'ROWSxCOLS', e.g. '20x20'."""
    parts = text.lower().split("x")
    if len(parts) != 2:
        raise ParameterError(f"grid must look like 20x20, got {text!r}")
    try:
        rows, cols = int(parts[0]), int(parts[1])
    except ValueError as exc:
        raise ParameterError(f"grid must look like 20x20, got {text!r}") from exc
    if rows < 1 or cols < 1:
        raise ParameterError("grid dimensions must be >= 1")
    return rows, cols


def _cmd_fit(args) -> int:
    dmap = load_deployment(args.deploy)
    frames, report = parse_traces(args.traces, args.truth, dmap, args.bucket_ms)
    if not frames:
        raise ParameterError("no complete frames; nothing to fit")
    entries = []
    for i in range(dmap.s):
        samples = build_fit_dataset(frames, dmap, i)
        if args.model == "loglinear":
            entries.append(fit_log_linear(samples))
        else:
            entries.append(fit_spline(samples, args.bins))
    model = PropagationModel(tuple(entries))
    save_model(model, args.out)
    print(f"frames: {report.emitted} used, {report.dropped} dropped "
          f"(incomplete {report.dropped_incomplete}, no truth {report.dropped_no_truth})")
    for i, e in enumerate(model.entries):
        if isinstance(e, SplineModel):
            smin, smax = min(e.sigma2) ** 0.5, max(e.sigma2) ** 0.5
            print(f"sensor {i}: spline L={e.n_bins}, "
                  f"edges {e.edges_m[0]:.3g}..{e.edges_m[-1]:.3g} m, "
                  f"sigma {smin:.3g}..{smax:.3g} dB")
        else:
            print(f"sensor {i}: p0={e.p0:.4g} dB, eta={e.eta:.4g}, sigma={e.sigma:.4g} dB")
    print(f"model written to {args.out}")
    return 0


def _cmd_errorprob(args) -> int:
    dmap = load_deployment(args.deploy)
    if (args.sigma is None) == (args.model is None):
        raise ParameterError("provide exactly one of --sigma and --model")
    if args.sigma is not None:
        sigma = np.full(dmap.s, args.sigma)
        if args.sigma < 0:
            raise ParameterError("--sigma must be >= 0")
    else:
        sigma = load_model(args.model).sigma_tilde()
        if sigma.size != dmap.s:
            raise ParameterError("model and deployment disagree on sensor count")
    rows, cols = parse_grid(args.grid)
    grid = grid_covering(dmap.area, rows, cols)
    p_values = parse_p_values(args.p)
    if max(p_values) > dmap.s:
        raise ParameterError(f"p up to {max(p_values)} exceeds the {dmap.s} sensors")
    methods = (
        ("quadrature", "orthant-mc") if args.method == "both" else (args.method,)
    )
    lines = ["p,p_error,uncertainty,method"]
    for p in p_values:
        problem = TopPProblem(dmap, grid, sigma, p)
        for method in methods:
            rep = error_probability(
                problem, method=method, trials=args.trials, seed=args.seed
            )
            lines.append(f"{p},{rep.p_error!r},{rep.uncertainty!r},{rep.method}")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_run(args) -> int:
    spec = load_spec(args.spec)
    if args.seed is not None:
        from dataclasses import replace

        spec = replace(spec, seed=args.seed)
    table = run_experiment(spec)
    csv_path, manifest_path = write_results(table, spec, args.out)
    print(f"wrote {csv_path} ({len(table.rows)} rows) and {manifest_path}")
    return 0


def _cmd_ingest_check(args) -> int:
    dmap = load_deployment(args.deploy)
    frames, report = parse_traces(args.traces, args.truth, dmap, args.bucket_ms)
    print(f"buckets [{report.first_bucket}, {report.last_bucket}] "
          f"({report.total_buckets} total)")
    print(f"frames emitted: {report.emitted}")
    print(f"dropped incomplete: {report.dropped_incomplete}")
    print(f"dropped without truth: {report.dropped_no_truth}")
    if frames:
        n_targets = len(frames[0].truth)
        print(f"targets per frame: {n_targets}")
        print(f"ticks: {frames[0].t}..{frames[-1].t}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="topsel",
        description="Top-p sensor selection: model fitting, selection error "
        "probability, tracking experiments, trace ingestion.",
    )
    ap.add_argument(
        "--threads",
        type=int,
        default=None,
        help="cap compute threads (default: TOPSEL_THREADS env var, else all)",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit per-sensor propagation models from traces")
    p_fit.add_argument("--traces", required=True, help="readings CSV")
    p_fit.add_argument("--truth", required=True, help="ground-truth CSV")
    p_fit.add_argument("--deploy", required=True, help="deployment JSON")
    p_fit.add_argument("--model", choices=("loglinear", "spline"), default="loglinear")
    p_fit.add_argument("--bins", type=int, default=8, help="spline bin count")
    p_fit.add_argument("--bucket-ms", type=int, default=DEFAULT_BUCKET_MS)
    p_fit.add_argument("--out", required=True, help="output model JSON")
    p_fit.set_defaults(func=_cmd_fit)

    p_err = sub.add_parser("errorprob", help="selection error probability sweep over p")
    p_err.add_argument("--deploy", required=True, help="deployment JSON")
    p_err.add_argument("--sigma", type=float, default=None,
                       help="uniform normalized noise scale")
    p_err.add_argument("--model", default=None,
                       help="log-linear model JSON supplying per-sensor noise")
    p_err.add_argument("--p", required=True, help="p values: 3, 1,2,5, or 1..10")
    p_err.add_argument("--grid", default="20x20", help="hypothesis grid ROWSxCOLS")
    p_err.add_argument("--method", default="quadrature",
                       choices=("quadrature", "orthant-mc", "empirical-mc", "both"))
    p_err.add_argument("--trials", type=int, default=1_000_000,
                       help="Monte Carlo trials for the sampling methods")
    p_err.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p_err.add_argument("--out", default=None, help="CSV path (default: stdout)")
    p_err.set_defaults(func=_cmd_errorprob)

    p_run = sub.add_parser("run", help="run an experiment spec")
    p_run.add_argument("--spec", required=True, help="experiment spec JSON")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--seed", type=int, default=None,
                       help="override the spec's seed")
    p_run.set_defaults(func=_cmd_run)

    p_ing = sub.add_parser("ingest-check", help="parse traces and print alignment stats")
    p_ing.add_argument("--traces", required=True)
    p_ing.add_argument("--truth", required=True)
    p_ing.add_argument("--deploy", required=True)
    p_ing.add_argument("--bucket-ms", type=int, default=DEFAULT_BUCKET_MS)
    p_ing.set_defaults(func=_cmd_ingest_check)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = args.threads
    if threads is None:
        env = os.environ.get("TOPSEL_THREADS")
        if env is not None:
            try:
                threads = int(env)
            except ValueError:
                print(f"topsel: bad TOPSEL_THREADS value {env!r}", file=sys.stderr)
                return 2
    try:
        if threads is not None:
            K.set_thread_cap(threads)
        return args.func(args)
    except (ParameterError, ParseError, ValueError) as exc:
        print(f"topsel: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        name = exc.filename if exc.filename else exc
        print(f"topsel: cannot open {name}", file=sys.stderr)
        return 2
    except TopselError as exc:
        print(f"topsel: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

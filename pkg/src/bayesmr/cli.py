"""Command-line interface: ``bayesmr {simulate,fit,summary,baselines}``.

Exit codes: 0 success, 2 usage or input error, 3 sampler non-convergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import bidirectional_table, format_table, ivw, wald_ratio
from .data_io import (load_stats, read_summary, stats_from_summary, write_individual,
                      write_stats)
from .estimator import BayesianMR
from .priors import PriorSpec
from .simulator import PRESETS, Scenario, generate, preset

EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGED = 0, 2, 3

logger = logging.getLogger("bayesmr")


class InputError(Exception):
    pass


def _weight(text: str):
    return text if text.strip().lower() == "hier" else float(text)


def _scale(text: str):
    return text if text.strip().lower() == "auto" else float(text)


def _index_list(text: str) -> list[int]:
    # Variant indices on the command line are 1-based like the G1..GJ columns.
    try:
        idx = [int(t) - 1 for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers: {text}") from exc
    if any(i < 0 for i in idx):
        raise argparse.ArgumentTypeError("variant indices start at 1")
    return idx


def _echo(args) -> dict:
    d = {k: v for k, v in vars(args).items() if k != "func"}
    return {"command": args.command, "args": _plain(d), "version": __version__}


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def _write_json(path, doc) -> None:
    text = json.dumps(_plain(doc), indent=2, default=str)
    if path is None or str(path) == "-":
        sys.stdout.write(text + "\n")
    else:
        Path(path).write_text(text + "\n")


# ------------------------------------------------------------------ simulate


def cmd_simulate(args) -> int:
    if args.scenario:
        scenario = Scenario.from_dict(json.loads(Path(args.scenario).read_text()))
    else:
        overrides = {}
        if args.delta is not None:
            overrides["delta"] = args.delta
        scenario = preset(args.preset, **overrides)
    changes = {k: v for k, v in (("N", args.n), ("rng_seed", args.seed),
                                 ("valid_fraction", args.valid_fraction), ("A", args.A),
                                 ("nu", args.nu)) if v is not None}
    if changes:
        scenario = scenario.with_(**changes)
    rows, truth = generate(scenario)
    write_individual(args.out, rows)
    truth_path = args.truth or str(args.out) + ".truth.json"
    _write_json(truth_path, {"schema": "bayesmr.truth", "version": 1,
                             "scenario": scenario.to_dict(), "truth": truth.to_dict(),
                             "config": _echo(args)})
    logger.info("wrote %d rows to %s", len(rows), args.out)
    return EXIT_OK


# ----------------------------------------------------------------------- fit


def _prior_from_args(args) -> PriorSpec:
    config = {}
    if args.prior_config:
        config = json.loads(Path(args.prior_config).read_text())
    spec = PriorSpec.from_config(config)
    cli = {"tau2": args.tau2, "lambda": args.lam, "w_gamma": args.w_gamma,
           "w_alpha": args.w_alpha, "w_beta": args.w_beta, "w_kappa": args.w_kappa,
           "sigma_prior_scale": args.sigma_prior_scale}
    merged = spec.to_config()
    merged.update({k: v for k, v in cli.items() if v is not None})
    return PriorSpec.from_config(merged)


def cmd_fit(args) -> int:
    stats = load_stats(args.data)
    priors = _prior_from_args(args)
    est = BayesianMR(tau2=priors.tau2, lam=priors.lam, w_gamma=priors.w_gamma,
                     w_alpha=priors.w_alpha, w_beta=priors.w_beta, w_kappa=priors.w_kappa,
                     sigma_prior_scale=priors.sigma_prior_scale, direction=args.direction,
                     prior_odds=args.prior_odds, n_live=args.n_live,
                     slice_steps=args.slice_steps, termination_frac=args.termination_frac,
                     batch_size=args.batch_size, random_state=args.seed,
                     n_draws=args.n_draws, n_repeats=args.repeats)
    est.fit_stats(stats)
    doc = est.summary({"cli": _echo(args)})
    _write_json(args.out, doc)
    if args.samples:
        cols, names = [], []
        for label, fit in (("beta_x_to_y", est.fit_forward_), ("beta_y_to_x", est.fit_reverse_)):
            if fit is not None:
                cols.append(fit.beta_samples)
                names.append(label)
        np.savetxt(args.samples, np.column_stack(cols), delimiter=",", header=",".join(names),
                   comments="", fmt="%.8g")
    if not est.converged_:
        logger.error("nested sampling did not converge; see diagnostics in the result")
        return EXIT_NONCONVERGED
    return EXIT_OK


# ------------------------------------------------------------------- summary


def cmd_summary(args) -> int:
    record, copies = read_summary(args.records)
    stats = stats_from_summary(record, args.allele_copies or copies)
    if args.out is None or args.out == "-":
        from .data_io import stats_to_dict
        _write_json(None, stats_to_dict(stats))
    else:
        write_stats(args.out, stats)
    return EXIT_OK


# ----------------------------------------------------------------- baselines


def cmd_baselines(args) -> int:
    stats = load_stats(args.data)
    exp_v = args.exposure_variants
    out_v = args.outcome_variants
    for idx in (exp_v or []) + (out_v or []):
        if idx >= stats.J:
            raise InputError(f"variant G{idx + 1} does not exist (J={stats.J})")
    if exp_v is None:
        exp_v = [j for j in range(stats.J) if j not in (out_v or [])]
    rows_per_variant = [wald_ratio(stats, j) for j in exp_v]
    lines = ["variant\twald\tse"]
    lines += [f"G{r.variant + 1}\t{r.estimate:.6g}\t{r.se:.6g}" for r in rows_per_variant]
    est, se = ivw(rows_per_variant)
    lines.append(f"IVW\t{est:.6g}\t{se:.6g}")
    text = "\n".join(lines) + "\n"
    if out_v:
        row = bidirectional_table(stats, exp_v, out_v)
        text += "\n" + format_table([row])
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bayesmr", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic individual-level dataset")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--preset", choices=PRESETS)
    g.add_argument("--scenario", help="scenario JSON document")
    s.add_argument("--n", type=int, help="sample size")
    s.add_argument("--seed", type=int)
    s.add_argument("--valid-fraction", type=float)
    s.add_argument("--delta", type=float, help="pleiotropy of the bidirectional preset")
    s.add_argument("--A", type=float, help="tanh nonlinearity scale")
    s.add_argument("--nu", type=float, help="degrees of freedom of the outcome noise")
    s.add_argument("--out", required=True, help="output CSV path")
    s.add_argument("--truth", help="ground-truth JSON path (default: OUT.truth.json)")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="evidence and posteriors for both causal directions")
    f.add_argument("--data", required=True,
                   help="individual-data CSV or sufficient-statistics JSON")
    f.add_argument("--prior-config", help="JSON prior configuration")
    f.add_argument("--tau2", type=float)
    f.add_argument("--lambda", dest="lam", type=float)
    f.add_argument("--w-gamma", type=_weight, help="slab weight or 'hier'")
    f.add_argument("--w-alpha", type=_weight, help="slab weight or 'hier'")
    f.add_argument("--w-beta", type=_weight)
    f.add_argument("--w-kappa", type=_weight)
    f.add_argument("--sigma-prior-scale", type=_scale, help="number or 'auto'")
    f.add_argument("--direction", choices=("both", "forward", "reverse"), default="both")
    f.add_argument("--prior-odds", type=float, default=1.0)
    f.add_argument("--n-live", type=int)
    f.add_argument("--slice-steps", type=int)
    f.add_argument("--termination-frac", type=float, default=1e-3)
    f.add_argument("--batch-size", type=int, default=64)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--n-draws", type=int, default=4000)
    f.add_argument("--repeats", type=int, default=0,
                   help="independent reruns for the repeated-runs BF interval")
    f.add_argument("--out", default="-", help="result JSON path ('-' for stdout)")
    f.add_argument("--samples", help="CSV of equal-weight causal-effect draws")
    f.set_defaults(func=cmd_fit)

    m = sub.add_parser("summary", help="sufficient statistics from GWAS summary records")
    m.add_argument("--records", required=True, help="summary-record JSON document")
    m.add_argument("--allele-copies", type=int)
    m.add_argument("--out", default="-")
    m.set_defaults(func=cmd_summary)

    b = sub.add_parser("baselines", help="Wald ratio, IVW and bidirectional MR")
    b.add_argument("--data", required=True)
    b.add_argument("--exposure-variants", type=_index_list,
                   help="1-based variants instrumenting X (default: all others)")
    b.add_argument("--outcome-variants", type=_index_list,
                   help="1-based variants instrumenting Y for the reverse estimate")
    b.add_argument("--out")
    b.set_defaults(func=cmd_baselines)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, ValueError, OSError, KeyError, TypeError) as exc:
        print(f"bayesmr {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

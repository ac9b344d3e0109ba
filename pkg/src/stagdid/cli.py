"""Command-line front end.

Loads a long-format panel CSV, runs the requested estimator, and prints
one JSON document to stdout (or ``--output``). Exit codes: 0 success,
2 input or flag problems, 3 estimation failures on valid input. Every
warning raised during the run is mirrored to stderr and embedded in the
JSON under ``"warnings"``.

Given the same argv and input files, output bytes are identical across
runs; pass ``--no-meta`` to drop the timestamped metadata block when
byte-level comparison matters.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings as _warnings
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .aggregate import (
    apply_bands,
    att_simple,
    delta_e_avg,
    delta_s,
    event_study,
)
from .attgt import att_set
from .dgp import SCENARIOS, scenario_config, simulate
from .errors import EstimationError, StagdidError, ValidationError
from .gmm import att_from_gmm, build_moments, estimate_gmm, j_test
from .hetero import StrataVariant, diff_curve, event_study_strata, summaries_strata
from .inference import multiplier_bootstrap
from .panel import load_panel, validate, write_panel_csv
from .twfe import twfe_dynamic, twfe_static, wald_joint

SCHEMA_VERSION = 1

_METHOD = {"never": "NEVER", "nyt": "NYT", "nyt-all": "NYT_ALL"}
_PTA = {"not-yet": "NOT_YET", "all-groups": "ALL_GROUPS"}


def _add_input_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", required=True, help="long-format panel CSV")
    p.add_argument("--never-code", default="0",
                   help="first_treat value marking never-treated units")
    p.add_argument("--drop-unbalanced", action="store_true",
                   help="drop units missing periods instead of failing")
    p.add_argument("--cluster", metavar="COL", default=None,
                   help="cluster column name (default: each unit its own)")
    p.add_argument("--stratum", metavar="COL", default=None,
                   help="stratum column name")


def _add_method_flag(p: argparse.ArgumentParser) -> None:
    p.add_argument("--method", choices=sorted(_METHOD), default="nyt",
                   help="comparison strategy (default: nyt)")


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--output", default=None, help="write JSON here instead of stdout")
    p.add_argument("--no-meta", action="store_true",
                   help="omit the timestamp/version block for byte-stable output")
    p.add_argument("--threads", type=int, default=None,
                   help="advisory worker count (DID_THREADS env var equivalent); "
                        "results never depend on it")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="did",
        description="Design-based difference-in-differences for staggered adoption",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("attgt", help="all ATT(g,t) cells for one method")
    _add_input_flags(p)
    _add_method_flag(p)
    p.add_argument("--include-pre", action="store_true",
                   help="also estimate pre-treatment diagnostic cells")
    _add_common_flags(p)

    p = sub.add_parser("es", help="event-study curve with bootstrap bands")
    _add_input_flags(p)
    _add_method_flag(p)
    p.add_argument("--include-pre", action="store_true")
    p.add_argument("--bootstrap", type=int, default=1000, metavar="B",
                   help="multiplier bootstrap draws; 0 skips the bootstrap")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--weight-law", choices=["mammen", "rademacher"],
                   default="mammen")
    p.add_argument("--emit-csv", metavar="PATH", default=None,
                   help="also write the curve as a plot-ready CSV")
    _add_common_flags(p)

    p = sub.add_parser("summary", help="scalar summaries of the effect surface")
    _add_input_flags(p)
    _add_method_flag(p)
    _add_common_flags(p)

    p = sub.add_parser("gmm", help="stacked moment system estimated in two steps")
    _add_input_flags(p)
    p.add_argument("--pta", choices=sorted(_PTA), default="not-yet",
                   help="which trend restriction the system imposes")
    p.add_argument("--ridge", type=float, default=0.0,
                   help="relative ridge added to the weighting matrix")
    p.add_argument("--allow-big-gmm", action="store_true",
                   help="permit more moments than units (requires --ridge > 0)")
    _add_common_flags(p)

    p = sub.add_parser("jtest", help="overidentification test of the trend restriction")
    _add_input_flags(p)
    p.add_argument("--pta", choices=sorted(_PTA), default="not-yet")
    p.add_argument("--ridge", type=float, default=0.0)
    p.add_argument("--allow-big-gmm", action="store_true")
    _add_common_flags(p)

    p = sub.add_parser("twfe", help="two-way fixed-effects descriptive baseline")
    _add_input_flags(p)
    p.add_argument("--dynamic", action="store_true",
                   help="event-time dummies instead of a single indicator")
    p.add_argument("--leads", type=int, default=None,
                   help="pre-periods to include (default: all supported)")
    p.add_argument("--lags", type=int, default=None,
                   help="post-periods to include (default: all supported)")
    p.add_argument("--omit", default=None,
                   help="comma-separated extra event times to omit")
    p.add_argument("--interact-stratum", action="store_true")
    p.add_argument("--fixed-effects", choices=["unit", "group"], default="unit")
    _add_common_flags(p)

    p = sub.add_parser("hetero", help="stratum-specific curves and contrasts")
    _add_input_flags(p)
    _add_method_flag(p)
    p.add_argument("--strata-trends", choices=["specific", "pooled"],
                   default="specific",
                   help="restrict comparison trends to the treated stratum, "
                        "or pool them")
    p.add_argument("--include-pre", action="store_true")
    _add_common_flags(p)

    p = sub.add_parser("simulate", help="draw one synthetic panel from a preset")
    p.add_argument("--scenario", choices=list(SCENARIOS), required=True)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--emit-csv", metavar="PATH", default=None,
                   help="write the panel in the loader's CSV schema")
    _add_common_flags(p)

    p = sub.add_parser("mc", help="replicate a scenario and summarize estimator error")
    p.add_argument("--scenario", choices=list(SCENARIOS), required=True)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    _add_method_flag(p)
    _add_common_flags(p)

    return ap


def _load(args):
    kwargs = {}
    if args.cluster:
        kwargs["cluster_col"] = args.cluster
    if args.stratum:
        kwargs["stratum_col"] = args.stratum
    ds = load_panel(
        args.input,
        never_code=args.never_code,
        drop_unbalanced=args.drop_unbalanced,
        **kwargs,
    )
    return ds


def _method(args, ds):
    m = _METHOD[args.method]
    if m == "NEVER" and not ds.has_never:
        raise ValidationError(
            "--method never requires never-treated units in the data"
        )
    return m


def _cmd_attgt(args):
    ds = _load(args)
    aset = att_set(ds, _method(args, ds), include_pre=args.include_pre)
    report = validate(ds)
    return {"attgt": aset.to_dict(), "panel": report.to_dict()}


def _bootstrap_curve(curve, args):
    boot = multiplier_bootstrap(
        curve.influence,
        curve.unit_weight,
        curve.unit_cluster,
        B=args.bootstrap,
        alpha=args.alpha,
        weight_law=args.weight_law,
        seed=args.seed,
    )
    return apply_bands(curve, boot)


def _cmd_es(args):
    ds = _load(args)
    aset = att_set(ds, _method(args, ds), include_pre=args.include_pre)
    curve = event_study(aset, ds, alpha=args.alpha)
    if args.bootstrap:
        curve = _bootstrap_curve(curve, args)
    if args.emit_csv:
        curve.write_csv(args.emit_csv)
    return {"event_study": curve.to_dict()}


def _cmd_summary(args):
    ds = _load(args)
    method = _method(args, ds)
    aset = att_set(ds, method)
    curve = event_study(aset, ds)
    out = {
        "ATT_simple": att_simple(aset, ds).to_dict(),
        "delta_e_avg": delta_e_avg(curve).to_dict(),
    }
    try:
        out["delta_S"] = delta_s(ds).to_dict()
    except StagdidError as exc:
        _warnings.warn(f"delta_S unavailable: {exc}")
    return {"summary": out, "method": method}


def _gmm_fit(args):
    if args.allow_big_gmm and args.ridge <= 0:
        raise ValidationError("--allow-big-gmm requires --ridge > 0")
    ds = _load(args)
    model = build_moments(ds, _PTA[args.pta], allow_big=args.allow_big_gmm)
    return estimate_gmm(model, ds, ridge=args.ridge)


def _cmd_gmm(args):
    fit = _gmm_fit(args)
    return {
        "model": fit.model.to_dict(),
        "fit": fit.to_dict(),
        "att": att_from_gmm(fit).to_dict(),
    }


def _cmd_jtest(args):
    fit = _gmm_fit(args)
    return {"j_test": j_test(fit), "model": fit.model.to_dict()}


def _cmd_twfe(args):
    ds = _load(args)
    if not args.dynamic:
        fit = twfe_static(ds, interact_stratum=args.interact_stratum,
                          fixed_effects=args.fixed_effects)
        return {"twfe": fit.to_dict()}
    groups = ds.groups
    leads = args.leads if args.leads is not None else max(
        [g - 2 for g in groups] or [0]
    )
    lags = args.lags if args.lags is not None else max(
        [ds.T - g for g in groups] or [0]
    )
    omit = None
    if args.omit:
        omit = {int(tok) for tok in args.omit.split(",") if tok.strip()}
    fit = twfe_dynamic(ds, leads, lags, omit,
                       interact_stratum=args.interact_stratum,
                       fixed_effects=args.fixed_effects)
    out = {"twfe": fit.to_dict()}
    pre = [name for name in fit.coef_names
           if name.startswith("beta_e[-") and ":" not in name]
    if pre:
        out["pre_joint_test"] = wald_joint(fit, pre)
    return out


def _cmd_hetero(args):
    ds = _load(args)
    variant = StrataVariant(
        base_method=_method(args, ds),
        strata_specific_trends=args.strata_trends == "specific",
    )
    curves = {
        c: event_study_strata(ds, variant, c, include_pre=args.include_pre)
        for c in (1, 0)
    }
    diff = diff_curve(curves[1], curves[0])
    summaries = summaries_strata(ds, variant)
    return {
        "variant": {"method": variant.base_method,
                    "strata_specific_trends": variant.strata_specific_trends},
        "stratum_1": curves[1].to_dict(),
        "stratum_0": curves[0].to_dict(),
        "difference": diff.to_dict(),
        "summaries": {k: v.to_dict() for k, v in summaries.items()},
    }


def _cmd_simulate(args):
    config = scenario_config(args.scenario, n_units=args.n, seed=args.seed)
    draw = simulate(config)
    ds = draw["panel"]
    if args.emit_csv:
        write_panel_csv(ds, args.emit_csv)
    report = validate(ds)
    return {
        "scenario": args.scenario,
        "n_units": ds.n_units,
        "T": ds.T,
        "truth": {f"{g},{t}": float(v) for (g, t), v in draw["truth"].items()},
        "panel": report.to_dict(),
        "csv": args.emit_csv,
    }


def _cmd_mc(args):
    config = scenario_config(args.scenario, n_units=args.n, seed=args.seed)
    per_cell: dict = {}
    truth = {}
    method = _METHOD[args.method]
    for rep in range(args.reps):
        draw = simulate(config.with_seed([args.seed, rep]))
        ds = draw["panel"]
        truth = draw["truth"]
        aset = att_set(ds, method)
        for r in aset:
            per_cell.setdefault((r.g, r.t), []).append(r.estimate)
    cells = {}
    for (g, t), vals in sorted(per_cell.items()):
        arr = np.asarray(vals)
        mc_se = float(arr.std(ddof=1) / np.sqrt(len(arr))) if len(arr) > 1 else 0.0
        cells[f"{g},{t}"] = {
            "truth": float(truth.get((g, t), 0.0)),
            "mc_mean": float(arr.mean()),
            "mc_se": mc_se,
            "reps": len(arr),
        }
    return {"scenario": args.scenario, "method": method,
            "reps": args.reps, "n_units": args.n, "cells": cells}


_HANDLERS = {
    "attgt": _cmd_attgt,
    "es": _cmd_es,
    "summary": _cmd_summary,
    "gmm": _cmd_gmm,
    "jtest": _cmd_jtest,
    "twfe": _cmd_twfe,
    "hetero": _cmd_hetero,
    "simulate": _cmd_simulate,
    "mc": _cmd_mc,
}


def run(argv) -> int:
    """Parse argv, run one subcommand, print JSON; returns the exit code."""
    ap = build_parser()
    args = ap.parse_args(argv)

    if args.threads is None:
        env = os.environ.get("DID_THREADS")
        if env and env.isdigit():
            args.threads = int(env)

    try:
        with _warnings.catch_warnings(record=True) as caught:
            _warnings.simplefilter("always")
            payload = _HANDLERS[args.command](args)
    except FileNotFoundError as exc:
        _fail(2, "FileNotFound", str(exc))
        return 2
    except ValidationError as exc:
        _fail(2, type(exc).__name__, str(exc))
        return 2
    except EstimationError as exc:
        _fail(3, type(exc).__name__, str(exc))
        return 3
    except ValueError as exc:
        _fail(2, type(exc).__name__, str(exc))
        return 2

    notes = sorted({f"{w.category.__name__}: {w.message}" for w in caught})
    for note in notes:
        print(note, file=sys.stderr)
    payload["warnings"] = notes
    payload["schema_version"] = SCHEMA_VERSION
    if not args.no_meta:
        payload["meta"] = {
            "argv": list(argv),
            "version": __version__,
            "timestamp": datetime.now(timezone.utc).isoformat(),
        }

    text = json.dumps(payload, sort_keys=True, indent=2, allow_nan=False) + "\n"
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def _fail(code: int, kind: str, message: str) -> None:
    err = json.dumps({"error": kind, "message": message, "exit_code": code},
                     sort_keys=True)
    print(err, file=sys.stderr)


def main(argv=None) -> int:
    return run(sys.argv[1:] if argv is None else list(argv))


if __name__ == "__main__":
    sys.exit(main())

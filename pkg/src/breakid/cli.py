"""Command line front end.

Subcommands mirror the workflow: ``generate`` data, ``dmd-report`` on it,
``identify`` a model, ``evaluate`` a model report, ``sweep`` a study grid
or run the whole ``pipeline`` in one go.  Settings come from a JSON config
file (``--config``) with flags taking precedence.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import dmd as dmdmod
from . import pipeline as pl
from .errors import BreakIDError, NoModelError, StageError
from .forward import moment_report
from .griddata import read_series, write_series
from .library import assemble_ndot, build_library, case_truth, write_library

logger = logging.getLogger("breakid")

EXIT_NO_MODEL = 3
EXIT_ERROR = 1


def _floats(text: str) -> list[float]:
    """Comma list ``0.1,0.2`` or range ``start:stop:step`` (stop inclusive)."""
    if ":" in text:
        a, b, s = (float(x) for x in text.split(":"))
        n = int(round((b - a) / s)) + 1
        return [round(a + i * s, 12) for i in range(n)]
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text: str) -> list[int]:
    if ":" in text:
        a, b = (int(x) for x in text.split(":")[:2])
        return list(range(a, b + 1))
    return [int(x) for x in text.split(",") if x.strip()]


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--case", type=int, dest="case_id", help="benchmark case 1..6")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--noise", type=float, help="relative Gaussian noise level")
    p.add_argument("--timepoints", type=int, help="number of snapshots")


def _regression(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lambda-grid", type=_floats, dest="lambdas",
                   help="thresholds, '0.1,0.5' or '0.1:1:0.1'")
    p.add_argument("--bootstraps", type=int)
    p.add_argument("--aggregate", choices=pl.ENSEMBLING)
    p.add_argument("--ip-min", type=float, dest="ip_min")
    p.add_argument("--cov-max", type=float, dest="cov_max")
    p.add_argument("--eps", type=float)
    p.add_argument("--library-mode", dest="library_mode",
                   choices=pl.ADVICE_MODES + pl.FIXED_MODES + ("explicit",))
    p.add_argument("--terms", dest="library_terms", help="terms manifest for --library-mode explicit")
    p.add_argument("--workers", type=int)
    p.add_argument("--rank", type=int, dest="dmd_rank")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="breakid", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate a case or custom kernel")
    _common(g)
    g.add_argument("--refine", type=int)

    d = sub.add_parser("dmd-report", help="DMD modes, eigenvalues and library advice")
    _common(d)
    d.add_argument("--data", help="series directory (default: simulate --case)")
    d.add_argument("--rank", type=int, dest="dmd_rank")

    i = sub.add_parser("identify", help="fit and screen models on a series")
    _common(i)
    _regression(i)
    i.add_argument("--data", help="series directory (default: simulate --case)")
    i.add_argument("--advice", help="dmd_advice.json to drive the library")

    e = sub.add_parser("evaluate", help="score a model report")
    e.add_argument("report", help="model_report.json")
    e.add_argument("--case", type=int, dest="case_id", help="compare with the true equation")
    e.add_argument("--reference", help="another model report")
    e.add_argument("--data", help="series directory whose grid must match")
    e.add_argument("--out", help="write the evaluation JSON here")

    s = sub.add_parser("sweep", help="study grid against the true equations")
    _common(s)
    _regression(s)
    s.add_argument("--cases", type=_ints, default=[1])
    s.add_argument("--timepoints-list", type=_ints, dest="timepoint_list")
    s.add_argument("--noise-list", type=_floats, dest="noise_list")
    s.add_argument("--ensembling", default="bagging", help="comma list of none,bagging,bragging")
    s.add_argument("--library-modes", default="advice", help="comma list of library modes")
    s.add_argument("--seeds", type=_ints)

    p = sub.add_parser("pipeline", help="every stage end to end")
    _common(p)
    _regression(p)
    return ap


def config_from_args(args) -> pl.PipelineConfig:
    cfg = pl.PipelineConfig.load(args.config) if getattr(args, "config", None) else pl.PipelineConfig()
    names = {f.name for f in dataclasses.fields(pl.PipelineConfig)}
    over = {k: v for k, v in vars(args).items() if k in names and v is not None}
    cfg = dataclasses.replace(cfg, **over)
    if getattr(args, "data", None):
        cfg = dataclasses.replace(cfg, data_dir=args.data)
    return cfg.validate()


# ----------------------------------------------------------------- commands

def cmd_generate(args) -> int:
    cfg = config_from_args(args)
    series = pl.make_series(cfg, cfg.timepoints)
    out = Path(cfg.out)
    write_series(series.with_meta(config_hash=cfg.digest()), out)
    np.savetxt(out / "moments.csv", moment_report(series), delimiter=",", fmt="%.17g",
               header="t,M00,M10,M01,M11", comments="")
    print(f"wrote {series.n_times} snapshots to {out}")
    return 0


def cmd_dmd_report(args) -> int:
    cfg = config_from_args(args)
    n = cfg.dmd_timepoints if args.timepoints is None else cfg.timepoints
    series = pl.make_series(cfg, n, clean=cfg.noise == 0)
    advice, res, diag = pl.dmd_advice(series, cfg.dmd_rank)
    dmdmod.dmd_report(res, diag, cfg.out, advice, extra={"config_hash": cfg.digest()})
    print(json.dumps(advice, indent=2))
    return 0


def cmd_identify(args) -> int:
    cfg = config_from_args(args)
    series = pl.make_series(cfg, cfg.timepoints)
    advice = None
    if cfg.library_mode in pl.ADVICE_MODES:
        if args.advice:
            rec = json.loads(Path(args.advice).read_text())
            advice = rec.get("advice", rec)
        else:
            src = series if cfg.data_dir or cfg.dmd_source == "data" else \
                pl.make_series(cfg, cfg.dmd_timepoints, clean=True)
            advice = pl.dmd_advice(src, cfg.dmd_rank)[0]
    desc = pl.descriptors_for(cfg, advice)
    lib = build_library(series, desc, cfg.interpolate)
    ident = pl.identify(lib, assemble_ndot(series), cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_library(lib, out / "library")
    for lam, ens in ident.ensembles.items():
        pl.stamp_csv(ens.write_csv(out / f"ensemble_lambda_{lam:g}.csv", lib.names), cfg.digest())
    report = pl.model_report(ident, cfg, series.grid.fingerprint(), advice, pl.truth_for(cfg, series))
    pl.dump_json(report, out / "model_report.json")
    _print_model(report)
    return 0 if report["status"] == "ok" else EXIT_NO_MODEL


def cmd_evaluate(args) -> int:
    report = json.loads(Path(args.report).read_text())
    reference = json.loads(Path(args.reference).read_text()) if args.reference else None
    grid_hash = read_series(args.data).grid.fingerprint() if args.data else None
    truth = case_truth(args.case_id) if args.case_id else None
    res = pl.evaluate_reports(report, truth, reference, grid_hash)
    text = json.dumps(res, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return 0


def cmd_sweep(args) -> int:
    cfg = config_from_args(args)
    out = Path(cfg.out)
    rows = pl.run_sweep(cfg, args.cases, args.timepoint_list or [cfg.timepoints],
                        args.noise_list or [cfg.noise],
                        [x.strip() for x in args.ensembling.split(",")],
                        [x.strip() for x in args.library_modes.split(",")],
                        args.seeds, csv_path=out / "sweep.csv")
    failed = sum(r["status"] == "failed" for r in rows)
    print(f"{len(rows)} cells ({failed} failed) -> {out / 'sweep.csv'}")
    return 0


def cmd_pipeline(args) -> int:
    cfg = config_from_args(args)
    summary = pl.run_pipeline(cfg)
    if summary["status"] != "ok":
        print("no model identified", file=sys.stderr)
        return EXIT_NO_MODEL
    _print_model(summary | {"terms": summary["model"]})
    return 0


def _print_model(rep: dict) -> None:
    if rep.get("status") != "ok":
        print(f"no model: {rep.get('error', '')}")
        return
    print(f"lambda = {rep['lambda']:g}")
    for t in rep["terms"]:
        print(f"  {t['coefficient']:+.6g} {t['name']}")
    ev = rep.get("evaluation")
    if ev:
        print(f"success rate {ev['success_rate']:.1f}%  E_c {ev['coefficient_error']:.4g}")


COMMANDS = {"generate": cmd_generate, "dmd-report": cmd_dmd_report, "identify": cmd_identify,
            "evaluate": cmd_evaluate, "sweep": cmd_sweep, "pipeline": cmd_pipeline}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except NoModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_MODEL
    except StageError as exc:
        if isinstance(exc.cause, NoModelError):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_NO_MODEL
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except BreakIDError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

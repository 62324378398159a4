"""End-to-end identification runs and parameter sweeps.

A run goes: generate (or load) data, optionally add noise, decompose with
DMD to get library advice, build the library, fit a bootstrap ensemble of
cb-STLS models for every threshold, screen the aggregated models with the
cost function and, when the true equation is known, score the winner.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import dmd as dmdmod
from .ensemble import aggregate, bootstrap_fit
from .errors import BreakIDError, ConfigError, DomainError, InfeasibleError, StageError
from .forward import (case_initial_kind, case_kernels, case_refine, case_time_window,
                      generate_series, kernel_from_dict)
from .griddata import (BY_COUNT, Grid2D, SnapshotSeries, add_noise, case_grid, make_grid,
                       read_series, subsample_time, write_series)
from .library import (CandidateLibrary, TermDescriptor, assemble_ndot, build_library,
                      case_truth, descriptors_from_manifest, descriptors_to_manifest,
                      load_manifest, standard_library, truth_vector, write_library)
from .regression import DEFAULT_LAMBDAS, ConstraintOptions, cb_stls
from .selection import DEFAULT_WEIGHTS, coefficient_error, select_model, success_rate

logger = logging.getLogger(__name__)

ENSEMBLING = ("none", "bagging", "bragging")
ADVICE_MODES = ("advice", "advice-driven", "post-dmd")
FIXED_MODES = ("pre-dmd", "continuous", "semi-continuous", "discontinuous")


@dataclass
class PipelineConfig:
    """Settings of one identification run.

    Either ``case_id`` (a benchmark case, which also provides the true
    equation) or ``kernel`` (a kernel manifest record, see
    :func:`breakid.forward.kernel_from_dict`) or ``data_dir`` (load a saved
    series) selects the data.  ``library_mode`` is ``"advice"`` to follow the
    DMD advice, one of the fixed standard libraries, or ``"explicit"`` with
    ``library_terms`` (a manifest path or a list of term records).
    """

    case_id: int | None = 1
    kernel: dict | None = None
    data_dir: str | None = None
    grid: dict | None = None
    t_window: list | None = None
    timepoints: int = 10
    initial_condition: str | None = None
    refine: int | None = None
    noise: float = 0.0
    seed: int = 0
    dmd_rank: int = 10
    dmd_timepoints: int = 25
    dmd_source: str = "clean"
    library_mode: str = "advice"
    library_terms: list | str | None = None
    exponents: list = field(default_factory=lambda: [-2, -1, 0, 1, 2])
    delta_ratio: list = field(default_factory=lambda: [0.5, 0.5])
    interpolate: bool = False
    lambdas: list = field(default_factory=lambda: list(DEFAULT_LAMBDAS))
    eps: float = 1e-4
    row_threshold: float = 0.1
    sign_consistent: bool = True
    constraint_subsample: float | None = None
    bootstraps: int = 100
    aggregate: str = "bagging"
    ip_min: float = 0.65
    cov_max: float = 1.0
    cost_weights: list = field(default_factory=lambda: list(DEFAULT_WEIGHTS))
    holdout_fraction: float = 0.0
    workers: int = 1
    out: str = "run"

    def validate(self) -> "PipelineConfig":
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.case_id is not None or self.kernel is not None or self.data_dir,
             "one of case_id, kernel or data_dir is required")
        if self.case_id is not None:
            need(self.case_id in range(1, 7), "case_id must be 1..6")
        if self.kernel is not None:
            need(self.grid is not None and self.t_window is not None,
                 "a custom kernel needs grid and t_window")
        need(self.timepoints >= 3, "timepoints must be >= 3")
        need(self.dmd_timepoints >= 3, "dmd_timepoints must be >= 3")
        need(self.dmd_source in ("clean", "data"), "dmd_source must be 'clean' or 'data'")
        need(self.noise >= 0, "noise must be >= 0")
        need(self.dmd_rank >= 1, "dmd_rank must be >= 1")
        need(self.library_mode in ADVICE_MODES + FIXED_MODES + ("explicit",),
             f"unknown library_mode {self.library_mode!r}")
        if self.library_mode == "explicit":
            need(bool(self.library_terms), "explicit library_mode needs library_terms")
        need(len(self.exponents) > 0, "exponent list is empty")
        need(len(self.lambdas) > 0, "lambda grid is empty")
        need(all(l > 0 for l in self.lambdas), "lambdas must be positive")
        need(self.eps > 0, "eps must be positive")
        need(self.row_threshold >= 0, "row_threshold must be >= 0")
        need(self.constraint_subsample is None or 0 < self.constraint_subsample <= 1,
             "constraint_subsample must lie in (0, 1]")
        need(self.bootstraps >= 1, "bootstraps must be >= 1")
        need(self.aggregate in ENSEMBLING, f"aggregate must be one of {ENSEMBLING}")
        need(0 <= self.ip_min <= 1, "ip_min must lie in [0, 1]")
        need(self.cov_max >= 0, "cov_max must be >= 0")
        need(len(self.cost_weights) == 3, "cost_weights needs three values")
        need(0 <= self.holdout_fraction < 1, "holdout_fraction must lie in [0, 1)")
        need(self.workers >= 1, "workers must be >= 1")
        return self

    # -- serialisation
    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from None

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_json())
        return path

    def digest(self) -> str:
        """Hash of every setting except the output directory."""
        d = self.to_dict()
        d.pop("out", None)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def constraint_options(self) -> ConstraintOptions:
        return ConstraintOptions(eps=self.eps, threshold=self.row_threshold,
                                 sign_consistent=self.sign_consistent,
                                 subsample=self.constraint_subsample, seed=self.seed)


# ------------------------------------------------------------------ data

def _grid(cfg: PipelineConfig) -> Grid2D:
    if cfg.grid is None:
        return case_grid(cfg.case_id)
    g = cfg.grid
    axis = make_grid(g["lower"], g["upper"], g["count"], g.get("mode", BY_COUNT), g.get("ratio"))
    return Grid2D(axis, axis)


def make_series(cfg: PipelineConfig, n_times: int, clean: bool = False) -> SnapshotSeries:
    """Data described by ``cfg`` with ``n_times`` snapshots (noise unless ``clean``)."""
    if cfg.data_dir:
        series = read_series(cfg.data_dir)
        if n_times < series.n_times:
            series = subsample_time(series, n_times)
    else:
        if cfg.kernel is not None:
            kernel = kernel_from_dict(cfg.kernel)
            ic = cfg.initial_condition or "monodisperse"
            refine = cfg.refine or 1
            tw = tuple(cfg.t_window)
            meta = {}
        else:
            kernel = case_kernels(cfg.case_id)
            ic = cfg.initial_condition or case_initial_kind(cfg.case_id)
            refine = case_refine(cfg.case_id) if cfg.refine is None else cfg.refine
            tw = tuple(cfg.t_window) if cfg.t_window else case_time_window(cfg.case_id)
            meta = {"case_id": cfg.case_id}
        series = generate_series(kernel, _grid(cfg), n_times, tw, ic, refine, meta=meta)
    if not clean and cfg.noise > 0:
        series = add_noise(series, cfg.noise, cfg.seed)
    return series


def truth_for(cfg: PipelineConfig, series: SnapshotSeries | None = None
              ) -> dict[TermDescriptor, float] | None:
    """True equation of the run, if known (loaded data carry their case id)."""
    if cfg.data_dir:
        case = (series.meta or {}).get("case_id") if series is not None else None
        return case_truth(int(case)) if case else None
    if cfg.kernel is None and cfg.case_id is not None:
        return case_truth(cfg.case_id)
    return None


# -------------------------------------------------------------- library

def dmd_advice(series: SnapshotSeries, rank: int) -> tuple[dict, dmdmod.DMDResult, dmdmod.SpectralDiagnostics]:
    res = dmdmod.dmd_of_series(series, rank)
    diag = dmdmod.spectral_diagnostics(res, series.grid)
    return dmdmod.library_advice(diag), res, diag


def descriptors_for(cfg: PipelineConfig, advice: dict | None) -> list[TermDescriptor]:
    mode = cfg.library_mode
    exps = list(cfg.exponents)
    theta = tuple(cfg.delta_ratio)
    if mode == "explicit":
        terms = cfg.library_terms
        if isinstance(terms, str):
            return load_manifest(terms)
        return descriptors_from_manifest(terms)
    if mode in ADVICE_MODES:
        if advice is None:
            raise DomainError("advice-driven library needs a DMD advice record")
        lib_mode, size_indep = dmdmod.advice_library_mode(advice)
        logger.info("DMD advice: rate %s, continuity %s -> library %s%s", advice["rate"],
                    advice["continuity"], lib_mode, " (D(1) only)" if size_indep else "")
        return standard_library(lib_mode, exps, size_indep, theta)
    return standard_library(mode, exps, False, theta)


# ------------------------------------------------------------- identify

@dataclass
class Identification:
    library: CandidateLibrary
    ndot: np.ndarray
    pool: list                 # (lambda, xi)
    ensembles: dict            # lambda -> EnsembleResult (empty without ensembling)
    selection: object | None
    stls_seconds: float
    error: str = ""

    @property
    def xi(self) -> np.ndarray:
        if self.selection is None:
            return np.zeros(len(self.library.descriptors))
        return self.selection.xi


def identify(library: CandidateLibrary, ndot: np.ndarray, cfg: PipelineConfig,
             ensembling: str | None = None) -> Identification:
    """Fit every threshold of ``cfg.lambdas`` and pick the best model.

    ``ensembling`` overrides ``cfg.aggregate``; ``"none"`` runs one cb-STLS
    fit per threshold on all rows.
    """
    mode = ensembling or cfg.aggregate
    theta, is_birth = library.theta, library.is_birth
    rows = np.arange(theta.shape[0])
    score_rows = None
    if cfg.holdout_fraction > 0:
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 7919]))
        perm = rng.permutation(theta.shape[0])
        n_hold = int(round(cfg.holdout_fraction * perm.size))
        score_rows, rows = np.sort(perm[:n_hold]), np.sort(perm[n_hold:])
    A, b = theta[rows], ndot[rows]
    opts = cfg.constraint_options()
    pool, ensembles = [], {}
    t_fit = 0.0
    for lam in cfg.lambdas:
        t0 = time.perf_counter()
        if mode == "none":
            try:
                xi = cb_stls(A, b, lam, is_birth, opts).xi
            except InfeasibleError as exc:
                logger.info("lambda %g: %s", lam, exc)
                xi = np.zeros(theta.shape[1])
        else:
            members = bootstrap_fit(A, b, lam, is_birth, opts, cfg.bootstraps, cfg.seed, cfg.workers)
            ens = aggregate(members, mode, cfg.ip_min, cfg.cov_max, cfg.seed)
            ensembles[float(lam)] = ens
            xi = ens.xi
        t_fit += time.perf_counter() - t0
        pool.append((float(lam), xi))
    try:
        sel = select_model(pool, theta, ndot, is_birth, tuple(cfg.cost_weights), score_rows)
        err = ""
    except BreakIDError as exc:
        sel, err = None, str(exc)
    return Identification(library, ndot, pool, ensembles, sel, t_fit, err)


def score_against_truth(terms: Sequence, xi: np.ndarray, truth: dict[TermDescriptor, float]) -> dict:
    """Success rate over the library and coefficient error over library plus true terms.

    ``terms`` holds descriptors or display names; terms are matched by name.
    """
    names = [getattr(t, "name", t) for t in terms]
    xt, complete = truth_vector(truth, [_Named(n) for n in names])
    sr = success_rate(np.flatnonzero(xt), np.flatnonzero(xi), len(names))
    missing = [c for d, c in truth.items() if d.name not in set(names)]
    full_true = np.concatenate([xt, missing])
    full_est = np.concatenate([np.asarray(xi, float), np.zeros(len(missing))])
    return {"success_rate": sr, "coefficient_error": coefficient_error(full_true, full_est),
            "truth_in_library": bool(complete)}


@dataclass(frozen=True)
class _Named:
    name: str


# -------------------------------------------------------------- reports

def stamp_csv(path: Path, digest: str) -> None:
    text = path.read_text()
    path.write_text(f"# config_hash={digest}\n" + text)


def model_report(ident: Identification, cfg: PipelineConfig, grid_hash: str,
                 advice: dict | None, truth: dict | None) -> dict:
    lib = ident.library
    rep = {"config_hash": cfg.digest(), "grid_hash": grid_hash, "case_id": cfg.case_id,
           "library_mode": cfg.library_mode, "library_size": len(lib.descriptors),
           "library_terms": lib.names, "advice": advice, "ensembling": cfg.aggregate,
           "bootstraps": cfg.bootstraps, "ip_min": cfg.ip_min, "cov_max": cfg.cov_max,
           "cov_convention": "std/|mean| over members with the term non-zero",
           "seed": cfg.seed, "noise": cfg.noise, "timepoints": cfg.timepoints}
    if ident.selection is None:
        rep.update({"status": "no-model", "error": ident.error})
        return rep
    sel = ident.selection
    rep.update({
        "status": "ok", "lambda": sel.lam,
        "terms": [{"name": lib.names[i], "coefficient": float(sel.xi[i]),
                   "side": lib.descriptors[i].side} for i in np.flatnonzero(sel.xi)],
        "cost": sel.score.to_dict(),
        "pool": [{"lambda": lam, **sc.to_dict()} for lam, sc in sel.scores],
    })
    if truth is not None:
        rep["evaluation"] = score_against_truth(lib.descriptors, sel.xi, truth)
        rep["truth"] = [{"name": d.name, "coefficient": c} for d, c in truth.items()]
    return rep


def dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable))


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def _stage(name):
    def wrap(fn, *a, **kw):
        try:
            return fn(*a, **kw)
        except StageError:
            raise
        except Exception as exc:  # tag and re-raise
            raise StageError(name, exc) from exc
    return wrap


def run_pipeline(cfg: PipelineConfig, write_theta: bool = True) -> dict:
    """Execute every stage and write the artifacts under ``cfg.out``.

    Returns the summary dict; ``summary["status"]`` is ``"no-model"`` when
    screening found no non-empty model.
    """
    cfg.validate()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    digest = cfg.digest()
    cfg.save(out / "config.json")
    timings = {}

    t0 = time.perf_counter()
    series = _stage("generate")(make_series, cfg, cfg.timepoints)
    timings["generate_s"] = time.perf_counter() - t0
    write_series(series.with_meta(config_hash=digest), out / "data")

    t0 = time.perf_counter()
    if cfg.dmd_source == "clean" and not cfg.data_dir:
        dmd_series = _stage("dmd")(make_series, cfg, cfg.dmd_timepoints, True)
    else:
        dmd_series = series
    advice, res, diag = _stage("dmd")(dmd_advice, dmd_series, cfg.dmd_rank)
    dmdmod.dmd_report(res, diag, out / "dmd", advice,
                      extra={"config_hash": digest, "source": cfg.dmd_source,
                             "snapshots": dmd_series.n_times})
    stamp_csv(out / "dmd" / "eigenvalues.csv", digest)
    timings["dmd_s"] = time.perf_counter() - t0

    descriptors = _stage("library")(descriptors_for, cfg, advice)
    lib = _stage("library")(build_library, series, descriptors, cfg.interpolate)
    ndot = _stage("library")(assemble_ndot, series)
    if write_theta:
        write_library(lib, out / "library")
    else:
        (out / "library").mkdir(exist_ok=True)
        dump_json({"shape": list(lib.shape), "grid_hash": lib.grid_hash,
                   "terms": descriptors_to_manifest(lib.descriptors)}, out / "library" / "terms.json")

    ident = _stage("identify")(identify, lib, ndot, cfg)
    timings["cb_stls_s"] = ident.stls_seconds
    ens_dir = out / "ensembles"
    ens_dir.mkdir(exist_ok=True)
    for lam, ens in ident.ensembles.items():
        p = ens.write_csv(ens_dir / f"lambda_{lam:g}.csv", lib.names)
        stamp_csv(p, digest)

    truth = truth_for(cfg, series)
    report = model_report(ident, cfg, series.grid.fingerprint(), advice, truth)
    dump_json(report, out / "model_report.json")
    summary = {"config_hash": digest, "status": report["status"],
               "library_size": len(descriptors), "timings": timings,
               "model": report.get("terms"), "evaluation": report.get("evaluation"),
               "lambda": report.get("lambda"), "advice": advice}
    dump_json(summary, out / "summary.json")
    return summary


# ----------------------------------------------------------------- sweep

SWEEP_FIELDS = ["case_id", "library_mode", "timepoints", "noise", "seed", "ensembling",
                "library_size", "truth_in_library", "success_rate", "coefficient_error",
                "cb_stls_seconds", "lambda", "n_terms", "status", "error"]


def run_sweep(cfg: PipelineConfig, cases: Sequence[int] = (1,), timepoints: Sequence[int] = (10,),
              noise_levels: Sequence[float] = (0.0,), ensembling: Sequence[str] = ("bagging",),
              library_modes: Sequence[str] = ("advice",), seeds: Sequence[int] | None = None,
              csv_path=None) -> list[dict]:
    """Grid of identification runs against the benchmark truth.

    Each cell logs its seed; a failing cell is recorded with its error and
    the sweep carries on.
    """
    for e in ensembling:
        if e not in ENSEMBLING:
            raise ConfigError(f"unknown ensembling mode {e!r}")
    seeds = list(seeds) if seeds is not None else [cfg.seed]
    rows = []
    for case in cases:
        base = dataclasses.replace(cfg, case_id=case, kernel=None, data_dir=None)
        advice = None
        if any(m in ADVICE_MODES for m in library_modes):
            clean = make_series(base, base.dmd_timepoints, clean=True)
            advice = dmd_advice(clean, base.dmd_rank)[0]
        truth = case_truth(case)
        for tp in timepoints:
            for noise in noise_levels:
                for seed in seeds:
                    cell = dataclasses.replace(base, timepoints=tp, noise=noise, seed=seed)
                    try:
                        series = make_series(cell, tp)
                        ndot = assemble_ndot(series)
                    except Exception as exc:
                        for mode in library_modes:
                            for ens in ensembling:
                                rows.append(_failed(cell, mode, ens, exc))
                        continue
                    for mode in library_modes:
                        try:
                            desc = descriptors_for(dataclasses.replace(cell, library_mode=mode), advice)
                            lib = build_library(series, desc, cell.interpolate)
                        except Exception as exc:
                            for ens in ensembling:
                                rows.append(_failed(cell, mode, ens, exc))
                            continue
                        for ens in ensembling:
                            try:
                                ident = identify(lib, ndot, cell, ens)
                                row = _cell_row(cell, mode, ens, lib, ident, truth)
                            except Exception as exc:
                                row = _failed(cell, mode, ens, exc)
                            logger.info("sweep cell %s", row)
                            rows.append(row)
    if csv_path is not None:
        write_sweep_csv(rows, csv_path, cfg.digest())
    return rows


def _cell_row(cfg, mode, ens, lib, ident, truth) -> dict:
    row = {"case_id": cfg.case_id, "library_mode": mode, "timepoints": cfg.timepoints,
           "noise": cfg.noise, "seed": cfg.seed, "ensembling": ens,
           "library_size": len(lib.descriptors), "cb_stls_seconds": ident.stls_seconds}
    ev = score_against_truth(lib.descriptors, ident.xi, truth)
    row.update(ev)
    row["truth_in_library"] = "yes" if ev["truth_in_library"] else "truth-not-in-library"
    if ident.selection is None:
        row.update({"status": "no-model", "error": ident.error, "lambda": "", "n_terms": 0})
    else:
        row.update({"status": "ok", "error": "", "lambda": ident.selection.lam,
                    "n_terms": int(np.count_nonzero(ident.xi))})
    return row


def _failed(cfg, mode, ens, exc) -> dict:
    return {"case_id": cfg.case_id, "library_mode": mode, "timepoints": cfg.timepoints,
            "noise": cfg.noise, "seed": cfg.seed, "ensembling": ens, "status": "failed",
            "error": f"{type(exc).__name__}: {exc}"}


def write_sweep_csv(rows: list[dict], path, digest: str = "") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        if digest:
            fh.write(f"# config_hash={digest}\n")
        w = csv.DictWriter(fh, fieldnames=SWEEP_FIELDS, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k, "") for k in SWEEP_FIELDS})
    return path


# -------------------------------------------------------------- evaluate

def evaluate_reports(report: dict, truth: dict[TermDescriptor, float] | None = None,
                     reference: dict | None = None, grid_hash: str | None = None) -> dict:
    """Score a model report against a true equation or a reference report.

    Refuses to compare artifacts built on different grids.
    """
    for other, what in ((reference, "reference report"), ({"grid_hash": grid_hash}, "data")):
        if other is None or other.get("grid_hash") in (None, ""):
            continue
        if other["grid_hash"] != report.get("grid_hash"):
            raise DomainError(f"grid hash mismatch between model report and {what}")
    names = report.get("library_terms", [])
    coef = {t["name"]: t["coefficient"] for t in report.get("terms", [])}
    out = {"config_hash": report.get("config_hash"), "grid_hash": report.get("grid_hash")}
    if truth is not None:
        xi = np.array([coef.get(n, 0.0) for n in names])
        out.update(score_against_truth(names, xi, truth))
    if reference is not None:
        ref = {t["name"]: t["coefficient"] for t in reference.get("terms", [])}
        allnames = sorted(set(ref) | set(coef))
        a = np.array([ref.get(n, 0.0) for n in allnames])
        b = np.array([coef.get(n, 0.0) for n in allnames])
        out["reference_coefficient_error"] = coefficient_error(a, b) if np.any(a) else None
        out["same_support"] = set(ref) == set(coef)
    return out

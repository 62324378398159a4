"""Acceptance checks, one PASS/FAIL line per criterion in the terminal summary.

Tolerances are pinned here; see the decision ledger for every criterion
that stays red.
"""
import time
from functools import lru_cache

import numpy as np
import pytest

from breakid import dmd
from breakid import pipeline as pl
from breakid.ensemble import aggregate
from breakid.forward import generate_case, moment
from breakid.griddata import RATIO_ANCHORED, Grid2D, case_grid, make_grid
from breakid.library import (assemble_ndot, build_library, case_truth, standard_library)
from breakid.regression import cb_stls, constrained_lsq
from breakid.selection import coefficient_error, success_rate

# ---------------------------------------------------------------- 1. moments

FINE = make_grid(0.05, 5.0, 31)
ORACLES = {
    1: {"M00": lambda t: np.exp(3 * t), "M11": lambda t: np.ones_like(t)},
    2: {"M11": lambda t: np.ones_like(t)},
    3: {"M00": lambda t: np.exp(t), "M11": lambda t: np.exp(-t / 2)},
    5: {"M00": lambda t: 1 + 25 * t, "M11": lambda t: np.ones_like(t)},
    6: {"M00": lambda t: np.exp(0.75 * t), "M11": lambda t: np.ones_like(t)},
}


def _moment_errors(case, grid, subgrid):
    s = generate_case(case, n_times=11, grid=grid, t_window=(0.0, 1.0), subgrid=subgrid,
                      refine=1, backend="expm")
    out = {}
    for key, f in ORACLES[case].items():
        p = 0 if key == "M00" else 1
        m = moment(s, p, p)
        out[key] = float(np.max(np.abs(m / m[0] - f(s.times)) / f(s.times)))
    return out


@pytest.mark.parametrize("case", [1, 2, 3, 5, 6])
def test_c1_moment_oracles(case, criterion):
    t0 = time.perf_counter()
    if case == 6:
        # ratio-2 mesh; refinement adds two pivots at the bottom
        ax = make_grid(1e-6, 5.0, 17, RATIO_ANCHORED, 2.0)
        base, fine = _moment_errors(6, case_grid(6), "drop"), _moment_errors(6, Grid2D(ax, ax), "drop")
    else:
        base = _moment_errors(case, case_grid(case), "assign")
        fine = _moment_errors(case, Grid2D(FINE, FINE), "assign")
    elapsed = time.perf_counter() - t0
    for key in base:
        ok = base[key] <= 0.05 and fine[key] <= 0.05
        # machine-precision oracles cannot shrink further
        ok &= fine[key] < base[key] or max(base[key], fine[key]) < 1e-12
        criterion(1, ok, f"case {case} {key} {base[key]:.2e}->{fine[key]:.2e}")
    criterion(1, elapsed <= 60, "")


# ---------------------------------------------------------------- 2-3. DMD

@lru_cache(maxsize=None)
def _spectrum(case):
    s = generate_case(case, n_times=25)
    res = dmd.dmd_of_series(s, rank=10)
    return res, dmd.spectral_diagnostics(res, s.grid)


@pytest.mark.parametrize("case", range(1, 7))
def test_c2_dmd_energy(case, criterion):
    res, _ = _spectrum(case)
    criterion(2, res.energy_fraction >= 0.99 and res.rank <= 10,
              f"case {case} energy {res.energy_fraction:.4f}")


def test_c3_rate_dependence(criterion):
    disp = {c: _spectrum(c)[1].radii_dispersion for c in range(1, 7)}
    for lo, hi in ((1, 2), (3, 4), (6, 5)):
        criterion(3, disp[lo] < disp[hi], f"case {lo} {disp[lo]:.3f} < case {hi} {disp[hi]:.3f}")
    d1 = _spectrum(1)[1]
    criterion(3, d1.growth_count > len(d1.radii) / 2,
              f"case 1 radii > 1: {d1.growth_count}/{len(d1.radii)}")


# ---------------------------------------------------------------- 4. rediscovery

@lru_cache(maxsize=None)
def _rediscover(case, bootstraps):
    cfg = pl.PipelineConfig(case_id=case, bootstraps=bootstraps, aggregate="bagging")
    t0 = time.perf_counter()
    series = pl.make_series(cfg, 10)
    advice = pl.dmd_advice(pl.make_series(cfg, cfg.dmd_timepoints, clean=True), cfg.dmd_rank)[0]
    lib = build_library(series, pl.descriptors_for(cfg, advice))
    ident = pl.identify(lib, assemble_ndot(series), cfg)
    ev = pl.score_against_truth(lib.descriptors, ident.xi, case_truth(case))
    return ev["success_rate"], ev["coefficient_error"], time.perf_counter() - t0


@pytest.mark.parametrize("case", [1, 3, 6])
def test_c4_smoke_exact_cases(case, criterion):
    sr, ec, _ = _rediscover(case, 20)
    criterion(4, sr == 100.0 and ec <= 0.1, f"smoke case {case} SR {sr:.0f}% E_c {ec:.3f}")


@pytest.mark.parametrize("case", range(1, 7))
def test_c4_full_satisfactory(case, criterion):
    sr, ec, _ = _rediscover(case, 100)
    criterion(4, sr >= 85.0 and ec <= 1.0, f"case {case} SR {sr:.0f}% E_c {ec:.3f}")


@pytest.mark.parametrize("case", [
    pytest.param(1, marks=pytest.mark.xfail(strict=True, reason="E_c 0.103 with 100 bootstraps")),
    3, 6])
def test_c4_full_exact_cases(case, criterion):
    sr, ec, _ = _rediscover(case, 100)
    criterion(4, sr == 100.0 and ec <= 0.1, f"exact case {case} SR {sr:.0f}% E_c {ec:.3f}")


def test_c4_full_runtime(criterion):
    total = sum(_rediscover(c, 100)[2] for c in range(1, 7))
    criterion(4, total <= 1800, f"100 bootstraps, {total:.0f} s")


# ---------------------------------------------------------------- 5. noise

SEEDS = range(5)


@lru_cache(maxsize=None)
def _noisy(seed, ensembling):
    cfg = pl.PipelineConfig(case_id=1, noise=0.05, seed=seed, bootstraps=20)
    advice = pl.dmd_advice(pl.make_series(cfg, cfg.dmd_timepoints, clean=True), cfg.dmd_rank)[0]
    series = pl.make_series(cfg, 10)
    lib = build_library(series, pl.descriptors_for(cfg, advice))
    ident = pl.identify(lib, assemble_ndot(series), cfg, ensembling)
    return pl.score_against_truth(lib.descriptors, ident.xi, case_truth(1))["success_rate"]


def test_c5_bagging_median(criterion):
    med = float(np.median([_noisy(s, "bagging") for s in SEEDS]))
    criterion(5, med >= 85.0, f"bagging median SR {med:.0f}% over {len(SEEDS)} seeds")


@pytest.mark.xfail(strict=True, reason="baseline already identifies the model on noisy data")
def test_c5_baseline_below_bagging(criterion):
    base = float(np.median([_noisy(s, "none") for s in SEEDS]))
    bag = float(np.median([_noisy(s, "bagging") for s in SEEDS]))
    criterion(5, base < bag, f"baseline {base:.0f}% vs bagging {bag:.0f}%")


# ---------------------------------------------------------------- 6. library sizes

def _advised(case):
    s = generate_case(case, n_times=25)
    advice = pl.dmd_advice(s, 10)[0]
    return pl.descriptors_for(pl.PipelineConfig(case_id=case), advice)


def test_c6_library_sizes(criterion):
    pre = len(standard_library("pre-dmd"))
    criterion(6, pre == 50, f"pre-DMD {pre}")
    n5 = len(_advised(5))
    criterion(6, n5 == 75, f"case 5 {n5}")
    n6 = len(_advised(6))
    criterion(6, n6 == 2, f"case 6 {n6}")
    for case in (1, 3):
        desc = _advised(case)
        deaths = [d.name for d in desc if d.side == "death"]
        red = 1 - len(desc) / pre
        criterion(6, deaths == ["D(1)"] and len(desc) == 26,
                  f"case {case} {len(desc)} terms, death {deaths}, reduction {red:.0%}")


# ---------------------------------------------------------------- 7. oracles

def test_c7_micro_oracles(criterion):
    # unconstrained optimum [1, 0]; the death bound pushes xi_D to -eps
    G = np.array([[-1.0, 0.0], [0.0, 1.0]])
    h = np.array([-1e-4, -1e-4])
    r = constrained_lsq(np.eye(2), np.array([1.0, 0.0]), G, h)
    criterion(7, np.allclose(r.xi, [1.0, -1e-4], atol=1e-6), f"hand KKT {r.xi}")

    rng = np.random.default_rng(0)
    A = rng.uniform(0.5, 2.0, size=(80, 6))
    xi = np.array([3.0, 0, 0, -2.0, 0, 0])
    sol = cb_stls(A, A @ xi, 0.5, [True] * 3 + [False] * 3)
    criterion(7, np.allclose(sol.xi, xi, atol=1e-8), "cb-STLS exact recovery")

    criterion(7, coefficient_error([4, -1], [4, -1.1]) == pytest.approx(0.1 / np.sqrt(17), rel=1e-12)
              and coefficient_error([4, -1], [0, 0]) == 1.0, "E_c examples")
    criterion(7, success_rate([0, 1], [0], 2) == 50.0
              and success_rate([0, 1], [0, 1, 7, 9], 50) == 96.0, "success-rate examples")
    res = aggregate([[1.0], [1.0], [10.0]], ip_min=0, cov_max=np.inf)
    half = aggregate(np.r_[np.ones((50, 1)), np.zeros((50, 1))])
    criterion(7, res.bagging[0] == 4.0 and res.bragging[0] == 1.0
              and half.inclusion_probability[0] == 0.5 and half.xi[0] == 0.0, "aggregation counts")


# ---------------------------------------------------------------- 8. timing

def _stls_time(lib, ndot, cfg, repeats=3):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        for lam in cfg.lambdas:
            cb_stls(lib.theta, ndot, lam, lib.is_birth, cfg.constraint_options())
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


@pytest.mark.parametrize("case", [1, 3])
def test_c8_post_dmd_faster(case, criterion):
    cfg = pl.PipelineConfig(case_id=case)
    s = pl.make_series(cfg, 10)
    ndot = assemble_ndot(s)
    post = _stls_time(build_library(s, _advised(case)), ndot, cfg)
    pre = _stls_time(build_library(s, standard_library("pre-dmd")), ndot, cfg)
    criterion(8, post < pre, f"case {case} post {post:.2f} s < pre {pre:.2f} s")

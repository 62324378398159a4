"""Regression target and candidate-term library for breakage identification.

Rows of both the target ``ndot`` and the library ``Theta`` are stacked
pivot-major, time-minor: row ``(i * y + j) * z + k`` holds pivot
``(v_i, w_j)`` at time ``t_k``.  That is exactly ``density.ravel()`` for a
density tensor of shape ``(x, y, z)``.

Birth integrals run from the evaluation pivot up to the largest pivot with
the trapezoid rule on the pivot sub-grid.  Dirac deltas are collapsed
analytically before any quadrature, and a delta sitting on an integration
limit counts with full weight.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionMismatchError, DomainError, IncompatibleGridError, ParseError
from .griddata import SnapshotSeries

logger = logging.getLogger(__name__)

BIRTH, DEATH = "birth", "death"
FORMS = ("monomial", "continuous", "delta_v", "delta_w", "product_delta")
DEFAULT_EXPONENTS = (-2, -1, 0, 1, 2)
LIBRARY_MODES = ("pre-dmd", "continuous", "semi-continuous", "discontinuous", "custom")


def _fmt_exp(sym: str, e) -> str:
    e = Fraction(e).limit_denominator(1000)
    a = abs(e)
    return sym if a == 1 else f"{sym}^{a}"


def monomial_label(p, q, prime: bool) -> str:
    """``v'^2/w'``-style label of ``v^p w^q``; ``"1"`` for the constant."""
    sv, sw = ("v'", "w'") if prime else ("v", "w")
    num = [_fmt_exp(s, e) for s, e in ((sv, p), (sw, q)) if e > 0]
    den = [_fmt_exp(s, e) for s, e in ((sv, p), (sw, q)) if e < 0]
    top = "".join(num) if num else "1"
    if not den:
        return top
    bottom = "".join(den)
    if len(den) > 1:
        bottom = f"({bottom})"
    return f"{top}/{bottom}"


@dataclass(frozen=True)
class TermDescriptor:
    """One library column.

    ``form`` is ``"monomial"`` for death terms ``D(v^p w^q)``; for birth terms
    it is ``"continuous"`` (``B(v'^p w'^q)``), ``"delta_v"``
    (``B(v'^p w'^q d(v-v'))``), ``"delta_w"`` or ``"product_delta"``
    (``B(d(v-theta_v v') d(w-theta_w w'))``).
    """

    side: str
    form: str
    p: float = 0
    q: float = 0
    theta_v: float = 1.0
    theta_w: float = 1.0
    name: str = ""

    def __post_init__(self):
        if self.side not in (BIRTH, DEATH):
            raise DomainError(f"side must be birth or death, got {self.side!r}")
        if self.form not in FORMS:
            raise DomainError(f"unknown term form {self.form!r}")
        if (self.side == DEATH) != (self.form == "monomial"):
            raise DomainError("death terms are monomials and birth terms are not")
        if not (0 < self.theta_v <= 1 and 0 < self.theta_w <= 1):
            raise DomainError("delta ratios must lie in (0, 1]")
        if not self.name:
            object.__setattr__(self, "name", self.default_name())

    def default_name(self) -> str:
        if self.form == "monomial":
            return f"D({monomial_label(self.p, self.q, prime=False)})"
        if self.form == "continuous":
            return f"B({monomial_label(self.p, self.q, prime=True)})"
        if self.form in ("delta_v", "delta_w"):
            pre = monomial_label(self.p, self.q, prime=True)
            pre = "" if pre == "1" else pre
            d = "δ(v-v')" if self.form == "delta_v" else "δ(w-w')"
            return f"B({pre}{d})"
        tv = _ratio_label(self.theta_v, "v")
        tw = _ratio_label(self.theta_w, "w")
        return f"B(δ(v-{tv})δ(w-{tw}))"


def _ratio_label(theta: float, sym: str) -> str:
    if theta == 1:
        return f"{sym}'"
    fr = Fraction(theta).limit_denominator(1000)
    if fr.numerator == 1:
        return f"{sym}'/{fr.denominator}"
    return f"{theta:g}{sym}'"


def death(p=0, q=0) -> TermDescriptor:
    return TermDescriptor(DEATH, "monomial", p, q)


def birth(p=0, q=0) -> TermDescriptor:
    return TermDescriptor(BIRTH, "continuous", p, q)


def birth_delta(axis: str, p=0, q=0) -> TermDescriptor:
    return TermDescriptor(BIRTH, f"delta_{axis}", p, q)


def birth_product_delta(theta_v=0.5, theta_w=0.5) -> TermDescriptor:
    return TermDescriptor(BIRTH, "product_delta", theta_v=theta_v, theta_w=theta_w)


def standard_library(mode: str = "pre-dmd", exponents: Sequence = DEFAULT_EXPONENTS,
                     size_independent: bool = False, theta: tuple[float, float] = (0.5, 0.5)
                     ) -> list[TermDescriptor]:
    """Standard term lists.

    ``pre-dmd``/``continuous``: 25 continuous birth monomials plus 25 death
    monomials for the default exponents.  ``semi-continuous``: single-delta
    birth terms in both directions plus death monomials.
    ``discontinuous``: the product-delta birth term and ``D(1)``.
    ``size_independent`` keeps ``D(1)`` as the only death term.
    """
    exps = list(exponents)
    if not exps:
        raise DomainError("exponent set must not be empty")
    pairs = [(p, q) for p in exps for q in exps]
    if mode in ("pre-dmd", "continuous"):
        births = [birth(p, q) for p, q in pairs]
    elif mode == "semi-continuous":
        births = [birth_delta("v", p, q) for p, q in pairs] + \
                 [birth_delta("w", p, q) for p, q in pairs]
    elif mode == "discontinuous":
        return [birth_product_delta(*theta), death(0, 0)]
    else:
        raise DomainError(f"unknown library mode {mode!r}")
    deaths = [death(0, 0)] if size_independent else [death(p, q) for p, q in pairs]
    return births + deaths


def case_truth(case_id: int) -> dict[TermDescriptor, float]:
    """True terms and coefficients of the six benchmark equations."""
    truths = {
        1: {birth(-1, -1): 4.0, death(0, 0): -1.0},
        2: {birth(0, 0): 4.0, death(1, 1): -1.0},
        3: {birth(-1, -1): 2.0, death(0, 0): -1.0},
        4: {birth(-1, 0): 2.0, birth(0, -1): 2.0, death(1, 0): -1.0, death(0, 1): -1.0},
        5: {birth_delta("v", 1, 0): 1.0, birth_delta("w", 0, 1): 1.0, death(1, 1): -1.0},
        6: {birth_product_delta(0.5, 0.5): 1.0, death(0, 0): -0.25},
    }
    if case_id not in truths:
        raise DomainError(f"unknown case id {case_id!r}")
    return truths[case_id]


def truth_vector(truth: dict[TermDescriptor, float], descriptors: Sequence[TermDescriptor]
                 ) -> tuple[np.ndarray, bool]:
    """Align true coefficients to a library; second value says all true terms are present."""
    names = {d.name: i for i, d in enumerate(descriptors)}
    xi = np.zeros(len(descriptors))
    complete = True
    for d, c in truth.items():
        if d.name in names:
            xi[names[d.name]] = c
        else:
            complete = False
    return xi, complete


# ----------------------------------------------------------------- target

def _check_uniform(times: np.ndarray) -> float:
    dts = np.diff(times)
    if not np.allclose(dts, dts[0], rtol=1e-9, atol=0):
        raise DomainError("time stamps must be uniformly spaced")
    return float(dts[0])


def assemble_ndot(series: SnapshotSeries) -> np.ndarray:
    """Stacked time derivative of the density.

    Second-order central differences inside the window and second-order
    one-sided differences at both ends (first order when only two snapshots
    exist).
    """
    z = series.n_times
    if z < 2:
        raise DomainError("need at least two snapshots for a time derivative")
    dt = _check_uniform(series.times)
    d = np.gradient(series.density, dt, axis=2, edge_order=2 if z >= 3 else 1)
    return d.ravel()


# ---------------------------------------------------------------- columns

def subgrid_trapezoid(x: np.ndarray) -> np.ndarray:
    """``T[i, a]`` = trapezoid weight of pivot ``a`` on the sub-mesh ``x[i:]``."""
    n = x.size
    dx = np.diff(x)
    T = np.zeros((n, n))
    for i in range(n - 1):
        T[i, i] = dx[i] / 2
        T[i, i + 1:-1] = (dx[i:-1] + dx[i + 1:]) / 2
        T[i, -1] = dx[-1] / 2
    return T


def scaled_position_matrix(x: np.ndarray, theta: float, interpolate: bool) -> np.ndarray:
    """``I[i, a]`` such that ``I @ f(x)`` approximates ``f(x_i / theta)``.

    Exact where ``x_i / theta`` is a pivot, zero beyond the largest pivot,
    linear in ``log x`` in between when ``interpolate`` is set.
    """
    n = x.size
    I = np.zeros((n, n))
    lx = np.log(x)
    for i in range(n):
        s = x[i] / theta
        j = int(np.searchsorted(x, s))
        if j < n and np.isclose(s, x[j], rtol=1e-9, atol=0):
            I[i, j] = 1.0
        elif j > 0 and np.isclose(s, x[j - 1], rtol=1e-9, atol=0):
            I[i, j - 1] = 1.0
        elif j >= n:
            continue
        elif not interpolate:
            raise IncompatibleGridError(
                f"v/theta = {s:.6g} is not a pivot; enable interpolation or use a "
                "ratio-anchored grid")
        else:
            u = (np.log(s) - lx[j - 1]) / (lx[j] - lx[j - 1])
            I[i, j - 1] = 1 - u
            I[i, j] = u
    return I


def evaluate_term(desc: TermDescriptor, series: SnapshotSeries,
                  interpolate: bool = False) -> np.ndarray:
    """Evaluate one library column on every (pivot, time) row."""
    grid = series.grid
    n = series.density
    V, W = grid.mesh()
    f = (V ** float(desc.p)) * (W ** float(desc.q))
    if desc.form == "monomial":
        col = f[:, :, None] * n
    elif desc.form == "continuous":
        Tv, Tw = subgrid_trapezoid(grid.v), subgrid_trapezoid(grid.w)
        col = np.einsum("ia,jb,abk->ijk", Tv, Tw, f[:, :, None] * n, optimize=True)
    elif desc.form == "delta_v":
        # v' collapses onto v; integrate over w' only
        Tw = subgrid_trapezoid(grid.w)
        col = np.einsum("jb,ibk->ijk", Tw, f[:, :, None] * n, optimize=True)
    elif desc.form == "delta_w":
        Tv = subgrid_trapezoid(grid.v)
        col = np.einsum("ia,ajk->ijk", Tv, f[:, :, None] * n, optimize=True)
    else:
        Iv = scaled_position_matrix(grid.v, desc.theta_v, interpolate)
        Iw = scaled_position_matrix(grid.w, desc.theta_w, interpolate)
        col = np.einsum("ia,jb,abk->ijk", Iv, Iw, n, optimize=True) / (desc.theta_v * desc.theta_w)
    return np.ascontiguousarray(col).ravel()


@dataclass(frozen=True)
class CandidateLibrary:
    theta: np.ndarray
    descriptors: tuple[TermDescriptor, ...]
    shape: tuple[int, int, int]
    grid_hash: str = ""

    def __post_init__(self):
        th = np.array(self.theta, dtype=float)
        th.setflags(write=False)
        object.__setattr__(self, "theta", th)
        object.__setattr__(self, "descriptors", tuple(self.descriptors))
        if th.shape[1] != len(self.descriptors):
            raise DimensionMismatchError("column count differs from descriptor count")
        if th.shape[0] != int(np.prod(self.shape)):
            raise DimensionMismatchError("row count differs from x*y*z")
        names = [d.name for d in self.descriptors]
        if len(set(names)) != len(names):
            raise DomainError("display names must be unique within a library")
        if not np.all(np.isfinite(th)):
            raise DomainError("library contains non-finite entries")

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.descriptors]

    @property
    def birth_columns(self) -> np.ndarray:
        return np.array([i for i, d in enumerate(self.descriptors) if d.side == BIRTH], dtype=int)

    @property
    def death_columns(self) -> np.ndarray:
        return np.array([i for i, d in enumerate(self.descriptors) if d.side == DEATH], dtype=int)

    @property
    def is_birth(self) -> np.ndarray:
        return np.array([d.side == BIRTH for d in self.descriptors])

    def row_index(self, row: int) -> tuple[int, int, int]:
        return tuple(int(a) for a in np.unravel_index(row, self.shape))

    def subset(self, columns: Iterable[int]) -> "CandidateLibrary":
        cols = list(columns)
        return CandidateLibrary(self.theta[:, cols], [self.descriptors[c] for c in cols],
                                self.shape, self.grid_hash)


def build_library(series: SnapshotSeries, descriptors: Sequence[TermDescriptor],
                  interpolate: bool = False) -> CandidateLibrary:
    """Evaluate every descriptor on ``series`` and stack the columns."""
    if not descriptors:
        raise DomainError("a library needs at least one term")
    cols = [evaluate_term(d, series, interpolate) for d in descriptors]
    shape = series.grid.shape + (series.n_times,)
    return CandidateLibrary(np.column_stack(cols), descriptors, shape, series.grid.fingerprint())


# -------------------------------------------------------------- manifests

def descriptors_to_manifest(descriptors: Sequence[TermDescriptor]) -> list[dict]:
    return [asdict(d) for d in descriptors]


def descriptors_from_manifest(records: Sequence[dict]) -> list[TermDescriptor]:
    out = []
    for i, rec in enumerate(records):
        try:
            out.append(TermDescriptor(**rec))
        except (TypeError, DomainError) as exc:
            raise ParseError("terms manifest", None, i, str(exc)) from None
    return out


def write_library(lib: CandidateLibrary, directory) -> Path:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    np.savetxt(out / "theta.csv", lib.theta, fmt="%.17g", delimiter=",",
               header=",".join(lib.names), comments="")
    manifest = {"shape": list(lib.shape), "grid_hash": lib.grid_hash,
                "terms": descriptors_to_manifest(lib.descriptors)}
    (out / "terms.json").write_text(json.dumps(manifest, indent=2, ensure_ascii=False))
    return out


def load_manifest(path) -> list[TermDescriptor]:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(path, exc.lineno, exc.colno, exc.msg) from None
    records = data["terms"] if isinstance(data, dict) else data
    return descriptors_from_manifest(records)


def read_library(directory) -> CandidateLibrary:
    src = Path(directory)
    manifest = json.loads((src / "terms.json").read_text())
    theta = np.loadtxt(src / "theta.csv", delimiter=",", skiprows=1, ndmin=2)
    return CandidateLibrary(theta, descriptors_from_manifest(manifest["terms"]),
                            tuple(manifest["shape"]), manifest.get("grid_hash", ""))

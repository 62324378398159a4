"""Pivot meshes, snapshot containers and the on-disk snapshot format.

Everything here is immutable after construction: arrays handed to the
containers are copied and flagged read-only, so a grid or series can be shared
freely between worker processes and threads.

File layout written by :func:`write_series`::

    grid_v.csv        one pivot per line
    grid_w.csv        one pivot per line
    times.csv         one time stamp per line
    density_t<k>.csv  x rows by y columns, k = 0 .. z-1
    meta.json         case id, seed, noise level, generation parameters
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import DimensionMismatchError, DomainError, ParseError

logger = logging.getLogger(__name__)

BY_COUNT = "geometric-by-count"
RATIO_ANCHORED = "geometric-ratio-anchored"
SPACING_KINDS = (BY_COUNT, RATIO_ANCHORED)

_FMT = "%.17g"


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def trapezoid_weights(x: np.ndarray) -> np.ndarray:
    """Per-pivot trapezoid weights on a non-uniform 1D mesh.

    ``weights @ f(x)`` equals ``np.trapz(f(x), x)``; the weights of an
    interior pivot are half the distance between its neighbours.
    """
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return np.zeros_like(x)
    dx = np.diff(x)
    w = np.empty_like(x)
    w[0] = dx[0] / 2
    w[-1] = dx[-1] / 2
    w[1:-1] = (dx[:-1] + dx[1:]) / 2
    return w


@dataclass(frozen=True)
class Grid1D:
    """Geometric pivot mesh along one internal coordinate.

    ``lower_edge``/``upper_edge`` are the first and last pivots, i.e. the span
    covered by the quadrature weights.  ``domain`` keeps the bounds that were
    requested when the grid was built; for ratio-anchored grids the lower
    domain bound may sit below the smallest pivot.
    """

    pivots: np.ndarray
    spacing_kind: str
    domain: tuple[float, float]
    ratio: float | None = None

    def __post_init__(self):
        p = _frozen(self.pivots)
        object.__setattr__(self, "pivots", p)
        if p.ndim != 1 or p.size < 2:
            raise DomainError("a grid needs at least two pivots")
        if not np.all(p > 0):
            raise DomainError("pivots must be positive")
        if not np.all(np.diff(p) > 0):
            raise DomainError("pivots must be strictly increasing")
        if self.spacing_kind not in SPACING_KINDS:
            raise DomainError(f"unknown spacing kind {self.spacing_kind!r}")
        object.__setattr__(self, "domain", (float(self.domain[0]), float(self.domain[1])))

    @property
    def lower_edge(self) -> float:
        return float(self.pivots[0])

    @property
    def upper_edge(self) -> float:
        return float(self.pivots[-1])

    @property
    def size(self) -> int:
        return int(self.pivots.size)

    @property
    def weights(self) -> np.ndarray:
        w = trapezoid_weights(self.pivots)
        w.setflags(write=False)
        return w

    @property
    def log_step(self) -> float:
        """Mean spacing of the pivots in log coordinates."""
        return float(np.log(self.pivots[-1] / self.pivots[0]) / (self.size - 1))

    def to_dict(self) -> dict:
        return {"spacing_kind": self.spacing_kind, "domain": list(self.domain),
                "ratio": self.ratio, "count": self.size}


def make_grid(lower: float, upper: float, count: int,
              mode: str = BY_COUNT, ratio: float | None = None) -> Grid1D:
    """Build a geometric 1D mesh.

    Parameters
    ----------
    lower, upper:
        Domain bounds, ``0 < lower < upper``.
    count:
        Number of pivots (at least 2).
    mode:
        ``"geometric-by-count"`` places ``count`` pivots from ``lower`` to
        ``upper`` inclusive with a constant ratio.  ``"geometric-ratio-anchored"``
        descends from ``upper`` by the factor ``ratio`` so that consecutive
        pivots differ by exactly that factor.
    ratio:
        Pivot ratio for the anchored mode; must exceed 1.

    Raises
    ------
    DomainError
        On invalid bounds, or when an anchored grid would put its smallest
        pivot below ``lower``.
    """
    if not (0 < lower < upper):
        raise DomainError(f"need 0 < lower < upper, got {lower}, {upper}")
    if count < 2:
        raise DomainError("count must be at least 2")
    if mode == BY_COUNT:
        pivots = np.geomspace(lower, upper, count)
        pivots[0], pivots[-1] = lower, upper
        r = (upper / lower) ** (1.0 / (count - 1))
        return Grid1D(pivots, BY_COUNT, (lower, upper), r)
    if mode == RATIO_ANCHORED:
        if ratio is None or not ratio > 1:
            raise DomainError("ratio-anchored grids need ratio > 1")
        # built top-down so that pivot * ratio is again a pivot, exactly
        desc = [float(upper)]
        for _ in range(count - 1):
            desc.append(desc[-1] / ratio)
        if desc[-1] < lower:
            raise DomainError(
                f"smallest anchored pivot {desc[-1]:.6g} falls below lower edge {lower:.6g}")
        return Grid1D(np.array(desc[::-1]), RATIO_ANCHORED, (lower, upper), float(ratio))
    raise DomainError(f"unknown spacing kind {mode!r}")


@dataclass(frozen=True)
class Grid2D:
    """Tensor-product mesh over the two internal coordinates (v, w)."""

    v_axis: Grid1D
    w_axis: Grid1D

    @property
    def shape(self) -> tuple[int, int]:
        return (self.v_axis.size, self.w_axis.size)

    @property
    def v(self) -> np.ndarray:
        return self.v_axis.pivots

    @property
    def w(self) -> np.ndarray:
        return self.w_axis.pivots

    @property
    def quad_weights(self) -> tuple[np.ndarray, np.ndarray]:
        return self.v_axis.weights, self.w_axis.weights

    @property
    def cell_weights(self) -> np.ndarray:
        """Outer product of the axis weights, shape ``(x, y)``."""
        return np.outer(self.v_axis.weights, self.w_axis.weights)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.v, self.w, indexing="ij")

    def fingerprint(self) -> str:
        """Short hash of the pivot values, used to refuse mixing artifacts."""
        import hashlib

        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.v).tobytes())
        h.update(np.ascontiguousarray(self.w).tobytes())
        return h.hexdigest()[:16]

    def to_dict(self) -> dict:
        return {"v": self.v_axis.to_dict(), "w": self.w_axis.to_dict()}


def case_grid(case_id: int) -> Grid2D:
    """Default mesh for the benchmark cases.

    Cases 1-5 use 25 x 25 pivots on [0.1, 5]^2; Case 6 uses 15 x 15 pivots
    descending from 5 by a factor of two.
    """
    if case_id == 6:
        ax = make_grid(1e-4, 5.0, 15, RATIO_ANCHORED, 2.0)
    else:
        ax = make_grid(0.1, 5.0, 25, BY_COUNT)
    return Grid2D(ax, ax)


@dataclass(frozen=True)
class SnapshotSeries:
    """Number density ``n(v_i, w_j, t_k)`` on a grid, plus provenance.

    ``density`` has shape ``(x, y, z)``.
    """

    grid: Grid2D
    times: np.ndarray
    density: np.ndarray
    meta: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        t = _frozen(self.times)
        d = _frozen(self.density)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "density", d)
        object.__setattr__(self, "meta", dict(self.meta))
        if t.ndim != 1 or t.size < 1:
            raise DimensionMismatchError("times must be a non-empty 1D array")
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise DomainError("times must be strictly increasing")
        expected = self.grid.shape + (t.size,)
        if d.shape != expected:
            raise DimensionMismatchError(f"density shape {d.shape} != {expected}")

    @property
    def n_times(self) -> int:
        return int(self.times.size)

    def snapshot(self, k: int) -> np.ndarray:
        return self.density[:, :, k]

    def with_meta(self, **updates) -> "SnapshotSeries":
        meta = dict(self.meta)
        meta.update(updates)
        return replace(self, meta=meta)


def add_noise(series: SnapshotSeries, level: float, seed: int) -> SnapshotSeries:
    """Add zero-mean Gaussian noise scaled to the spread of the clean data.

    The standard deviation is ``level * std(density)`` with the population
    standard deviation taken over the whole tensor.  ``level == 0`` returns
    the input unchanged.
    """
    if level < 0:
        raise DomainError("noise level must be non-negative")
    if level == 0:
        return series
    rng = np.random.default_rng(seed)
    sigma = level * float(np.std(series.density))
    noisy = series.density + rng.normal(0.0, sigma, size=series.density.shape)
    return replace(series, density=noisy,
                   meta={**series.meta, "noise_level": level, "noise_seed": seed,
                         "noise_sigma": sigma, "noise_scale": "level*std(clean tensor)"})


def subsample_indices(z: int, k: int) -> np.ndarray:
    if k < 2:
        raise DomainError("need at least two time points for a time derivative")
    if k > z:
        raise DomainError(f"cannot pick {k} of {z} snapshots")
    return np.round(np.linspace(0, z - 1, k)).astype(int)


def subsample_time(series: SnapshotSeries, k: int) -> SnapshotSeries:
    """Keep ``k`` snapshots evenly spaced by index, endpoints included.

    When ``k - 1`` does not divide ``z - 1`` the chosen indices are rounded
    and the resulting time spacing is no longer uniform.
    """
    z = series.n_times
    idx = subsample_indices(z, k)
    if k == z:
        return series
    if (z - 1) % (k - 1):
        logger.warning("subsampling %d of %d snapshots gives non-uniform spacing", k, z)
    return replace(series, times=series.times[idx], density=series.density[:, :, idx],
                   meta={**series.meta, "subsample": [int(i) for i in idx]})


# --------------------------------------------------------------------- I/O

def _write_column(path: Path, values) -> None:
    with open(path, "w") as fh:
        for x in values:
            fh.write(_FMT % x + "\n")


def _read_column(path: Path) -> np.ndarray:
    values = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            try:
                values.append(float(text))
            except ValueError:
                raise ParseError(path, lineno, 1, f"not a number: {text!r}") from None
    if not values:
        raise ParseError(path, None, None, "file is empty")
    return np.array(values)


def _read_matrix(path: Path, nrows: int, ncols: int) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != ncols:
                raise DimensionMismatchError(
                    f"{path}:{lineno}: expected {ncols} fields, found {len(rec)}")
            row = []
            for j, cell in enumerate(rec, start=1):
                try:
                    row.append(float(cell))
                except ValueError:
                    raise ParseError(path, lineno, j, f"not a number: {cell!r}") from None
            rows.append(row)
    if not rows:
        raise ParseError(path, None, None, "file is empty")
    if len(rows) != nrows:
        raise DimensionMismatchError(f"{path}: expected {nrows} rows, found {len(rows)}")
    return np.array(rows)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def write_series(series: SnapshotSeries, directory) -> Path:
    """Write ``series`` in the CSV + ``meta.json`` layout; returns the directory."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    _write_column(out / "grid_v.csv", series.grid.v)
    _write_column(out / "grid_w.csv", series.grid.w)
    _write_column(out / "times.csv", series.times)
    for k in range(series.n_times):
        np.savetxt(out / f"density_t{k}.csv", series.density[:, :, k], fmt=_FMT, delimiter=",")
    meta = {"grid": series.grid.to_dict(), "grid_hash": series.grid.fingerprint(),
            "n_times": series.n_times, **series.meta}
    (out / "meta.json").write_text(json.dumps(meta, indent=2, default=_json_default))
    return out


def _axis_from(pivots: np.ndarray, info: Mapping | None) -> Grid1D:
    info = info or {}
    kind = info.get("spacing_kind", BY_COUNT)
    domain = info.get("domain", [pivots[0], pivots[-1]])
    if int(info.get("count", pivots.size)) != pivots.size:
        raise DimensionMismatchError(
            f"grid lists {pivots.size} pivots but metadata says {info['count']}")
    ratio = info.get("ratio")
    return Grid1D(pivots, kind, tuple(domain), ratio)


def read_series(directory) -> SnapshotSeries:
    """Inverse of :func:`write_series`.

    Raises
    ------
    ParseError
        For empty or non-numeric files, with line and field of the problem.
    DimensionMismatchError
        When a density file disagrees with the grid or the number of times.
    """
    src = Path(directory)
    meta_path = src / "meta.json"
    meta: dict = {}
    if meta_path.exists():
        try:
            meta = json.loads(meta_path.read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(meta_path, exc.lineno, exc.colno, exc.msg) from None
    v = _read_column(src / "grid_v.csv")
    w = _read_column(src / "grid_w.csv")
    t = _read_column(src / "times.csv")
    grid_info = meta.pop("grid", {})
    grid = Grid2D(_axis_from(v, grid_info.get("v")), _axis_from(w, grid_info.get("w")))
    stored_hash = meta.pop("grid_hash", None)
    if stored_hash is not None and stored_hash != grid.fingerprint():
        logger.warning("grid hash in %s does not match the pivots on disk", meta_path)
    n_times = meta.pop("n_times", t.size)
    if n_times != t.size:
        raise DimensionMismatchError(f"meta.json lists {n_times} times, times.csv has {t.size}")
    frames = []
    for k in range(t.size):
        path = src / f"density_t{k}.csv"
        if not path.exists():
            raise DimensionMismatchError(f"missing {path.name} for time index {k}")
        frames.append(_read_matrix(path, v.size, w.size))
    if (src / f"density_t{t.size}.csv").exists():
        raise DimensionMismatchError("more density files than time stamps")
    return SnapshotSeries(grid, t, np.stack(frames, axis=2), meta)


def moment(series: SnapshotSeries, p: float, q: float) -> np.ndarray:
    """Mixed moment ``M_pq(t_k)`` by tensor trapezoid quadrature.

    Negative orders are allowed but are dominated by the smallest pivots.
    """
    W = series.grid.cell_weights
    V, Wc = series.grid.mesh()
    f = (V ** p) * (Wc ** q) * W
    return np.einsum("ij,ijk->k", f, series.density)


"""Exact dynamic mode decomposition and the spectral diagnostics used to
shape a candidate library.

Snapshots are flattened with ``density[:, :, k].ravel()`` so a mode column
reshapes back to ``(x, y)``.  Modes are normalised to unit Euclidean norm and
their scale is carried by the amplitudes, which makes ``|b_j|`` comparable
across modes.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError
from .griddata import Grid2D, SnapshotSeries

logger = logging.getLogger(__name__)

SIGN_NOTE = ("a mode with negative weight combined with a negative trace "
             "contributes positively to the density")


@dataclass
class DMDResult:
    modes: np.ndarray            # (xy, s) complex, unit columns
    discrete_eigs: np.ndarray    # (s,)
    amplitudes: np.ndarray       # (s,)
    rank: int
    energy_fraction: float
    dt: float
    singular_values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    shape: tuple[int, int] | None = None
    flagged: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    t0: float = 0.0
    masked: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def continuous_eigs(self) -> np.ndarray:
        return np.log(self.discrete_eigs.astype(complex)) / self.dt

    @property
    def radii(self) -> np.ndarray:
        return np.abs(self.discrete_eigs)


def snapshot_matrices(series: SnapshotSeries) -> tuple[np.ndarray, np.ndarray, float]:
    """Shifted snapshot pair ``X = [n_1 .. n_{z-1}]``, ``X' = [n_2 .. n_z]`` and ``dt``."""
    z = series.n_times
    if z < 2:
        raise DomainError("DMD needs at least two snapshots")
    dts = np.diff(series.times)
    if not np.allclose(dts, dts[0], rtol=1e-9, atol=0):
        raise DomainError("DMD needs uniformly spaced snapshots; resample first")
    data = series.density.reshape(-1, z)
    return data[:, :-1].copy(), data[:, 1:].copy(), float(dts[0])


def compute_dmd(X: np.ndarray, Xp: np.ndarray, rank: int, dt: float = 1.0,
                shape: tuple[int, int] | None = None) -> DMDResult:
    """Exact DMD of the best-fit operator ``A = X' X^+`` projected on ``rank`` POD modes.

    Modes beyond the numerical rank of ``X`` are dropped with a warning; the
    returned ``rank`` is the number actually kept.
    """
    X = np.asarray(X, dtype=float)
    Xp = np.asarray(Xp, dtype=float)
    if X.shape != Xp.shape:
        raise DomainError("snapshot matrices differ in shape")
    if not 1 <= rank <= min(X.shape):
        raise DomainError(f"rank must lie in [1, {min(X.shape)}]")
    U, s, Vh = np.linalg.svd(X, full_matrices=False)
    total = float(np.sum(s ** 2))
    tol = s[0] * max(X.shape) * np.finfo(float).eps if s.size and s[0] > 0 else 0.0
    numerical = int(np.sum(s > tol))
    r = min(rank, numerical)
    if r < rank:
        logger.warning("requested rank %d exceeds numerical rank %d; extra modes dropped", rank, numerical)
    if r == 0:
        raise DomainError("snapshot matrix is zero")
    Ur, sr, Vr = U[:, :r], s[:r], Vh[:r].conj().T
    Atil = Ur.conj().T @ Xp @ Vr / sr
    lam, W = np.linalg.eig(Atil)
    Phi = Xp @ Vr @ (W / sr[:, None])
    # modes with a zero eigenvalue have no exact-DMD lift; use the projected mode
    tiny = np.abs(lam) < 1e-13
    if np.any(tiny):
        Phi[:, tiny] = Ur @ W[:, tiny]
    Phi = Phi / np.linalg.norm(Phi, axis=0)
    b, *_ = np.linalg.lstsq(Phi, X[:, 0].astype(complex), rcond=None)
    energy = float(np.sum(sr ** 2) / total) if total > 0 else 1.0
    order = np.argsort(-np.abs(b), kind="stable")
    return DMDResult(Phi[:, order], lam[order], b[order], r, energy, float(dt), s, shape,
                     tiny[order])


def feed_pivots(series: SnapshotSeries, max_fraction: float = 0.05) -> np.ndarray:
    """Flat indices of a concentrated initial feed.

    When the first snapshot is non-zero on at most ``max_fraction`` of the
    pivots (a monodisperse start), those pivots only carry the exponential
    decay of the unbroken feed particles.  Returns an empty array otherwise.
    """
    first = series.density[:, :, 0].ravel()
    support = np.flatnonzero(first != 0)
    if 0 < support.size <= max_fraction * first.size:
        return support
    return np.zeros(0, dtype=int)


def dmd_of_series(series: SnapshotSeries, rank: int = 10, energy_target: float = 0.99,
                  mask_feed: bool = True) -> DMDResult:
    """DMD of a series with rank ``rank``.

    If that rank captures less than ``energy_target`` of the snapshot energy,
    the smallest rank that does is used instead (bounded by the data).

    With ``mask_feed`` the pivots of a concentrated initial feed (see
    :func:`feed_pivots`) are zeroed and the first snapshot, which holds
    nothing else, is skipped.  The pure decay of the feed would otherwise
    dominate the amplitudes and hide the growth of the fragment population.
    """
    X, Xp, dt = snapshot_matrices(series)
    t0 = float(series.times[0])
    masked = feed_pivots(series) if mask_feed else np.zeros(0, dtype=int)
    if masked.size and X.shape[1] >= 2:
        X, Xp = X[:, 1:].copy(), Xp[:, 1:].copy()
        X[masked] = 0.0
        Xp[masked] = 0.0
        t0 = float(series.times[1])
    else:
        masked = np.zeros(0, dtype=int)
    rank = min(rank, min(X.shape))
    res = compute_dmd(X, Xp, rank, dt, series.grid.shape)
    if res.energy_fraction < energy_target:
        s2 = res.singular_values ** 2
        need = int(np.searchsorted(np.cumsum(s2) / s2.sum(), energy_target) + 1)
        need = min(need, min(X.shape))
        if need > rank:
            logger.info("rank %d keeps %.4f of the energy; raising to %d", rank, res.energy_fraction, need)
            res = compute_dmd(X, Xp, need, dt, series.grid.shape)
    res.t0 = t0
    res.masked = masked
    return res


def reconstruct(result: DMDResult, t) -> np.ndarray:
    """``sum_j Phi_j exp(Omega_j t) b_j`` at time(s) ``t`` measured from the first
    decomposed snapshot (``result.t0`` in absolute time).

    Returns the real field(s), shape ``(xy,)`` or ``(xy, len(t))``.
    """
    tt = np.atleast_1d(np.asarray(t, dtype=float))
    dyn = np.exp(np.outer(result.continuous_eigs, tt)) * result.amplitudes[:, None]
    out = result.modes @ dyn
    mag = np.abs(out).max() if out.size else 0.0
    if mag > 0 and np.abs(out.imag).max() > 1e-8 * mag:
        logger.warning("reconstruction has imaginary residue %.3g", np.abs(out.imag).max() / mag)
    out = out.real
    return out[:, 0] if np.ndim(t) == 0 else out


def continuous_time_dynamics(result: DMDResult, t_grid) -> np.ndarray:
    """``Re exp(Omega_j t)`` per mode (rows) and time (columns).

    The traces multiply the mode weights, so the sign of a trace alone does
    not tell whether the mode adds or removes particles (see ``SIGN_NOTE``).
    """
    t = np.asarray(t_grid, dtype=float)
    return np.exp(np.outer(result.continuous_eigs, t)).real


# ------------------------------------------------------------ diagnostics

@dataclass
class SpectralDiagnostics:
    radii: np.ndarray
    weights: np.ndarray
    radii_dispersion: float
    growth_count: int
    decay_count: int
    size_dependence: str
    dispersion_threshold: float
    edge_fraction: np.ndarray
    diagonal_fraction: np.ndarray
    kept: np.ndarray

    @property
    def mean_edge_fraction(self) -> float:
        return float(np.average(self.edge_fraction, weights=self.weights))

    @property
    def mean_diagonal_fraction(self) -> float:
        return float(np.average(self.diagonal_fraction, weights=self.weights))


def localization_bands(grid: Grid2D, band: float | None = None
                       ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Boolean ``(x, y)`` masks ``edge, edge_inner, diagonal, diagonal_near``.

    The edge band is the upper pivot row and column (largest ``v`` or ``w``,
    corner excluded), where single-axis fragments of large parents collect;
    ``edge_inner`` is the row and column just inside it.  The log-diagonal
    band holds cells with ``|ln v - ln w| <= band`` (default 1.5 times half
    the larger logarithmic pivot step) and ``diagonal_near`` the cells within
    one further step of it.
    """
    x, y = grid.shape
    edge = np.zeros((x, y), dtype=bool)
    edge[-1, :] = True
    edge[:, -1] = True
    edge[-1, -1] = False
    inner = np.zeros((x, y), dtype=bool)
    inner[-2, :-1] = True
    inner[:-1, -2] = True
    inner[-2, -2] = False
    step = max(np.diff(np.log(a)).max() for a in (grid.v, grid.w))
    if band is None:
        band = 1.5 * 0.5 * step
    lv, lw = np.meshgrid(np.log(grid.v), np.log(grid.w), indexing="ij")
    gap = np.abs(lv - lw)
    diag = gap <= band + 1e-12
    near = (gap > band + 1e-12) & (gap <= band + step + 1e-12)
    return edge, inner, diag, near


def _contrast(energy: np.ndarray, band: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Per-cell mean energy in ``band`` relative to ``band`` plus ``ref``."""
    if not band.any() or not ref.any():
        return np.full(energy.shape[1], np.nan)
    a = energy[band.ravel()].mean(axis=0)
    b = energy[ref.ravel()].mean(axis=0)
    tot = a + b
    return np.divide(a, tot, out=np.zeros_like(a), where=tot > 0)


def spectral_diagnostics(result: DMDResult, grid: Grid2D | None = None, amp_floor: float = 1e-6,
                         dispersion_threshold: float = 0.085, band: float | None = None
                         ) -> SpectralDiagnostics:
    """Radius statistics and mode localisation.

    ``radii_dispersion`` is the coefficient of variation of the spectral
    radii weighted by ``|b_j|``, over modes whose amplitude exceeds
    ``amp_floor`` times the largest amplitude.  A narrow spread of radii
    (below ``dispersion_threshold``) points to a size-independent rate.

    The localisation fractions compare the per-cell mode energy in a band
    with that of the band next to it, so 0.5 means no contrast and values
    near 1 mean the mode is concentrated on the band.  Contrast rather than
    a share of the total is used because mode energy piles up at the
    smallest sizes whatever the kernel.
    """
    if not 0 <= amp_floor < 1:
        raise DomainError("amp_floor must lie in [0, 1)")
    amp = np.abs(result.amplitudes)
    kept = amp > amp_floor * amp.max() if amp.size and amp.max() > 0 else np.zeros(amp.size, bool)
    if not np.any(kept):
        raise DomainError("every mode falls below the amplitude floor")
    r = result.radii[kept]
    wts = amp[kept]
    mean = np.average(r, weights=wts)
    std = np.sqrt(np.average((r - mean) ** 2, weights=wts))
    disp = float(std / mean) if mean > 0 else 0.0
    edge_f = np.full(kept.sum(), np.nan)
    diag_f = np.full(kept.sum(), np.nan)
    if grid is not None:
        edge, inner, diag, near = localization_bands(grid, band)
        energy = np.abs(result.modes[:, kept]) ** 2
        edge_f = _contrast(energy, edge, inner)
        diag_f = _contrast(energy, diag, near)
    return SpectralDiagnostics(
        radii=r, weights=wts, radii_dispersion=disp,
        growth_count=int(np.sum(r > 1)), decay_count=int(np.sum(r < 1)),
        size_dependence="independent" if disp < dispersion_threshold else "dependent",
        dispersion_threshold=dispersion_threshold,
        edge_fraction=edge_f, diagonal_fraction=diag_f, kept=np.flatnonzero(kept))


def library_advice(diag: SpectralDiagnostics, dominance: float = 0.7) -> dict:
    """Map diagnostics to a library recommendation.

    The continuity hint compares amplitude-weighted localisation fractions
    with ``dominance``; the diagonal band is checked first because it is the
    more specific pattern.
    """
    hint = "continuous"
    edge, dg = diag.mean_edge_fraction, diag.mean_diagonal_fraction
    if np.isfinite(dg) and dg > dominance:
        hint = "product-delta-candidate"
    elif np.isfinite(edge) and edge > dominance:
        hint = "semi-continuous-candidate"
    return {"rate": diag.size_dependence, "continuity": hint,
            "radii_dispersion": diag.radii_dispersion,
            "dispersion_threshold": diag.dispersion_threshold,
            "edge_fraction": edge, "diagonal_fraction": dg, "dominance": dominance}


ADVICE_TO_MODE = {"continuous": "continuous", "semi-continuous-candidate": "semi-continuous",
                  "product-delta-candidate": "discontinuous"}


def advice_library_mode(advice: dict) -> tuple[str, bool]:
    """``(library mode, size_independent)`` implied by an advice record."""
    return ADVICE_TO_MODE[advice["continuity"]], advice["rate"] == "independent"


def dmd_report(result: DMDResult, diag: SpectralDiagnostics, directory, advice: dict | None = None,
               extra: dict | None = None) -> dict:
    """Write mode fields, the eigenvalue table and the advice record.

    Files: ``mode_<j>.csv`` (real part, x rows by y columns),
    ``eigenvalues.csv`` and ``dmd_advice.json``.  Returns the advice.
    """
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    shape = result.shape or (result.modes.shape[0], 1)
    for j in range(result.rank):
        np.savetxt(out / f"mode_{j}.csv", result.modes[:, j].real.reshape(shape),
                   delimiter=",", fmt="%.10g")
    om = result.continuous_eigs
    table = np.column_stack([np.arange(result.rank), result.discrete_eigs.real,
                             result.discrete_eigs.imag, result.radii, om.real, om.imag,
                             np.abs(result.amplitudes)])
    np.savetxt(out / "eigenvalues.csv", table, delimiter=",", fmt="%.10g",
               header="mode,re_lambda,im_lambda,radius,re_omega,im_omega,abs_b", comments="")
    advice = advice or library_advice(diag)
    record = {"advice": advice, "rank": result.rank, "t0": result.t0,
              "masked_pivots": result.masked.tolist(), "energy_fraction": result.energy_fraction,
              "dt": result.dt, "growth_count": diag.growth_count, "decay_count": diag.decay_count,
              "modes_used": diag.kept.tolist(),
              "edge_fraction": np.round(diag.edge_fraction, 6).tolist(),
              "diagonal_fraction": np.round(diag.diagonal_fraction, 6).tolist(),
              "note": SIGN_NOTE}
    record.update(extra or {})
    (out / "dmd_advice.json").write_text(json.dumps(record, indent=2, sort_keys=True))
    return advice

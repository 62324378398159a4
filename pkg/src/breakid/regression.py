"""Sign-constrained sparse regression (cb-STLS).

The regression problem is ``ndot ~ Theta @ xi`` where the birth block of
``Theta`` must combine to a positive contribution and the death block to a
negative one on the constrained rows::

    -Theta_B xi_B <= -eps,     Theta_D xi_D <= -eps.

The inequality-constrained least-squares step is solved exactly by reducing
it to a least-distance problem (LDP), which in turn is a non-negative least
squares problem over the constraint multipliers.  Only the constraints that
the current iterate violates are carried into the LDP (cutting planes), so
problems with thousands of rows stay cheap.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import lsq_linear, nnls

from .errors import DomainError, InfeasibleError

logger = logging.getLogger(__name__)

DEFAULT_LAMBDAS = tuple(np.round(np.arange(1, 11) * 0.1, 10))


# ------------------------------------------------------------ constraints

@dataclass(frozen=True)
class ConstraintOptions:
    """How constraint rows are chosen from a library.

    Attributes
    ----------
    eps : float
        Margin of the sign constraints.
    threshold : float
        Rows whose birth (death) entries have absolute sum below this value
        carry no birth (death) constraint; rows small on both sides are
        removed from the regression.
    sign_consistent : bool
        Keep a side's constraint only on rows where every entry of that side
        is non-negative.  On clean data this is always true; on noisy data it
        drops rows whose sign information is unreliable and would make the
        constraint set infeasible.
    subsample : float or None
        Fraction of eligible constraint rows kept, drawn uniformly with
        ``seed``.
    enabled : bool
        ``False`` turns cb-STLS into plain STLS.
    """

    eps: float = 1e-4
    threshold: float = 0.1
    sign_consistent: bool = True
    subsample: float | None = None
    seed: int | None = None
    enabled: bool = True

    def __post_init__(self):
        if not self.eps > 0:
            raise DomainError("eps must be positive")
        if self.threshold < 0:
            raise DomainError("threshold must be non-negative")
        if self.subsample is not None and not 0 < self.subsample <= 1:
            raise DomainError("subsample must lie in (0, 1]")


@dataclass(frozen=True)
class ConstraintSet:
    """Constraint rows of one regression problem.

    ``data_rows`` index the sample rows kept in the regression;
    ``birth_rows``/``death_rows`` index the rows (of the original matrix)
    that carry a birth/death constraint.
    """

    data_rows: np.ndarray
    birth_rows: np.ndarray
    death_rows: np.ndarray
    eps: float

    @property
    def n_constraints(self) -> int:
        return int(self.birth_rows.size + self.death_rows.size)

    def matrices(self, theta: np.ndarray, is_birth: np.ndarray,
                 columns: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        """``G, h`` with ``G @ xi <= h`` for the coefficients of ``columns``."""
        k = theta.shape[1]
        cols = np.arange(k) if columns is None else np.asarray(columns, dtype=int)
        b_mask = is_birth[cols]
        sub = theta[:, cols]
        Gb = np.zeros((self.birth_rows.size, cols.size))
        Gb[:, b_mask] = -sub[np.ix_(self.birth_rows, np.flatnonzero(b_mask))]
        Gd = np.zeros((self.death_rows.size, cols.size))
        Gd[:, ~b_mask] = sub[np.ix_(self.death_rows, np.flatnonzero(~b_mask))]
        G = np.vstack([Gb, Gd])
        return G, np.full(G.shape[0], -self.eps)


def _side_rows(block: np.ndarray, threshold: float, sign_consistent: bool) -> np.ndarray:
    if block.shape[1] == 0:
        return np.zeros(block.shape[0], dtype=bool)
    ok = np.abs(block).sum(axis=1) >= threshold
    if sign_consistent:
        ok &= np.all(block >= 0, axis=1)
    return ok


def build_constraints(theta: np.ndarray, is_birth, opts: ConstraintOptions = ConstraintOptions(),
                      columns=None, data_rows=None) -> ConstraintSet:
    """Select the regression rows and the constraint rows of ``theta``.

    Parameters
    ----------
    theta : (m, k) array
    is_birth : (k,) bool
    opts : ConstraintOptions
    columns : optional index array
        Only these columns count toward the row sums (used when cb-STLS
        rebuilds constraints on surviving terms).
    data_rows : optional index array
        Fix the regression rows instead of deriving them.
    """
    theta = np.asarray(theta, dtype=float)
    is_birth = np.asarray(is_birth, dtype=bool)
    if theta.ndim != 2 or is_birth.shape != (theta.shape[1],):
        raise DomainError("theta must be 2-D with one side flag per column")
    cols = np.arange(theta.shape[1]) if columns is None else np.asarray(columns, dtype=int)
    bcols = cols[is_birth[cols]]
    dcols = cols[~is_birth[cols]]
    B, D = theta[:, bcols], theta[:, dcols]
    if data_rows is None:
        big_b = np.abs(B).sum(axis=1) >= opts.threshold
        big_d = np.abs(D).sum(axis=1) >= opts.threshold
        data_rows = np.flatnonzero(big_b | big_d)
        if data_rows.size == 0:
            raise DomainError("every row falls below the magnitude threshold")
    data_rows = np.asarray(data_rows, dtype=int)
    empty = np.zeros(0, dtype=int)
    if not opts.enabled:
        return ConstraintSet(data_rows, empty, empty, opts.eps)
    in_data = np.zeros(theta.shape[0], dtype=bool)
    in_data[data_rows] = True
    b_rows = np.flatnonzero(_side_rows(B, opts.threshold, opts.sign_consistent) & in_data)
    d_rows = np.flatnonzero(_side_rows(D, opts.threshold, opts.sign_consistent) & in_data)
    if opts.subsample is not None and opts.subsample < 1:
        rng = np.random.default_rng(opts.seed)
        b_rows = np.sort(rng.choice(b_rows, int(np.ceil(opts.subsample * b_rows.size)), replace=False))
        d_rows = np.sort(rng.choice(d_rows, int(np.ceil(opts.subsample * d_rows.size)), replace=False))
    return ConstraintSet(data_rows, b_rows, d_rows, opts.eps)


# ------------------------------------------------------ constrained lsq

@dataclass
class LSQResult:
    xi: np.ndarray
    converged: bool
    iterations: int
    max_violation: float
    kkt_residual: float
    active: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))


def _ldp(E: np.ndarray, f: np.ndarray, maxiter: int) -> tuple[np.ndarray, np.ndarray]:
    """Least-distance programming: ``min |z|`` subject to ``E z <= f``.

    Uses the Lawson-Hanson duality with non-negative least squares.  Returns
    ``z`` and the multipliers ``mu >= 0`` of the constraints.  Rows are
    normalised and the problem is rescaled so the NNLS matrix is O(1).
    """
    n = E.shape[1]
    rn = np.linalg.norm(E, axis=1)
    rn[rn == 0] = 1.0
    En, fn = E / rn[:, None], f / rn
    sigma = max(float(np.abs(fn).max()), 1e-300)
    fn = fn / sigma
    # (-E) z >= -f in the textbook form G z >= h
    M = np.vstack([-En.T, -fn[None, :]])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    u, _ = nnls(M, rhs, maxiter=maxiter)
    # the NNLS kernel can stop at a non-optimal point; check its KKT conditions
    w = M.T @ (rhs - M @ u)
    if max(float(w.max()), float(np.abs(w[u > 0]).max(initial=0.0))) > 1e-10:
        u = lsq_linear(M, rhs, bounds=(0, np.inf), method="bvls", tol=1e-14).x
    r = M @ u - rhs
    if np.linalg.norm(r) < 1e-10 or abs(r[-1]) < 1e-14:
        raise InfeasibleError("constraint set is infeasible")
    z = -r[:n] / r[-1] * sigma
    mu = u / -r[-1] * sigma / rn
    return z, mu


def _scaled_violation(G: np.ndarray, h: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """``G xi - h`` relative to the size of the products it compares.

    Library rows span many decades, so an absolute tolerance would either
    ignore small rows or demand sub-roundoff accuracy on large ones.
    """
    size = np.maximum(np.abs(G) @ np.abs(xi), np.abs(h))
    return (G @ xi - h) / np.maximum(size, 1.0)


def constrained_lsq(theta: np.ndarray, ndot: np.ndarray, G: np.ndarray | None = None,
                    h: np.ndarray | None = None, step_tol: float = 1e-4,
                    constraint_tol: float = 1e-4, max_iter: int = 1000) -> LSQResult:
    """``min |ndot - theta xi|^2`` subject to ``G xi <= h``.

    Columns are scaled to unit norm, the problem is rotated onto the singular
    basis of ``theta`` and reduced to a least-distance problem.  Constraints
    are added in batches of the currently violated rows until every row holds
    within ``constraint_tol``, measured relative to ``max(1, |G| |xi|)``.

    Raises
    ------
    InfeasibleError
        When no point satisfies the constraints.
    """
    A = np.asarray(theta, dtype=float)
    b = np.asarray(ndot, dtype=float).ravel()
    if A.ndim != 2 or A.shape[1] < 1:
        raise DomainError("theta needs at least one column")
    if A.shape[0] != b.size:
        raise DomainError("theta and ndot have different row counts")
    k = A.shape[1]
    scale = np.linalg.norm(A, axis=0)
    scale[scale == 0] = 1.0
    As = A / scale
    U, s, Vt = np.linalg.svd(As, full_matrices=False)
    # tiny ridge keeps the map to the LDP invertible for collinear columns
    s_eff = np.sqrt(s ** 2 + (1e-10 * s[0]) ** 2) if s[0] > 0 else np.ones_like(s)
    c = (U.T @ b) * s / s_eff
    # xi_scaled = Vt.T @ ((z + c) / s_eff)
    T = Vt.T / s_eff

    def from_z(z):
        return (T @ (z + c)) / scale

    xi = from_z(np.zeros(k))
    if G is None or G.shape[0] == 0:
        return LSQResult(xi, True, 0, 0.0, 0.0)
    G = np.asarray(G, dtype=float)
    h = np.asarray(h, dtype=float)
    Gs = G / scale                      # constraints on the scaled coefficients
    E = Gs @ T
    f = h - E @ c

    working = np.zeros(0, dtype=int)
    converged = False
    it = 0
    mu = np.zeros(0)
    z = np.zeros(k)
    for it in range(1, max_iter + 1):
        viol = _scaled_violation(G, h, from_z(z))
        new = np.setdiff1d(np.flatnonzero(viol > 1e-3 * constraint_tol), working)
        if new.size == 0:
            converged = True
            break
        # the most violated rows first keeps the working set small
        new = new[np.argsort(-viol[new])][: max(4 * k, 64)]
        working = np.union1d(working, new)
        z, mu = _ldp(E[working], f[working], maxiter=max(50 * (k + 1), 3 * working.size))
    xi = from_z(z)
    violation = float(np.max(_scaled_violation(G, h, xi))) if G.shape[0] else 0.0
    mu_full = np.zeros(G.shape[0])
    if working.size:
        mu_full[working] = mu
    kkt = kkt_residual(A, b, xi, G, h, mu_full)
    if violation > constraint_tol or kkt > step_tol:
        converged = False
    if not converged:
        logger.warning("constrained lsq stopped after %d rounds (violation %.3g)", it, violation)
    return LSQResult(xi, converged, it, max(violation, 0.0), kkt, working)


def kkt_residual(theta, ndot, xi, G, h, mu=None) -> float:
    """Relative stationarity residual of a constrained least-squares point.

    Multipliers ``mu`` are fitted by NNLS on the (near-)active rows when not
    given.  The value is ``|grad + G^T mu| / max(|grad|, |theta^T ndot|)``.
    """
    A = np.asarray(theta, dtype=float)
    b = np.asarray(ndot, dtype=float)
    grad = A.T @ (A @ xi - b)
    ref = max(np.linalg.norm(grad), np.linalg.norm(A.T @ b), 1e-300)
    if G is None or len(G) == 0:
        return float(np.linalg.norm(grad) / ref)
    G = np.asarray(G, dtype=float)
    if mu is None:
        slack = h - G @ xi
        act = np.flatnonzero(slack <= 1e-6 * max(1.0, np.abs(h).max()))
        mu = np.zeros(G.shape[0])
        if act.size:
            mu[act], _ = nnls(G[act].T, -grad)
    return float(np.linalg.norm(grad + G.T @ mu) / ref)


def lsq_max_abs(theta: np.ndarray, ndot: np.ndarray) -> float:
    """Largest coefficient magnitude of the unconstrained dense fit.

    A quick guide for choosing the range of the sparsity threshold.
    """
    xi, *_ = np.linalg.lstsq(np.asarray(theta, float), np.asarray(ndot, float), rcond=None)
    return float(np.max(np.abs(xi)))


# -------------------------------------------------------------- cb-STLS

@dataclass
class SparseSolution:
    """Result of one cb-STLS run.

    ``flag`` is ``""`` for a regular solution, ``"empty"`` when thresholding
    removed every term and ``"non-converged"`` when an iteration cap was hit.
    Ensembles also use ``"infeasible"`` and ``"failed"`` for replicates whose
    fit could not be computed.
    """

    xi: np.ndarray
    support: np.ndarray
    lam: float
    iterations: int
    residual_norm: float
    flag: str = ""
    diagnostics: dict = field(default_factory=dict)

    @property
    def is_empty(self) -> bool:
        return self.support.size == 0


def cb_stls(theta: np.ndarray, ndot: np.ndarray, lam: float, is_birth,
            constraints: ConstraintOptions | None = ConstraintOptions(),
            max_rounds: int = 25, step_tol: float = 1e-4, constraint_tol: float = 1e-4,
            max_iter: int = 1000, data_rows=None) -> SparseSolution:
    """Sequential thresholded least squares with birth/death sign constraints.

    Each round fits the surviving columns under the constraints, then zeros
    every coefficient with magnitude strictly below ``lam``.  Constraints are
    rebuilt on the surviving columns, so a side whose terms are all gone
    stops constraining.  ``constraints=None`` gives plain STLS.

    Raises
    ------
    InfeasibleError
        When a constrained step has no feasible point.
    """
    if not lam > 0:
        raise DomainError("lambda must be positive")
    A = np.asarray(theta, dtype=float)
    b = np.asarray(ndot, dtype=float).ravel()
    is_birth = np.asarray(is_birth, dtype=bool)
    k = A.shape[1]
    opts = constraints or ConstraintOptions(enabled=False)
    rows = build_constraints(A, is_birth, opts, data_rows=data_rows).data_rows
    Ar, br = A[rows], b[rows]
    active = np.arange(k)
    xi = np.zeros(k)
    history = []
    flag = ""
    rounds = 0
    for rounds in range(1, max_rounds + 1):
        cs = build_constraints(A, is_birth, opts, columns=active, data_rows=rows)
        G, h = cs.matrices(A, is_birth, active)
        try:
            res = constrained_lsq(Ar[:, active], br, G, h, step_tol, constraint_tol, max_iter)
        except InfeasibleError as exc:
            raise InfeasibleError(f"{exc} (round {rounds}, {active.size} terms, "
                                  f"{cs.n_constraints} constraints, lambda={lam:g})") from None
        if not res.converged:
            flag = "non-converged"
        xi = np.zeros(k)
        xi[active] = res.xi
        history.append({"support": active.tolist(), "n_constraints": cs.n_constraints,
                        "kkt": res.kkt_residual, "violation": res.max_violation})
        keep = np.abs(xi[active]) >= lam
        if keep.all():
            break
        active = active[keep]
        xi[np.setdiff1d(np.arange(k), active)] = 0.0
        if active.size == 0:
            break
    else:
        flag = flag or "non-converged"
    xi[np.setdiff1d(np.arange(k), active)] = 0.0
    if active.size == 0 and not flag:
        flag = "empty"
    resid = float(np.linalg.norm(br - Ar @ xi))
    return SparseSolution(xi, active.copy(), float(lam), rounds, resid, flag,
                          {"rounds": history, "n_rows": int(rows.size)})

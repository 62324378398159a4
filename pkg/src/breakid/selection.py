"""Model screening cost and scores against a known equation."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError, NoModelError

DEFAULT_WEIGHTS = (1.0, 10.0, 1000.0)


@dataclass(frozen=True)
class ModelScore:
    fit: float            # w1 * ln RSS
    sparsity: float       # w2 * ||xi||_0
    structure: float      # w3 if a side is missing, else 0
    rss: float
    n_terms: int
    valid: bool

    @property
    def total(self) -> float:
        return self.fit + self.sparsity + self.structure

    def to_dict(self) -> dict:
        d = asdict(self)
        d["total"] = self.total
        return d


def model_cost(xi, theta, ndot, is_birth, weights=DEFAULT_WEIGHTS, rows=None) -> ModelScore:
    """``w1 ln|ndot - theta xi|^2 + w2 |xi|_0 + w3 [birth or death part empty]``.

    ``rows`` restricts the residual to a subset of samples (hold-out scoring).
    """
    xi = np.asarray(xi, dtype=float)
    is_birth = np.asarray(is_birth, dtype=bool)
    nz = xi != 0
    if not nz.any():
        raise DomainError("an all-zero model cannot be scored")
    A = np.asarray(theta, dtype=float)
    b = np.asarray(ndot, dtype=float).ravel()
    if rows is not None:
        A, b = A[rows], b[rows]
    # only active columns enter, so unused columns never matter
    r = b - A[:, nz] @ xi[nz]
    rss = float(r @ r)
    w1, w2, w3 = weights
    valid = bool(nz[is_birth].any() and nz[~is_birth].any())
    fit = w1 * np.log(rss) if rss > 0 else -np.inf
    return ModelScore(float(fit), float(w2 * nz.sum()), 0.0 if valid else float(w3), rss,
                      int(nz.sum()), valid)


@dataclass
class Selection:
    lam: float
    xi: np.ndarray
    score: ModelScore
    index: int
    scores: list


def select_model(pool: Sequence[tuple[float, np.ndarray]], theta, ndot, is_birth,
                 weights=DEFAULT_WEIGHTS, rows=None) -> Selection:
    """Lowest-cost model of a ``(lambda, xi)`` pool.

    All-zero candidates are skipped.  Ties go to fewer terms, then to the
    smaller threshold.
    """
    scored = []
    for i, (lam, xi) in enumerate(pool):
        xi = np.asarray(xi, dtype=float)
        if not np.any(xi):
            continue
        scored.append((model_cost(xi, theta, ndot, is_birth, weights, rows), float(lam), i, xi))
    if not scored:
        raise NoModelError(f"all {len(pool)} candidate models are empty")
    best = min(scored, key=lambda s: (s[0].total, s[0].n_terms, s[1]))
    return Selection(best[1], best[3], best[0], best[2], [(s[1], s[0]) for s in scored])


def coefficient_error(xi_true, xi) -> float:
    """Relative Euclidean error ``|xi_true - xi| / |xi_true|``."""
    t = np.asarray(xi_true, dtype=float)
    x = np.asarray(xi, dtype=float)
    if t.shape != x.shape:
        raise DomainError("coefficient vectors differ in length")
    norm = np.linalg.norm(t)
    if norm == 0:
        raise DomainError("true coefficient vector is zero")
    return float(np.linalg.norm(t - x) / norm)


def success_rate(true_support, identified_support, library_size: int) -> float:
    """Percent of library terms whose active/inactive status is right."""
    if library_size < 1:
        raise DomainError("library must hold at least one term")
    t = np.zeros(library_size, dtype=bool)
    f = np.zeros(library_size, dtype=bool)
    t[np.asarray(list(true_support), dtype=int)] = True
    f[np.asarray(list(identified_support), dtype=int)] = True
    return float(100.0 * np.mean(t == f))

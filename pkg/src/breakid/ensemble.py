"""Bootstrap ensembles of cb-STLS fits.

Each replicate resamples the regression rows with replacement, rebuilds its
constraints on the resampled rows and runs cb-STLS.  The random stream of a
replicate is derived from ``(master_seed, replicate index)`` alone, so the
member list does not depend on how replicates are scheduled.
"""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DomainError, InfeasibleError
from .regression import ConstraintOptions, SparseSolution, cb_stls

logger = logging.getLogger(__name__)

MODES = ("bagging", "bragging")


def replicate_rng(master_seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(index)]))


def _one_replicate(args) -> SparseSolution:
    theta, ndot, lam, is_birth, opts, seed, idx, resample, stls_kw = args
    m = theta.shape[0]
    if resample:
        rows = replicate_rng(seed, idx).integers(0, m, size=m)
        A, b = theta[rows], ndot[rows]
    else:
        A, b = theta, ndot
    try:
        return cb_stls(A, b, lam, is_birth, opts, **stls_kw)
    except InfeasibleError as exc:
        flag = "infeasible"
        err = str(exc)
    except DomainError as exc:
        # e.g. every resampled row below the magnitude threshold
        flag = "failed"
        err = str(exc)
    k = theta.shape[1]
    return SparseSolution(np.zeros(k), np.zeros(0, dtype=int), lam, 0, float("nan"),
                          flag, {"error": err})


def bootstrap_fit(theta: np.ndarray, ndot: np.ndarray, lam: float, is_birth,
                  constraints: ConstraintOptions | None = ConstraintOptions(),
                  replicates: int = 100, master_seed: int = 0, workers: int = 1,
                  resample: bool = True, **stls_kw) -> list[SparseSolution]:
    """Run ``replicates`` cb-STLS fits on row-bootstrapped data.

    ``resample=False`` fits the original rows in every replicate (a test
    hook).  Infeasible replicates come back as flagged all-zero members.
    """
    if replicates < 1:
        raise DomainError("replicates must be >= 1")
    theta = np.asarray(theta, dtype=float)
    ndot = np.asarray(ndot, dtype=float).ravel()
    is_birth = np.asarray(is_birth, dtype=bool)
    jobs = [(theta, ndot, lam, is_birth, constraints, master_seed, i, resample, stls_kw)
            for i in range(replicates)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            members = list(pool.map(_one_replicate, jobs, chunksize=max(1, replicates // (4 * workers))))
    else:
        members = [_one_replicate(j) for j in jobs]
    bad = sum(1 for s in members if s.flag in ("infeasible", "failed"))
    if bad:
        logger.info("%d of %d replicates infeasible or failed (lambda=%g)", bad, replicates, lam)
    return members


@dataclass
class EnsembleResult:
    """Aggregated bootstrap ensemble.

    ``coefficient_of_variation`` is ``std / |mean|`` over the members in
    which a term is non-zero (0 when it is never selected); the aggregate
    itself is the mean or median over all members, zeros included.
    """

    members: np.ndarray              # (replicates, k)
    inclusion_probability: np.ndarray
    coefficient_of_variation: np.ndarray
    xi: np.ndarray
    mode: str
    ip_min: float
    cov_max: float
    bagging: np.ndarray
    bragging: np.ndarray
    master_seed: int | None = None
    flags: list = field(default_factory=list)

    @property
    def replicates(self) -> int:
        return self.members.shape[0]

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.xi)

    def summary_rows(self, names: Sequence[str]) -> list[dict]:
        return [{"term": n, "inclusion_probability": float(self.inclusion_probability[i]),
                 "cov": float(self.coefficient_of_variation[i]),
                 "bagging": float(self.bagging[i]), "bragging": float(self.bragging[i]),
                 "aggregate": float(self.xi[i])}
                for i, n in enumerate(names)]

    def write_csv(self, path, names: Sequence[str]) -> Path:
        path = Path(path)
        rows = self.summary_rows(names)
        with path.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            for r in rows:
                w.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in r.items()})
        return path


def aggregate(members, mode: str = "bagging", ip_min: float = 0.65, cov_max: float = 1.0,
              master_seed: int | None = None) -> EnsembleResult:
    """Combine member coefficient vectors.

    A term survives iff its inclusion probability is at least ``ip_min`` and
    its coefficient of variation is at most ``cov_max``.
    """
    if mode not in MODES:
        raise DomainError(f"mode must be one of {MODES}")
    flags = []
    if len(members) and isinstance(members[0], SparseSolution):
        flags = [m.flag for m in members]
        members = [m.xi for m in members]
    M = np.atleast_2d(np.asarray(members, dtype=float))
    if M.size == 0 or M.shape[0] == 0:
        raise DomainError("no ensemble members")
    nz = M != 0
    ip = nz.mean(axis=0)
    cov = np.zeros(M.shape[1])
    for j in range(M.shape[1]):
        vals = M[nz[:, j], j]
        if vals.size:
            mu = vals.mean()
            cov[j] = vals.std() / abs(mu) if mu != 0 else np.inf
    bag = M.mean(axis=0)
    brag = np.median(M, axis=0)
    agg = (bag if mode == "bagging" else brag).copy()
    keep = (ip >= ip_min) & (cov <= cov_max)
    agg[~keep] = 0.0
    return EnsembleResult(M, ip, cov, agg, mode, ip_min, cov_max, bag, brag, master_seed, flags)

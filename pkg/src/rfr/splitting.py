"""Node-splitting scores: MCF difference vectors, log-rank quadratic form, L2 distances."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .mcf import McfEstimate, _covariance_from, _increments, _variance_from, evaluate
from .nhpp import IntensityModel, mean_covariate_path

DEFAULT_BINS = 32
INTENSITY_GRID = 64


@dataclass(frozen=True)
class SplitCandidate:
    covariate_index: int
    split_point: float
    score: float

    def __post_init__(self):
        if not (np.isfinite(self.score) and self.score >= 0):
            raise ValueError(f"split score must be finite and non-negative, got {self.score}")

    def beats(self, other: "SplitCandidate | None") -> bool:
        """Higher score wins; ties go to the smaller covariate index, then split point."""
        if other is None:
            return True
        return (-self.score, self.covariate_index, self.split_point) < \
               (-other.score, other.covariate_index, other.split_point)


@dataclass(frozen=True, eq=False)
class DiffVector:
    times: np.ndarray
    z: np.ndarray


def z_diff(left: McfEstimate, right: McfEstimate, pooled_times) -> DiffVector:
    t = np.asarray(pooled_times, dtype=float)
    return DiffVector(t, evaluate(left.mcf, t) - evaluate(right.mcf, t))


def l2_distance(left: McfEstimate, right: McfEstimate, pooled_times) -> float:
    """Discretised L2 distance between two MCFs over the pooled failure times."""
    z = z_diff(left, right, pooled_times).z
    return float(np.sqrt(z @ z))


def _counts_on(records, times):
    n = len(records)
    D = np.zeros((n, times.size))
    for i, r in enumerate(records):
        if r.n_failures:
            np.add.at(D[i], np.searchsorted(times, r.failure_times), 1.0)
    censor = np.array([r.censor_time for r in records])
    R = (times[None, :] <= censor[:, None]).astype(float)
    return D, R


def mcf_z_covariance(records, times) -> tuple[np.ndarray, np.ndarray]:
    """MCF values and their covariance matrix for ``records`` on a common time grid.

    Diagonal entries are the large-sample variances; off-diagonal entries
    come from the increment covariance sums.
    """
    D, R = _counts_on(records, times)
    d_dot, r_dot = D.sum(axis=0), R.sum(axis=0)
    values = np.cumsum(_increments(d_dot, r_dot))
    cov = _covariance_from(D, R, d_dot, r_dot)
    cov[np.diag_indices(times.size)] = _variance_from(D, R, d_dot, r_dot)
    return values, cov


def mcf_z_factor(records, times) -> tuple[np.ndarray, np.ndarray]:
    """MCF values and a factor ``F`` with ``F.T @ F`` equal to the covariance matrix.

    Row ``i`` of the deviation matrix holds the running sum of system ``i``'s
    weighted deviations; its Gram matrix reproduces both the variances and
    the increment covariance sums.  Only the triangular QR factor is
    returned, so no per-system row leaves the caller.
    """
    D, R = _counts_on(records, times)
    dbar = _increments(D.sum(axis=0), R.sum(axis=0))
    return np.cumsum(dbar), deviation_factor(D, R, dbar, R.sum(axis=0))


def deviation_factor(D, R, dbar, r_dot) -> np.ndarray:
    """Triangular factor of the deviation rows of ``(D, R)`` against given increments and at-risk totals.

    With pooled ``dbar`` and ``r_dot`` broadcast to every shard, stacking the
    shards' factors gives the pooled covariance exactly.
    """
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(r_dot > 0, R / r_dot, 0.0)
    A = np.cumsum(w * (D - dbar), axis=1)
    return np.linalg.qr(A, mode="r") if A.shape[0] > A.shape[1] else A


def quadratic_form_factor(z: np.ndarray, F: np.ndarray) -> float:
    """``z Sigma^+ z`` for ``Sigma = F.T @ F`` with the same rank cut as :func:`quadratic_form`."""
    _, s, Vt = np.linalg.svd(F, full_matrices=False)
    lam = s ** 2
    top = lam.max() if lam.size else 0.0
    keep = lam > top * z.size * np.finfo(float).eps
    proj = Vt[keep] @ z
    return float(np.sum(proj ** 2 / lam[keep]))


def pooled_failure_times(*groups) -> np.ndarray:
    arrays = [r.failure_times for g in groups for r in g]
    return np.unique(np.concatenate(arrays)) if arrays else np.empty(0)


def quadratic_form(z: np.ndarray, sigma: np.ndarray, literal: bool = False) -> float:
    """``z Sigma^+ z`` with a symmetric eigen pseudo-inverse.

    Eigenvalues at or below ``sigma_max * k * eps`` (negative ones included)
    are discarded, so the result is never negative.  ``literal=True``
    returns ``z Sigma z`` instead.
    """
    if literal:
        return float(z @ sigma @ z)
    sigma = 0.5 * (sigma + sigma.T)
    lam, U = np.linalg.eigh(sigma)
    top = np.max(np.abs(lam)) if lam.size else 0.0
    keep = lam > top * lam.size * np.finfo(float).eps
    proj = U[:, keep].T @ z
    return float(np.sum(proj ** 2 / lam[keep]))


def logrank_statistic(left_shard, right_shard, covariance: str = "estimated",
                      literal: bool = False) -> tuple[float, int]:
    """Quadratic-form statistic comparing the two daughters' MCFs.

    ``covariance="identity"`` replaces the estimated covariance matrix with
    the identity, in which case the square root equals :func:`l2_distance`.
    Returns ``(statistic, k - 1)`` for ``k`` pooled failure times.
    """
    left = getattr(left_shard, "records", left_shard)
    right = getattr(right_shard, "records", right_shard)
    times = pooled_failure_times(left, right)
    k = times.size
    if k == 0:
        raise ValueError("log-rank statistic needs at least one pooled failure time")
    mL, cL = mcf_z_covariance(left, times)
    mR, cR = mcf_z_covariance(right, times)
    z = mL - mR
    if covariance == "identity":
        sigma = np.eye(k)
    elif covariance == "estimated":
        sigma = cL + cR
    else:
        raise ValueError(f"unknown covariance mode {covariance!r}")
    return max(quadratic_form(z, sigma, literal), 0.0), k - 1


def intensity_l2_distance(left_model: IntensityModel, right_model: IntensityModel, grid,
                          left_records: Sequence, right_records: Sequence) -> float:
    """L2 distance between two daughter intensities along their mean covariate paths."""
    for m in (left_model, right_model):
        if not m.fitted:
            raise ValueError("intensity model is not fitted")
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("empty time grid")
    lamL = _path_intensity(left_model, left_records, grid)
    lamR = _path_intensity(right_model, right_records, grid)
    d = lamL - lamR
    return float(np.sqrt(d @ d))


def _path_intensity(model: IntensityModel, records, grid) -> np.ndarray:
    if model.q == 0:
        return np.full(grid.size, np.exp(model.beta0))
    return np.exp(model.log_intensity(mean_covariate_path(records, grid)))


def intensity_grid(max_time: float, size: int = INTENSITY_GRID) -> np.ndarray:
    return np.linspace(0.0, max_time, size)


def enumerate_candidate_splits(records_or_values, covariate_index: int | None = None,
                               L: int = DEFAULT_BINS) -> np.ndarray:
    """Interior equal-width bin boundaries ``l/L`` that leave both sides non-empty.

    Accepts either a sequence of records (with ``covariate_index``) or the
    covariate values themselves.  Records go left when ``x <= boundary``.
    """
    if L < 2:
        raise ValueError("need at least two bins")
    if covariate_index is None:
        x = np.asarray(records_or_values, dtype=float)
    else:
        x = np.array([r.static_covariates[covariate_index] for r in records_or_values])
    bounds = np.arange(1, L) / L
    n_left = np.searchsorted(np.sort(x), bounds, side="right")
    return bounds[(n_left > 0) & (n_left < x.size)]

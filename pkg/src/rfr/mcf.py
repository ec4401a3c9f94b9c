"""Nonparametric mean cumulative function (MCF) estimation.

Per-shard estimates follow the usual recurrence-data recipe: at every
unique failure time, the failures observed there are divided by the number
of systems still under observation, and the ratios are accumulated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True, eq=False)
class StepFunction:
    """Right-continuous step function, 0 before the first knot."""

    knots: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        k = np.array(self.knots, dtype=float).reshape(-1)
        v = np.array(self.values, dtype=float).reshape(-1)
        if k.shape != v.shape:
            raise ValueError("knots and values must have the same length")
        if np.any(np.diff(k) <= 0):
            raise ValueError("knots must be strictly increasing")
        k.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "knots", k)
        object.__setattr__(self, "values", v)

    def __call__(self, t):
        return evaluate(self, t)

    def __len__(self):
        return self.knots.size

    def __eq__(self, other):
        if not isinstance(other, StepFunction):
            return NotImplemented
        return np.array_equal(self.knots, other.knots) and np.array_equal(self.values, other.values)

    __hash__ = object.__hash__

    def to_dict(self) -> dict:
        return {"knots": self.knots.tolist(), "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "StepFunction":
        return cls(d["knots"], d["values"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> "StepFunction":
        return cls.from_dict(json.loads(s))


def evaluate(step: StepFunction, t):
    """Value at the largest knot <= t; 0 before every knot. Vectorised in ``t``."""
    idx = np.searchsorted(step.knots, t, side="right") - 1
    out = np.where(idx >= 0, step.values[np.maximum(idx, 0)] if step.knots.size else 0.0, 0.0)
    if np.ndim(t) == 0:
        return float(out)
    return out


ZERO = StepFunction([], [])


@dataclass(frozen=True, eq=False)
class McfEstimate:
    mcf: StepFunction
    variance: StepFunction
    n_systems: int

    @property
    def pooled_times(self) -> np.ndarray:
        return self.mcf.knots

    def __call__(self, t):
        return evaluate(self.mcf, t)

    def __eq__(self, other):
        if not isinstance(other, McfEstimate):
            return NotImplemented
        return (self.mcf == other.mcf and self.variance == other.variance
                and self.n_systems == other.n_systems)

    __hash__ = object.__hash__

    def to_dict(self) -> dict:
        return {"mcf": self.mcf.to_dict(), "variance": self.variance.to_dict(),
                "n_systems": self.n_systems}

    @classmethod
    def from_dict(cls, d: dict) -> "McfEstimate":
        return cls(StepFunction.from_dict(d["mcf"]), StepFunction.from_dict(d["variance"]),
                   int(d["n_systems"]))


# ---------------------------------------------------------------- count tables

def count_table(records) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(times, D, R)`` for a collection of systems.

    ``times`` are the ordered unique failure ages; ``D[i, k]`` counts the
    failures of system ``i`` at ``times[k]`` and ``R[i, k]`` is 1 while
    system ``i`` is still observed at ``times[k]``.
    """
    n = len(records)
    ft = [r.failure_times for r in records]
    counts = np.fromiter((f.size for f in ft), dtype=np.intp, count=n)
    censor = np.fromiter((r.censor_time for r in records), dtype=float, count=n)
    if counts.sum() == 0:
        return np.empty(0), np.zeros((n, 0)), np.zeros((n, 0))
    times, inv = np.unique(np.concatenate(ft), return_inverse=True)
    D = np.zeros((n, times.size))
    np.add.at(D, (np.repeat(np.arange(n), counts), inv), 1.0)
    R = (times[None, :] <= censor[:, None]).astype(float)
    return times, D, R


def _increments(d_dot: np.ndarray, r_dot: np.ndarray) -> np.ndarray:
    """d./delta. with 0 wherever nobody fails (including empty risk sets)."""
    with np.errstate(invalid="ignore", divide="ignore"):
        inc = np.where(d_dot > 0, d_dot / r_dot, 0.0)
    return inc


def _mcf_parts(records):
    times, D, R = count_table(records)
    d_dot, r_dot = D.sum(axis=0), R.sum(axis=0)
    assert np.all(r_dot[d_dot > 0] > 0), "failure observed with an empty risk set"
    return times, D, R, d_dot, r_dot


def _variance_from(D, R, d_dot, r_dot) -> np.ndarray:
    dbar = _increments(d_dot, r_dot)
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(r_dot > 0, R / r_dot, 0.0)
    A = np.cumsum(w * (D - dbar), axis=1)
    return np.sum(A * A, axis=0)


def local_mcf(shard) -> McfEstimate:
    """MCF (with its large-sample variance) from the systems in ``shard``."""
    records = getattr(shard, "records", shard)
    if len(records) == 0:
        raise ValueError("local_mcf needs at least one system")
    times, D, R, d_dot, r_dot = _mcf_parts(records)
    values = np.cumsum(_increments(d_dot, r_dot))
    var = _variance_from(D, R, d_dot, r_dot)
    return McfEstimate(StepFunction(times, values), StepFunction(times, var), len(records))


def local_mcf_variance(shard) -> StepFunction:
    return local_mcf(shard).variance


def mcf_covariance_matrix(shard) -> np.ndarray:
    """Covariance of the MCF estimate between every pair of knots."""
    records = getattr(shard, "records", shard)
    _, D, R, d_dot, r_dot = _mcf_parts(records)
    return _covariance_from(D, R, d_dot, r_dot)


def _dbar_covariance(D, R, d_dot, r_dot) -> np.ndarray:
    """Cov(dbar(t_k), dbar(t_k')) for every pair of pooled times."""
    k = d_dot.size
    if k == 0:
        return np.zeros((0, 0))
    dbar = _increments(d_dot, r_dot)
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(r_dot > 0, R / r_dot, 0.0)
        inv_r = np.where(r_dot > 0, 1.0 / r_dot, 0.0)
    dev = w * (D - dbar)  # delta_i(t)/delta.(t) * (d_i(t) - dbar(t))
    # cov_d[k, k'] = sum_i dev[i, k'] * d_i(t_k), used for t_k < t_k'
    cov_d = D.T @ dev
    var_d = np.sum(dev * (D - dbar), axis=0)
    upper = np.triu(cov_d, 1)
    C = upper + upper.T
    C[np.diag_indices(k)] = var_d
    # divide by the risk set at the earlier of the two times
    idx = np.arange(k)
    earlier = np.minimum(idx[:, None], idx[None, :])
    return C * inv_r[earlier]


def _covariance_from(D, R, d_dot, r_dot) -> np.ndarray:
    C = _dbar_covariance(D, R, d_dot, r_dot)
    M = np.cumsum(np.cumsum(C, axis=0), axis=1)
    # the two cumulative sums round differently above and below the diagonal
    return 0.5 * (M + M.T)


def mcf_covariance(shard, j: int, p: int) -> float:
    """Cov(mcf(t_j), mcf(t_p)) for 0-based knot indices ``j`` and ``p``."""
    M = mcf_covariance_matrix(shard)
    return float(M[j, p])


# ---------------------------------------------------------------- merging

def merge_mcf(locals_: Sequence[McfEstimate], weighted: bool = False,
              at_risk: Sequence[StepFunction] | None = None) -> McfEstimate:
    """Driver-side merge of per-worker estimates.

    The default is the unweighted mean of the local step functions, with
    variance ``sum(Var_w) / W**2``.  ``weighted=True`` needs the at-risk
    counts of every worker (``at_risk``) and delegates to
    :func:`merge_counts`, which reproduces the pooled estimator.
    """
    locals_ = list(locals_)
    if not locals_:
        raise ValueError("merge_mcf needs at least one local estimate")
    if weighted:
        raise ValueError("weighted merging works on counts; use merge_counts")
    W = len(locals_)
    if W == 1:
        return locals_[0]
    knots = np.unique(np.concatenate([e.mcf.knots for e in locals_]))
    vals = sum(evaluate(e.mcf, knots) for e in locals_) / W
    var = sum(evaluate(e.variance, knots) for e in locals_) / W ** 2
    return McfEstimate(StepFunction(knots, vals), StepFunction(knots, var),
                       sum(e.n_systems for e in locals_))


def merge_counts(times: np.ndarray, d_dots: Sequence[np.ndarray], r_dots: Sequence[np.ndarray],
                 weighted: bool = False) -> np.ndarray:
    """Merged MCF values on a common grid from per-worker (d., delta.) counts.

    Unweighted: mean over workers of each local MCF evaluated on the grid.
    Weighted: pooled increments sum_w d_w / sum_w delta_w.
    """
    if weighted:
        return np.cumsum(_increments(np.sum(d_dots, axis=0), np.sum(r_dots, axis=0)))
    locs = [np.cumsum(_increments(d, r)) for d, r in zip(d_dots, r_dots)]
    if len(locs) == 1:
        return locs[0]
    return np.sum(locs, axis=0) / len(locs)

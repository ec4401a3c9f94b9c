"""Driver/worker execution with data locality.

Each :class:`WorkerContext` owns one shard and answers requests with
summary statistics only: failure-time grids, count vectors, likelihood
moments, MCF step functions.  The driver (:func:`grow_tree_on_workers`)
never reads a record.  Workers live in this process; swapping the direct
method calls for a network transport would not touch any of the maths.

The non-distributed tree grower is the single-worker case of the same
driver, so ``W = 1`` reproduces it bit for bit.
"""

from __future__ import annotations

import threading
from collections import Counter
from dataclasses import dataclass, field
from functools import wraps
from typing import Callable, Sequence

import numpy as np

from .data import Shard, SystemRecord, shard_dataset
from .mcf import ZERO, McfEstimate, StepFunction, _increments, local_mcf, merge_mcf
from .nhpp import IntensityModel, NodeData, _carry_forward, _gradient, _nll, fit_node
from .splitting import (DEFAULT_BINS, SplitCandidate, _counts_on, deviation_factor, intensity_grid,
                        mcf_z_factor, quadratic_form, quadratic_form_factor)
from .tree import TreeNode

_ACTIVE = threading.local()


class LocalityViolation(RuntimeError):
    pass


@dataclass
class AccessAudit:
    """Counts record reads per worker and reads made outside any worker."""

    reads: Counter = field(default_factory=Counter)
    violations: int = 0
    strict: bool = False


class TrackedRecords:
    """Read-only record sequence that reports who is reading it."""

    def __init__(self, records, owner: int, audit: AccessAudit):
        self._records = tuple(records)
        self._owner = owner
        self._audit = audit

    def _check(self):
        if getattr(_ACTIVE, "worker", None) != self._owner:
            self._audit.violations += 1
            if self._audit.strict:
                raise LocalityViolation(f"records of worker {self._owner} read outside the worker")
        else:
            self._audit.reads[self._owner] += 1

    def __len__(self):
        return len(self._records)

    def __getitem__(self, i):
        self._check()
        return self._records[i]

    def __iter__(self):
        self._check()
        return iter(self._records)


def _worker_op(fn):
    @wraps(fn)
    def run(self, *args, **kwargs):
        prev = getattr(_ACTIVE, "worker", None)
        _ACTIVE.worker = self.worker_id
        try:
            return fn(self, *args, **kwargs)
        finally:
            _ACTIVE.worker = prev
    return run


@dataclass(frozen=True)
class NodeSummary:
    n: int
    failed: int
    times: np.ndarray


@dataclass(frozen=True, eq=False)
class SplitCounts:
    """Per-boundary left-daughter counts from one worker, on the driver's grid."""

    n_left: np.ndarray
    failed_left: np.ndarray
    dL: np.ndarray
    rL: np.ndarray
    d: np.ndarray
    r: np.ndarray
    n: int
    failed: int


@dataclass(frozen=True)
class DriverPlan:
    node_id: int
    covariates: tuple
    split_points: np.ndarray


class _RemotePart:
    """Handle on a worker-resident likelihood design; exposes statistics only."""

    def __init__(self, worker: "WorkerContext", key):
        self._worker, self._key = worker, key

    def moments(self):
        return self._worker._part_moments(self._key)

    def exposure(self, beta, center, scale):
        return self._worker._part_exposure(self._key, beta, center, scale)


class WorkerContext:
    def __init__(self, shard: Shard | Sequence[SystemRecord], audit: AccessAudit | None = None):
        if not isinstance(shard, Shard):
            shard = Shard(1, tuple(shard))
        self.worker_id = shard.worker_id
        self.audit = audit if audit is not None else AccessAudit()
        self._records = TrackedRecords(shard.records, self.worker_id, self.audit)
        self.n_records = len(shard.records)
        self._load()

    @_worker_op
    def _load(self):
        recs = list(self._records)
        self.p = recs[0].static_covariates.size if recs else 0
        self.q = recs[0].q if recs else 0
        self._X = np.array([r.static_covariates for r in recs], dtype=float).reshape(len(recs), self.p)
        self._nfail = np.array([r.n_failures for r in recs], dtype=np.intp)
        self._rows = np.arange(len(recs))
        self._nodes: dict[int, np.ndarray] = {}
        self._cache: dict = {}

    # ---------------------------------------------------------- membership

    @_worker_op
    def bootstrap(self, rng: np.random.Generator) -> list[str]:
        """Resample the local shard with replacement; returns in-bag ids."""
        n = self.n_records
        self._rows = rng.integers(0, n, size=n) if n else np.zeros(0, dtype=np.intp)
        self._reset()
        recs = self._records
        return [recs[i].id for i in self._rows]

    @_worker_op
    def use_all(self) -> list[str]:
        self._rows = np.arange(self.n_records)
        self._reset()
        return [r.id for r in self._records]

    def _reset(self):
        self._nodes.clear()
        self._cache.clear()

    @_worker_op
    def open_root(self, node_id: int) -> NodeSummary:
        self._nodes[node_id] = self._rows.copy()
        return self.summary(node_id)

    @_worker_op
    def open_filtered(self, node_id: int, node_filter: Callable | None) -> NodeSummary:
        rows = self._rows
        if node_filter is not None:
            keep = np.array([bool(node_filter(self._X[i])) for i in rows], dtype=bool)
            rows = rows[keep] if rows.size else rows
        self._nodes[node_id] = rows
        return self.summary(node_id)

    @_worker_op
    def summary(self, node_id: int) -> NodeSummary:
        rows = self._nodes[node_id]
        recs = self._records
        ft = [recs[i].failure_times for i in np.unique(rows)]
        times = np.unique(np.concatenate(ft)) if ft else np.empty(0)
        return NodeSummary(int(rows.size), int(np.count_nonzero(self._nfail[rows])), times)

    @_worker_op
    def split(self, node_id: int, j: int, point: float, left_id: int, right_id: int):
        rows = self._nodes.pop(node_id)
        go_left = self._X[rows, j] <= point
        self._nodes[left_id] = rows[go_left]
        self._nodes[right_id] = rows[~go_left]
        for key in [k for k in self._cache if k[0] == node_id]:
            del self._cache[key]

    @_worker_op
    def release(self, node_id: int):
        self._nodes.pop(node_id, None)
        for key in [k for k in self._cache if k[0] == node_id]:
            del self._cache[key]

    def _node_records(self, node_id):
        recs = self._records
        return [recs[i] for i in self._nodes[node_id]]

    def _side_mask(self, node_id, j, point, side):
        rows = self._nodes[node_id]
        if side is None:
            return np.ones(rows.size, dtype=bool)
        go_left = self._X[rows, j] <= point
        return go_left if side == "left" else ~go_left

    # ---------------------------------------------------------- MCF statistics

    def _counts(self, node_id, grid):
        key = (node_id, "counts", grid.size, grid.tobytes())
        hit = self._cache.get(key)
        if hit is None:
            recs = self._node_records(node_id)
            n, k = len(recs), grid.size
            D = np.zeros((n, k))
            for i, r in enumerate(recs):
                if r.n_failures:
                    np.add.at(D[i], np.searchsorted(grid, r.failure_times), 1.0)
            censor = np.array([r.censor_time for r in recs])
            R = (grid[None, :] <= censor[:, None]).astype(float)
            hit = self._cache[key] = (D, R)
        return hit

    def _events(self, node_id, grid):
        """Sparse form of the count table: (event owner, event knot, at-risk knot count)."""
        key = (node_id, "events", grid.size, grid.tobytes())
        hit = self._cache.get(key)
        if hit is None:
            recs = self._node_records(node_id)
            owner = np.repeat(np.arange(len(recs)), [r.n_failures for r in recs])
            ft = np.concatenate([r.failure_times for r in recs]) if recs else np.empty(0)
            knot = np.searchsorted(grid, ft)
            last = np.searchsorted(grid, [r.censor_time for r in recs], side="right")
            hit = self._cache[key] = (owner, knot, last)
        return hit

    @staticmethod
    def _grouped_counts(groups, n_groups, owner, knot, last, k):
        """Per-group d. and delta. on the grid."""
        D = np.zeros((n_groups, k))
        np.add.at(D, (groups[owner], knot), 1.0)
        H = np.zeros((n_groups, k + 1))
        np.add.at(H, (groups, last), 1.0)
        R = np.cumsum(H[:, ::-1], axis=1)[:, ::-1][:, 1:]
        return D, R

    @_worker_op
    def node_counts(self, node_id: int, grid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        owner, knot, last = self._events(node_id, grid)
        D, R = self._grouped_counts(np.zeros(last.size, dtype=np.intp), 1, owner, knot, last, grid.size)
        return D[0], R[0]

    @_worker_op
    def mcf_split_counts(self, node_id: int, j: int, bounds: np.ndarray,
                         grid: np.ndarray) -> SplitCounts:
        rows = self._nodes[node_id]
        owner, knot, last = self._events(node_id, grid)
        # bin b holds the systems with bounds[b-1] < x <= bounds[b]
        bins = np.searchsorted(bounds, self._X[rows, j], side="left")
        nb = bounds.size + 1
        D, R = self._grouped_counts(bins, nb, owner, knot, last, grid.size)
        cD, cR = np.cumsum(D, axis=0), np.cumsum(R, axis=0)
        n_left = np.cumsum(np.bincount(bins, minlength=nb))
        failed = np.cumsum(np.bincount(bins, weights=self._nfail[rows] > 0, minlength=nb)).astype(np.intp)
        return SplitCounts(n_left[:-1], failed[:-1], cD[:-1], cR[:-1], cD[-1], cR[-1],
                           int(rows.size), int(failed[-1]))

    @_worker_op
    def mcf_side_factor(self, node_id: int, j: int, point: float, side: str,
                        grid: np.ndarray, pooled: tuple | None = None) -> np.ndarray | None:
        """Triangular factor of this worker's daughter MCF covariance on ``grid``.

        ``pooled = (dbar, r_dot)`` measures deviations against the merged
        daughter instead of the local one.
        """
        mask = self._side_mask(node_id, j, point, side)
        if not mask.any():
            return None
        recs = [r for r, m in zip(self._node_records(node_id), mask) if m]
        if pooled is None:
            return mcf_z_factor(recs, grid)[1]
        D, R = _counts_on(recs, grid)
        return deviation_factor(D, R, *pooled)

    @_worker_op
    def local_mcf(self, node_id: int) -> McfEstimate | None:
        recs = self._node_records(node_id)
        return local_mcf(recs) if recs else None

    @_worker_op
    def variance_partial(self, node_id: int, grid, dbar, r_dot) -> np.ndarray:
        """This worker's share of the pooled large-sample variance."""
        D, R = self._counts(node_id, grid)
        with np.errstate(invalid="ignore", divide="ignore"):
            w = np.where(r_dot > 0, R / r_dot, 0.0)
        A = np.cumsum(w * (D - dbar), axis=1)
        return np.sum(A * A, axis=0)

    @_worker_op
    def map_local_mcf(self, node_filter: Callable | None = None,
                      split: SplitCandidate | None = None):
        """Local MCF of the node (or of both daughters when ``split`` is given).

        Empty memberships yield an empty estimate with ``n_systems == 0``.
        """
        recs = self._records
        rows = self._rows
        if node_filter is not None:
            rows = np.array([i for i in rows if node_filter(self._X[i])], dtype=np.intp)
        groups = [rows]
        if split is not None:
            go_left = self._X[rows, split.covariate_index] <= split.split_point
            groups = [rows[go_left], rows[~go_left]]
        out = []
        for g in groups:
            members = [recs[i] for i in g]
            out.append(local_mcf(members) if members else McfEstimate(ZERO, ZERO, 0))
        return out[0] if split is None else tuple(out)

    # ---------------------------------------------------------- likelihood statistics

    def _node_data(self, node_id):
        key = (node_id, "nd")
        nd = self._cache.get(key)
        if nd is None:
            nd = self._cache[key] = NodeData(self._node_records(node_id))
        return nd

    @_worker_op
    def left_counts(self, node_id: int, j: int, bounds: np.ndarray):
        rows = self._nodes[node_id]
        x = self._X[rows, j]
        order = np.argsort(x, kind="stable")
        n_left = np.searchsorted(x[order], bounds, side="right")
        failed = np.concatenate([[0], np.cumsum(self._nfail[rows][order] > 0)])
        return n_left, failed[n_left], int(rows.size), int(failed[-1])

    @_worker_op
    def likelihood_part(self, node_id: int, j: int | None = None, point: float | None = None,
                        side: str | None = None) -> _RemotePart | None:
        mask = self._side_mask(node_id, j, point, side)
        if not mask.any():
            return None
        key = (node_id, "part", j, point, side)
        if key not in self._cache:
            nd = self._node_data(node_id)
            self._cache[key] = nd if side is None else nd.subset(mask)
        return _RemotePart(self, key)

    @_worker_op
    def _part_moments(self, key):
        return self._cache[key].moments()

    @_worker_op
    def _part_exposure(self, key, beta, center, scale):
        return self._cache[key].exposure(beta, center, scale)

    @_worker_op
    def path_sums(self, node_id: int, grid: np.ndarray, j=None, point=None, side=None):
        """Covariate sums over the grid: ``(live_total, live_count, all_total, all_count)``."""
        key = (node_id, "path", grid.tobytes())
        hit = self._cache.get(key)
        if hit is None:
            recs = self._node_records(node_id)
            Zg = np.zeros((len(recs), grid.size, self.q))
            live = np.zeros((len(recs), grid.size), dtype=bool)
            for i, r in enumerate(recs):
                live[i] = grid <= r.censor_time
                for c, (t, v) in enumerate(r.dynamic_series):
                    Zg[i, :, c] = _carry_forward(t, v, grid)
            hit = self._cache[key] = (Zg, live)
        Zg, live = hit
        mask = self._side_mask(node_id, j, point, side)
        Zm, lm = Zg[mask], live[mask]
        return ((Zm * lm[:, :, None]).sum(axis=0), lm.sum(axis=0), Zm.sum(axis=0), int(mask.sum()))

    @_worker_op
    def map_local_likelihood(self, node_filter: Callable | None, params) -> tuple[float, np.ndarray]:
        """Unpenalised NLL and gradient contributions of this worker's node members."""
        model = params if isinstance(params, IntensityModel) else \
            IntensityModel(np.asarray(params)[0], np.asarray(params)[1:])
        recs = self._records
        rows = self._rows
        if node_filter is not None:
            rows = np.array([i for i in rows if node_filter(self._X[i])], dtype=np.intp)
        if rows.size == 0:
            return 0.0, np.zeros(model.q + 1)
        nd = NodeData([recs[i] for i in rows])
        return _nll(nd, model), _gradient(nd, model)


# ---------------------------------------------------------------- reduce side

def reduce_merge(locals_: Sequence[McfEstimate]) -> McfEstimate:
    """Unweighted merge over the workers that actually hold members."""
    present = [e for e in locals_ if e is not None and e.n_systems > 0]
    if not present:
        raise ValueError("no worker contributed to this node")
    return merge_mcf(present)


def _merged_mcf_payload(workers, node_id, weighted: bool) -> McfEstimate:
    if not weighted:
        return reduce_merge([w.local_mcf(node_id) for w in workers])
    grid = np.unique(np.concatenate([w.summary(node_id).times for w in workers]))
    counts = [w.node_counts(node_id, grid) for w in workers]
    d_dot = np.sum([c[0] for c in counts], axis=0)
    r_dot = np.sum([c[1] for c in counts], axis=0)
    dbar = _increments(d_dot, r_dot)
    var = np.sum([w.variance_partial(node_id, grid, dbar, r_dot) for w in workers], axis=0)
    n = sum(w.summary(node_id).n for w in workers)
    return McfEstimate(StepFunction(grid, np.cumsum(dbar)), StepFunction(grid, var), n)


def merged_node_mcf(workers: Sequence[WorkerContext], node_id: int = 0, weighted: bool = False) -> McfEstimate:
    """Driver-side MCF of an open node, from worker payloads only."""
    return _merged_mcf_payload(workers, node_id, weighted)


def distributed_mcf(data, W: int, seed: int = 0, weighted: bool = False,
                    stratify: bool = False) -> McfEstimate:
    """Shard ``data`` over ``W`` workers and merge their root-node MCFs."""
    workers = [WorkerContext(s) for s in shard_dataset(data, W, seed, stratify)]
    for w in workers:
        w.use_all()
        w.open_root(0)
    return merged_node_mcf(workers, 0, weighted)


def _merge_side(parts: list[SplitCounts], side: str, weighted: bool) -> tuple[np.ndarray, np.ndarray]:
    """Merged daughter MCF on the grid for every boundary; returns ``(values, contributors)``."""
    if side == "left":
        sel = [(s.dL, s.rL, s.n_left) for s in parts]
    else:
        sel = [(s.d - s.dL, s.r - s.rL, s.n - s.n_left) for s in parts]
    # a single worker's mean is its own estimate, bit for bit
    if weighted or len(sel) == 1:
        d = sel[0][0]
        r = sel[0][1]
        for dd, rr, _ in sel[1:]:
            d, r = d + dd, r + rr
        cnt = sum((nn > 0).astype(int) for _, _, nn in sel)
        return np.cumsum(_increments(d, r), axis=1), cnt
    acc = 0.0
    cnt = 0
    for dd, rr, nn in sel:
        m = np.cumsum(_increments(dd, rr), axis=1)
        acc = acc + np.where((nn > 0)[:, None], m, 0.0)
        cnt = cnt + (nn > 0).astype(int)
    return acc / np.maximum(cnt, 1)[:, None], cnt


@dataclass
class SearchResult:
    best: SplitCandidate | None
    left_model: IntensityModel | None = None
    right_model: IntensityModel | None = None
    evaluated: int = 0


def _valid(nL, nR, fL, fR, d0):
    return (nL > 0) & (nR > 0) & (fL >= d0) & (fR >= d0)


def driver_split_search(plan: DriverPlan, workers: Sequence[WorkerContext], *, mode: str = "mcf",
                        d0: int = 5, rule: str = "l2", weighted: bool = False,
                        omega: float = 0.0, node_model: IntensityModel | None = None,
                        grid: np.ndarray | None = None, literal: bool = False) -> SearchResult:
    """Best split for one node among the planned covariates and boundaries.

    ``grid`` is the node's pooled failure-time grid.  ``best`` is None when
    no candidate leaves ``d0`` failed systems on both sides with a positive
    score; the node then becomes terminal.
    """
    if grid is None:
        grid = np.unique(np.concatenate([w.summary(plan.node_id).times for w in workers]))
    if mode == "mcf":
        return _search_mcf(plan, workers, d0, rule, weighted, grid, literal)
    return _search_nhpp(plan, workers, d0, omega, node_model, grid)


def _search_mcf(plan, workers, d0, rule, weighted, grid, literal) -> SearchResult:
    best, evaluated = None, 0
    all_bounds = plan.split_points
    for j in sorted(plan.covariates):
        counts = [w.left_counts(plan.node_id, j, all_bounds) for w in workers]
        nL = sum(c[0] for c in counts)
        fL = sum(c[1] for c in counts)
        ok = _valid(nL, sum(c[2] for c in counts) - nL, fL, sum(c[3] for c in counts) - fL, d0)
        # boundaries with the same per-worker left counts share one partition;
        # the smallest of them wins any tie, so only it is scored
        keys = np.stack([c[0] for c in counts])
        first = np.r_[True, np.any(keys[:, 1:] != keys[:, :-1], axis=0)]
        sel = np.flatnonzero(ok & first)
        if sel.size == 0:
            continue
        bounds = all_bounds[sel]
        parts = [w.mcf_split_counts(plan.node_id, j, bounds, grid) for w in workers]
        mL, _ = _merge_side(parts, "left", weighted)
        mR, _ = _merge_side(parts, "right", weighted)
        Z = mL - mR
        if rule == "l2":
            scores = np.sqrt(np.sum(Z * Z, axis=1))
        elif rule == "logrank":
            scores = np.zeros(bounds.size)
            for b in range(bounds.size):
                pooled = _pooled_sides(parts, b) if weighted else None
                F = _merged_factor(workers, plan.node_id, j, bounds[b], grid, pooled)
                scores[b] = (max(quadratic_form(Z[b], F.T @ F, True), 0.0) if literal
                             else quadratic_form_factor(Z[b], F))
        else:
            raise ValueError(f"unknown splitting rule {rule!r}")
        evaluated += bounds.size
        for b in np.flatnonzero(scores > 0):
            cand = SplitCandidate(j, float(bounds[b]), float(scores[b]))
            if cand.beats(best):
                best = cand
    return SearchResult(best, evaluated=evaluated)


def _pooled_sides(parts: list[SplitCounts], b: int) -> dict:
    """Merged ``(dbar, r_dot)`` of both daughters at boundary ``b``."""
    dL = sum(s.dL[b] for s in parts)
    rL = sum(s.rL[b] for s in parts)
    d = sum(s.d for s in parts)
    r = sum(s.r for s in parts)
    return {"left": (_increments(dL, rL), rL), "right": (_increments(d - dL, r - rL), r - rL)}


def _merged_factor(workers, node_id, j, point, grid, pooled: dict | None = None) -> np.ndarray:
    """Stacked factor of the merged covariance.

    Unweighted: each side's sum over workers / W_side**2.  Weighted
    (``pooled`` given): deviations from the pooled daughters, which stack to
    the pooled covariance.
    """
    rows = []
    for side in ("left", "right"):
        pool = None if pooled is None else pooled[side]
        fs = [f for f in (w.mcf_side_factor(node_id, j, point, side, grid, pool) for w in workers)
              if f is not None]
        rows.extend(fs if len(fs) == 1 or pooled is not None else [f / len(fs) for f in fs])
    return np.vstack(rows)


def _mean_path(workers, node_id, grid, j, point, side) -> np.ndarray:
    sums = [w.path_sums(node_id, grid, j, point, side) for w in workers]
    live_tot = sum(s[0] for s in sums)
    live_cnt = sum(s[1] for s in sums)
    all_tot = sum(s[2] for s in sums)
    all_cnt = sum(s[3] for s in sums)
    mean = np.where(live_cnt[:, None] > 0, live_tot / np.maximum(live_cnt, 1)[:, None],
                    all_tot / max(all_cnt, 1))
    return mean


def _side_intensity(model: IntensityModel, path: np.ndarray) -> np.ndarray:
    if model.q == 0:
        return np.full(path.shape[0], np.exp(model.beta0))
    return np.exp(model.log_intensity(path))


def _search_nhpp(plan, workers, d0, omega, node_model, grid) -> SearchResult:
    node_id = plan.node_id
    bounds = plan.split_points
    tgrid = intensity_grid(float(grid[-1]) if grid.size else 0.0)
    best = SearchResult(None)
    seen: dict = {}
    for j in sorted(plan.covariates):
        counts = [w.left_counts(node_id, j, bounds) for w in workers]
        nL = sum(c[0] for c in counts)
        fL = sum(c[1] for c in counts)
        n = sum(c[2] for c in counts)
        f = sum(c[3] for c in counts)
        ok = _valid(nL, n - nL, fL, f - fL, d0)
        for b in np.flatnonzero(ok):
            key = tuple(int(c[0][b]) for c in counts)
            point = float(bounds[b])
            if (j, key) in seen:
                continue
            fits = []
            for side in ("left", "right"):
                parts = [p for p in (w.likelihood_part(node_id, j, point, side) for w in workers)
                         if p is not None]
                model = fit_node(parts, omega, init=node_model)
                lam = _side_intensity(model, _mean_path(workers, node_id, tgrid, j, point, side)
                                      if model.q else np.zeros((tgrid.size, 0)))
                fits.append((model, lam))
            d = fits[0][1] - fits[1][1]
            score = float(np.sqrt(d @ d))
            seen[(j, key)] = score
            best.evaluated += 1
            if not (np.isfinite(score) and score > 0):
                continue
            cand = SplitCandidate(j, point, score)
            if cand.beats(best.best):
                best = SearchResult(cand, fits[0][0], fits[1][0], best.evaluated)
    return best


# ---------------------------------------------------------------- tree growth

def fit_node_model(workers, node_id, omega, init=None) -> IntensityModel:
    parts = [p for p in (w.likelihood_part(node_id) for w in workers) if p is not None]
    return fit_node(parts, omega, init=init)


def grow_tree_on_workers(workers: Sequence[WorkerContext], *, mode: str = "mcf", m: int,
                         d0: int = 5, L: int = DEFAULT_BINS, rule: str = "l2",
                         rng: np.random.Generator, weighted: bool = False, omega: float = 0.0,
                         literal: bool = False) -> TreeNode:
    """Grow one tree from the workers' current (bootstrap) memberships.

    Raises ValueError when fewer than ``d0`` in-bag systems have a failure.
    """
    if d0 < 1:
        raise ValueError("d0 must be at least 1")
    p = workers[0].p
    bounds = np.arange(1, L) / L
    next_id = 0

    def new_id():
        nonlocal next_id
        next_id += 1
        return next_id - 1

    root = TreeNode(new_id())
    sums = [w.open_root(root.node_id) for w in workers]
    n, failed = sum(s.n for s in sums), sum(s.failed for s in sums)
    if failed < d0:
        raise ValueError(f"need at least d0={d0} systems with a failure, found {failed}")
    models = {}
    if mode == "nhpp":
        models[root.node_id] = fit_node_model(workers, root.node_id, omega)
    stack = [(root, sums)]
    while stack:
        node, sums = stack.pop()
        node.member_count = sum(s.n for s in sums)
        node.failed_count = sum(s.failed for s in sums)
        result = SearchResult(None)
        if node.failed_count >= 2 * d0:
            grid = np.unique(np.concatenate([s.times for s in sums]))
            cov = tuple(int(c) for c in rng.choice(p, size=min(m, p), replace=False))
            plan = DriverPlan(node.node_id, cov, bounds)
            result = driver_split_search(plan, workers, mode=mode, d0=d0, rule=rule,
                                         weighted=weighted, omega=omega,
                                         node_model=models.get(node.node_id), grid=grid,
                                         literal=literal)
        if result.best is None:
            if mode == "mcf":
                node.payload = _merged_mcf_payload(workers, node.node_id, weighted)
            else:
                node.payload = models.pop(node.node_id)
            for w in workers:
                w.release(node.node_id)
            continue
        best = result.best
        node.covariate_index, node.split_point = best.covariate_index, best.split_point
        node.left, node.right = TreeNode(new_id()), TreeNode(new_id())
        for w in workers:
            w.split(node.node_id, best.covariate_index, best.split_point,
                    node.left.node_id, node.right.node_id)
        if mode == "nhpp":
            models.pop(node.node_id, None)
            models[node.left.node_id] = result.left_model
            models[node.right.node_id] = result.right_model
        stack.append((node.right, [w.summary(node.right.node_id) for w in workers]))
        stack.append((node.left, [w.summary(node.left.node_id) for w in workers]))
    return root

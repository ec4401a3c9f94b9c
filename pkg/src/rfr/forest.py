"""Random forests for recurrence data (MCF leaves or NHPP intensity leaves).

Trees are grown through :mod:`rfr.distributed`; an in-process forest is
simply a forest with one worker holding every system.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data import RecurrenceDataset, Shard, SystemRecord, shard_dataset
from .distributed import AccessAudit, WorkerContext, grow_tree_on_workers
from .mcf import McfEstimate, evaluate
from .nhpp import IntensityModel, cumulative_intensity_curve, intensity_at, select_omega
from .splitting import DEFAULT_BINS
from .tree import TreeModel, TreeNode

FORMAT_VERSION = 1

_BOOTSTRAP, _GROW = 0, 1


def tree_rng(seed: int, b: int, purpose: int, w: int = 0) -> np.random.Generator:
    """Independent stream for tree ``b``; depends on nothing but its coordinates."""
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(entropy=seed, spawn_key=(b, purpose, w))))


def default_m(p: int) -> int:
    return max(1, p // 3)


def bootstrap_sample(data, seed) -> tuple[list, np.ndarray]:
    """``n`` draws with replacement; returns in-bag ids and the out-of-bag indicator row."""
    records = getattr(data, "records", data)
    n = len(records)
    if n < 1:
        raise ValueError("cannot bootstrap an empty dataset")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    draw = rng.integers(0, n, size=n)
    in_bag = [records[i].id for i in draw]
    gamma = np.ones(n, dtype=np.uint8)
    gamma[draw] = 0
    return in_bag, gamma


def grow_tree(in_bag: Sequence[SystemRecord], mode: str = "mcf", m: int | None = None,
              d0: int = 5, rule: str = "l2", seed=0, *, L: int = DEFAULT_BINS,
              omega: float = 0.0, weighted: bool = False, literal: bool = False) -> TreeModel:
    """Grow one tree on an explicit in-bag sample (a single in-process worker)."""
    worker = WorkerContext(Shard(1, tuple(in_bag)))
    ids = worker.use_all()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    root = grow_tree_on_workers([worker], mode=mode, m=m or default_m(worker.p), d0=d0, L=L,
                                rule=rule, rng=rng, weighted=weighted, omega=omega,
                                literal=literal)
    return TreeModel(root, tuple(ids), (seed,) if isinstance(seed, int) else ())


# ---------------------------------------------------------------- forest container

@dataclass(eq=False)
class ForestModel:
    trees: list
    mode: str
    membership: np.ndarray
    ids: tuple
    train_X: np.ndarray
    params: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def index_of(self, system_id) -> int:
        try:
            return self._index[system_id]
        except AttributeError:
            self._index = {s: i for i, s in enumerate(self.ids)}
            return self._index[system_id]

    def to_dict(self) -> dict:
        return {"version": self.version, "mode": self.mode, "params": self.params,
                "ids": list(self.ids), "train_X": self.train_X.tolist(),
                "membership": self.membership.astype(int).tolist(),
                "trees": [{"seed": list(t.seed), "bootstrap_ids": list(t.bootstrap_ids),
                           "root": _node_to_dict(t.root)} for t in self.trees]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "ForestModel":
        if d.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported forest format version {d.get('version')!r}")
        mode = d["mode"]
        trees = [TreeModel(_node_from_dict(t["root"], mode), tuple(t["bootstrap_ids"]),
                           tuple(t["seed"])) for t in d["trees"]]
        p = len(d["params"].get("covariate_names", [])) or None
        X = np.array(d["train_X"], dtype=float)
        if p is not None:
            X = X.reshape(-1, p)
        return cls(trees, mode, np.array(d["membership"], dtype=np.uint8).reshape(len(trees), -1),
                   tuple(d["ids"]), X, d["params"], d["version"])

    @classmethod
    def from_json(cls, s: str) -> "ForestModel":
        return cls.from_dict(json.loads(s))


def _node_to_dict(node: TreeNode) -> dict:
    out = {"id": node.node_id, "n": node.member_count, "failed": node.failed_count}
    if node.is_terminal:
        out["payload"] = node.payload.to_dict()
    else:
        out["split"] = [node.covariate_index, node.split_point]
        out["left"] = _node_to_dict(node.left)
        out["right"] = _node_to_dict(node.right)
    return out


def _node_from_dict(d: dict, mode: str) -> TreeNode:
    node = TreeNode(d["id"], d["n"], d["failed"])
    if "payload" in d:
        node.payload = McfEstimate.from_dict(d["payload"]) if mode == "mcf" \
            else IntensityModel.from_dict(d["payload"])
    else:
        node.covariate_index, node.split_point = int(d["split"][0]), float(d["split"][1])
        node.left = _node_from_dict(d["left"], mode)
        node.right = _node_from_dict(d["right"], mode)
    return node


# ---------------------------------------------------------------- fitting

def _grow_batch(shards, tree_ids, cfg) -> list[TreeModel]:
    audit = cfg["audit"]
    workers = [WorkerContext(s, audit) for s in shards]
    out = []
    for b in tree_ids:
        in_bag = []
        for w in workers:
            in_bag.extend(w.bootstrap(tree_rng(cfg["seed"], b, _BOOTSTRAP, w.worker_id - 1)))
        root = grow_tree_on_workers(workers, mode=cfg["mode"], m=cfg["m"], d0=cfg["d0"],
                                    L=cfg["L"], rule=cfg["rule"],
                                    rng=tree_rng(cfg["seed"], b, _GROW),
                                    weighted=cfg["weighted"], omega=cfg["omega"],
                                    literal=cfg["literal"])
        out.append(TreeModel(root, tuple(in_bag), (cfg["seed"], b)))
    return out


def fit_forest(data: RecurrenceDataset, B: int = 500, m: int | None = None, d0: int = 5,
               rule: str = "l2", mode: str = "mcf", seed: int = 0, *, L: int = DEFAULT_BINS,
               omega: float | None = None, weighted: bool = False, workers: int = 1,
               literal: bool = False, n_jobs: int = 1,
               audit: AccessAudit | None = None) -> ForestModel:
    """Grow ``B`` trees on bootstrap samples drawn inside each worker's shard."""
    if B < 1:
        raise ValueError("need at least one tree")
    if mode not in ("mcf", "nhpp"):
        raise ValueError(f"unknown mode {mode!r}")
    if rule not in ("l2", "logrank"):
        raise ValueError(f"unknown splitting rule {rule!r}")
    m = default_m(data.p) if m is None else int(m)
    if not 1 <= m <= data.p:
        raise ValueError(f"m must lie in [1, {data.p}]")
    if mode == "nhpp" and omega is None:
        omega = select_omega(data.records, seed=seed)
    omega = float(omega or 0.0)
    shards = shard_dataset(data, workers, seed)
    cfg = dict(seed=seed, mode=mode, m=m, d0=d0, L=L, rule=rule, weighted=weighted,
               omega=omega, literal=literal, audit=audit if audit is not None else AccessAudit())
    n_jobs = max(1, min(int(n_jobs), B))
    if n_jobs == 1:
        trees = _grow_batch(shards, range(B), cfg)
    else:
        chunks = [range(B)[k::n_jobs] for k in range(n_jobs)]
        with ThreadPoolExecutor(n_jobs) as pool:
            parts = list(pool.map(lambda c: _grow_batch(shards, c, cfg), chunks))
        trees = [None] * B
        for c, part in zip(chunks, parts):
            for b, t in zip(c, part):
                trees[b] = t
    ids = tuple(data.ids)
    membership = np.ones((B, data.n), dtype=np.uint8)
    pos = {s: i for i, s in enumerate(ids)}
    for b, t in enumerate(trees):
        membership[b, [pos[s] for s in set(t.bootstrap_ids)]] = 0
    params = dict(B=B, m=m, d0=d0, L=L, rule=rule, mode=mode, omega=omega, weighted=weighted,
                  workers=workers, literal=literal, seed=seed,
                  covariate_names=list(data.covariate_names),
                  channel_names=list(data.channel_names))
    return ForestModel(trees, mode, membership, ids, data.X, params)


# ---------------------------------------------------------------- prediction

def _require(forest: ForestModel, mode: str):
    if forest.mode != mode:
        raise ValueError(f"operation needs a {mode}-mode forest, this one is {forest.mode}")


def _per_tree_mcf(tree: TreeModel, X, t) -> np.ndarray:
    """Tree predictions, shape (n, len(t))."""
    pos = tree.apply(X)
    nodes = tree.nodes
    t = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.empty((pos.size, t.size))
    for u in np.unique(pos):
        out[pos == u] = evaluate(nodes[u].payload.mcf, t)
    return out


def tree_predict_mcf(tree: TreeModel, x, t):
    X = np.atleast_2d(np.asarray(x, dtype=float))
    out = _per_tree_mcf(tree, X, t)
    return _shape(out, x, t)


def _shape(out, x, t):
    if np.ndim(t) == 0:
        out = out[:, 0]
    if np.ndim(x) == 1:
        out = out[0]
    return float(out) if np.ndim(out) == 0 else out


def predict_mcf(forest: ForestModel, x, t):
    """Ensemble MCF at ``t`` for one covariate vector (or a matrix of them)."""
    _require(forest, "mcf")
    X = np.atleast_2d(np.asarray(x, dtype=float))
    per_tree = np.stack([_per_tree_mcf(tree, X, t) for tree in forest.trees])
    return _shape(per_tree.mean(axis=0), x, t)


def predict_intensity(forest: ForestModel, x, record: SystemRecord, t: float) -> float:
    _require(forest, "nhpp")
    X = np.atleast_2d(np.asarray(x, dtype=float))
    vals = [intensity_at(tree.leaf_nodes(X)[0].payload, record, t) for tree in forest.trees]
    return float(np.mean(vals))


def predict_cum_hazard(forest: ForestModel, x, record: SystemRecord, grid) -> np.ndarray:
    """Integral of the ensemble intensity along ``record``'s covariate path."""
    _require(forest, "nhpp")
    X = np.atleast_2d(np.asarray(x, dtype=float))
    curves = [cumulative_intensity_curve(tree.leaf_nodes(X)[0].payload, record, grid)
              for tree in forest.trees]
    return np.mean(curves, axis=0)


def predict_coefficients(forest: ForestModel, X) -> np.ndarray:
    """Ensemble mean of the leaf intensity coefficients on the raw covariate scale.

    Column 0 is the intercept; shape (n, q + 1).
    """
    _require(forest, "nhpp")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    total = None
    for tree in forest.trees:
        pos = tree.apply(X)
        nodes = tree.nodes
        coef = {}
        for u in np.unique(pos):
            b0, b = nodes[u].payload.raw_coefficients()
            coef[u] = np.concatenate([[b0], b])
        rows = np.stack([coef[u] for u in pos])
        total = rows if total is None else total + rows
    return total / forest.n_trees


def _score_times(records, horizon) -> np.ndarray:
    return np.array([min(horizon, r.censor_time) for r in records])


def per_tree_scores(forest: ForestModel, records: Sequence[SystemRecord], X=None,
                    horizon: float | None = None, trees=None) -> np.ndarray:
    """Predicted expected failures by ``min(horizon, c_i)``, shape (B, n)."""
    if horizon is None:
        horizon = default_horizon(records)
    X = np.array([r.static_covariates for r in records]) if X is None else np.asarray(X, float)
    X = X.reshape(len(records), -1)
    t = _score_times(records, horizon)
    trees = forest.trees if trees is None else trees
    out = np.empty((len(trees), len(records)))
    for b, tree in enumerate(trees):
        pos = tree.apply(X)
        nodes = tree.nodes
        for u in np.unique(pos):
            rows = np.flatnonzero(pos == u)
            payload = nodes[u].payload
            if forest.mode == "mcf":
                out[b, rows] = evaluate(payload.mcf, t[rows])
            else:
                out[b, rows] = [cumulative_intensity_curve(payload, records[i], [t[i]])[0]
                                for i in rows]
    return out


def default_horizon(records: Sequence[SystemRecord]) -> float:
    """Scoring horizon: the 90th percentile of censoring times."""
    return float(np.percentile([r.censor_time for r in records], 90))


def observed_scores(records: Sequence[SystemRecord], horizon: float) -> np.ndarray:
    return np.array([np.count_nonzero(r.failure_times <= horizon) for r in records], dtype=float)


def oob_predict(forest: ForestModel, system_id, t, record: SystemRecord | None = None) -> float:
    """Out-of-bag ensemble prediction for a training system; NaN if never out of bag.

    MCF mode returns the ensemble MCF at ``t``; NHPP mode needs the
    system's ``record`` and returns the cumulative intensity at ``t``.
    """
    i = forest.index_of(system_id)
    use = np.flatnonzero(forest.membership[:, i])
    if use.size == 0:
        return math.nan
    x = forest.train_X[i:i + 1]
    if forest.mode == "mcf":
        vals = [_per_tree_mcf(forest.trees[b], x, [t])[0, 0] for b in use]
    else:
        if record is None:
            raise ValueError("NHPP-mode out-of-bag prediction needs the system record")
        vals = [cumulative_intensity_curve(forest.trees[b].leaf_nodes(x)[0].payload, record, [t])[0]
                for b in use]
    return float(np.mean(vals))


def _oob_mean(P: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    cnt = gamma.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(cnt > 0, (P * gamma).sum(axis=0) / cnt, np.nan)


def c_index(predictions, observed) -> float:
    """Harrell concordance over all pairs; a tie on either side counts one half."""
    p = np.asarray(predictions, dtype=float).reshape(-1)
    o = np.asarray(observed, dtype=float).reshape(-1)
    if p.shape != o.shape:
        raise ValueError("predictions and observations differ in length")
    keep = np.isfinite(p) & np.isfinite(o)
    p, o = p[keep], o[keep]
    n = p.size
    if n < 2:
        raise ValueError("c_index needs at least two scoreable systems")
    iu = np.triu_indices(n, 1)
    sp = np.sign(p[:, None] - p[None, :])[iu]
    so = np.sign(o[:, None] - o[None, :])[iu]
    ties = int(np.count_nonzero((sp == 0) | (so == 0)))
    concordant = int(np.count_nonzero(sp * so > 0))
    return (2 * concordant + ties) / (2 * sp.size)


def oob_c_index(forest: ForestModel, data: RecurrenceDataset, horizon: float | None = None,
                P: np.ndarray | None = None) -> float:
    records = data.records
    horizon = default_horizon(records) if horizon is None else horizon
    if P is None:
        P = per_tree_scores(forest, records, horizon=horizon)
    return c_index(_oob_mean(P, forest.membership), observed_scores(records, horizon))


def oob_trace(forest: ForestModel, data: RecurrenceDataset, horizon: float | None = None) -> np.ndarray:
    """OOB C-index of the first ``b`` trees for ``b = 1..B`` (NaN while too few systems are OOB)."""
    records = data.records
    horizon = default_horizon(records) if horizon is None else horizon
    P = per_tree_scores(forest, records, horizon=horizon)
    obs = observed_scores(records, horizon)
    G = forest.membership.astype(float)
    num, cnt = np.cumsum(P * G, axis=0), np.cumsum(G, axis=0)
    out = np.full(forest.n_trees, np.nan)
    for b in range(forest.n_trees):
        with np.errstate(invalid="ignore", divide="ignore"):
            pred = np.where(cnt[b] > 0, num[b] / cnt[b], np.nan)
        if np.count_nonzero(np.isfinite(pred)) >= 2:
            out[b] = c_index(pred, obs)
    return out


def permutation_importance(forest: ForestModel, data: RecurrenceDataset, seed: int = 0,
                           repeats: int = 1, horizon: float | None = None) -> np.ndarray:
    """Drop in OOB C-index after permuting each covariate across systems.

    Trees that never split on a covariate are not re-evaluated, so an
    unused covariate scores exactly zero.
    """
    records = data.records
    horizon = default_horizon(records) if horizon is None else horizon
    X = data.X
    P = per_tree_scores(forest, records, X, horizon)
    base = oob_c_index(forest, data, horizon, P)
    rng = np.random.default_rng(seed)
    out = np.zeros(data.p)
    for j in range(data.p):
        users = [b for b, t in enumerate(forest.trees) if j in t.used_covariates]
        drops = []
        for _ in range(repeats):
            Xp = X.copy()
            Xp[:, j] = X[rng.permutation(data.n), j]
            if not users:
                drops.append(0.0)
                continue
            Pp = P.copy()
            Pp[users] = per_tree_scores(forest, records, Xp, horizon,
                                        [forest.trees[b] for b in users])
            drops.append(base - oob_c_index(forest, data, horizon, Pp))
        out[j] = float(np.mean(drops))
    return out


# ---------------------------------------------------------------- estimator wrapper

class RecurrenceForest(BaseEstimator):
    """Scikit-learn style wrapper around :func:`fit_forest`.

    ``fit`` takes a :class:`~rfr.data.RecurrenceDataset`; covariates are
    expected on [0, 1] (see :class:`~rfr.data.CovariateScaler`).
    """

    def __init__(self, n_trees: int = 500, max_features: int | None = None, d0: int = 5,
                 n_bins: int = DEFAULT_BINS, rule: str = "l2", mode: str = "mcf",
                 omega: float | None = None, weighted_merge: bool = False, n_workers: int = 1,
                 n_jobs: int = 1, random_state: int = 0):
        self.n_trees = n_trees
        self.max_features = max_features
        self.d0 = d0
        self.n_bins = n_bins
        self.rule = rule
        self.mode = mode
        self.omega = omega
        self.weighted_merge = weighted_merge
        self.n_workers = n_workers
        self.n_jobs = n_jobs
        self.random_state = random_state

    def fit(self, data: RecurrenceDataset, y=None):
        if not isinstance(data, RecurrenceDataset):
            raise TypeError("fit expects a RecurrenceDataset")
        X = data.X
        if X.size and (X.min() < 0 or X.max() > 1):
            raise ValueError("static covariates must be scaled to [0, 1]")
        self.forest_ = fit_forest(data, self.n_trees, self.max_features, self.d0, self.rule,
                                  self.mode, self.random_state, L=self.n_bins, omega=self.omega,
                                  weighted=self.weighted_merge, workers=self.n_workers,
                                  n_jobs=self.n_jobs)
        self.horizon_ = default_horizon(data.records)
        self.n_features_in_ = data.p
        self.omega_ = self.forest_.params["omega"]
        self.oob_score_ = oob_c_index(self.forest_, data, self.horizon_)
        return self

    def predict(self, data: RecurrenceDataset, t: float | None = None) -> np.ndarray:
        """Expected failures per system by ``min(t, c_i)`` (default: training horizon)."""
        check_is_fitted(self, "forest_")
        t = self.horizon_ if t is None else t
        return per_tree_scores(self.forest_, data.records, horizon=t).mean(axis=0)

    def score(self, data: RecurrenceDataset, y=None) -> float:
        check_is_fitted(self, "forest_")
        return c_index(self.predict(data), observed_scores(data.records, self.horizon_))

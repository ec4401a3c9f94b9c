"""Comparator predictors and the train/test C-index comparison harness."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import RecurrenceDataset, SystemRecord
from .forest import c_index, default_horizon, fit_forest, observed_scores, per_tree_scores
from .mcf import McfEstimate, evaluate, local_mcf
from .nhpp import IntensityModel, cumulative_intensity_curve, fit_intensity

METHODS = ("RF-R", "MCF", "MCF-K", "HPP", "NHPP")


def _times(records, horizon):
    return np.array([min(horizon, r.censor_time) for r in records])


class PooledMcf:
    """One MCF from all training systems, ignoring covariates."""

    def __init__(self, estimate: McfEstimate):
        self.estimate = estimate

    def predict(self, records: Sequence[SystemRecord], horizon: float) -> np.ndarray:
        return evaluate(self.estimate.mcf, _times(records, horizon))


def pooled_mcf(train) -> PooledMcf:
    return PooledMcf(local_mcf(getattr(train, "records", train)))


def _nearest(train_X: np.ndarray, x: np.ndarray, K: int) -> np.ndarray:
    d2 = np.sum((train_X - x) ** 2, axis=1)
    # keep training order so K = n reproduces the pooled estimate exactly
    return np.sort(np.argsort(d2, kind="stable")[:K])


def mcf_k_nearest(train, test_x, K: int = 20) -> McfEstimate:
    """MCF of the ``K`` training systems closest to ``test_x`` (Euclidean)."""
    records = getattr(train, "records", train)
    if not 1 <= K <= len(records):
        raise ValueError(f"K must lie in [1, {len(records)}], got {K}")
    X = np.array([r.static_covariates for r in records])
    idx = _nearest(X, np.asarray(test_x, dtype=float), K)
    return local_mcf([records[i] for i in idx])


class KNearestMcf:
    def __init__(self, train, K: int = 20):
        self.records = tuple(getattr(train, "records", train))
        if not 1 <= K <= len(self.records):
            raise ValueError(f"K must lie in [1, {len(self.records)}], got {K}")
        self.K = K
        self._X = np.array([r.static_covariates for r in self.records])

    def predict(self, records: Sequence[SystemRecord], horizon: float) -> np.ndarray:
        t = _times(records, horizon)
        out = np.empty(len(records))
        for i, r in enumerate(records):
            idx = _nearest(self._X, r.static_covariates, self.K)
            out[i] = evaluate(local_mcf([self.records[k] for k in idx]).mcf, t[i])
        return out


def with_static_channels(record: SystemRecord, keep_dynamic: bool) -> SystemRecord:
    """Static covariates as constant sensor channels (ahead of any real channels)."""
    chans = tuple((np.array([0.0]), np.array([v])) for v in record.static_covariates)
    if keep_dynamic:
        chans = chans + record.dynamic_series
    return SystemRecord(record.id, record.failure_times, record.censor_time,
                        record.static_covariates, chans)


class LogLinearModel:
    """Single intensity model over static (and optionally dynamic) covariates."""

    def __init__(self, model: IntensityModel, dynamic: bool):
        self.model = model
        self.dynamic = dynamic

    def predict(self, records: Sequence[SystemRecord], horizon: float) -> np.ndarray:
        t = _times(records, horizon)
        return np.array([cumulative_intensity_curve(
            self.model, with_static_channels(r, self.dynamic), [ti])[0] for r, ti in zip(records, t)])


def fit_hpp_loglinear(train) -> LogLinearModel:
    recs = [with_static_channels(r, False) for r in getattr(train, "records", train)]
    return LogLinearModel(fit_intensity(recs, 0.0), False)


def fit_nhpp_loglinear(train) -> LogLinearModel:
    recs = [with_static_channels(r, True) for r in getattr(train, "records", train)]
    return LogLinearModel(fit_intensity(recs, 0.0), True)


class ForestPredictor:
    def __init__(self, forest):
        self.forest = forest

    def predict(self, records: Sequence[SystemRecord], horizon: float) -> np.ndarray:
        return per_tree_scores(self.forest, records, horizon=horizon).mean(axis=0)


def _fit_method(name: str, train: RecurrenceDataset, seed: int, K: int, rfr_params: dict):
    if name == "RF-R":
        params = dict(rfr_params)
        params.setdefault("mode", "nhpp" if train.q else "mcf")
        return ForestPredictor(fit_forest(train, seed=seed, **params))
    if name == "MCF":
        return pooled_mcf(train)
    if name == "MCF-K":
        return KNearestMcf(train, min(K, train.n))
    if name == "HPP":
        return fit_hpp_loglinear(train)
    if name == "NHPP":
        return fit_nhpp_loglinear(train)
    raise ValueError(f"unknown method {name!r}; choose from {', '.join(METHODS)}")


@dataclass
class ComparisonReport:
    methods: tuple
    values: np.ndarray
    config: dict = field(default_factory=dict)
    errors: list = field(default_factory=list)

    def summary(self) -> dict:
        out = {}
        for j, name in enumerate(self.methods):
            col = self.values[:, j]
            col = col[np.isfinite(col)]
            if col.size == 0:
                out[name] = {"n": 0}
                continue
            q1, med, q3 = np.percentile(col, [25, 50, 75])
            out[name] = {"n": int(col.size), "mean": float(col.mean()),
                         "std": float(col.std(ddof=1)) if col.size > 1 else 0.0,
                         "q1": float(q1), "median": float(med), "q3": float(q3)}
        return out

    def means(self) -> dict:
        return {k: v.get("mean", math.nan) for k, v in self.summary().items()}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("iteration",) + tuple(self.methods))
            for i, row in enumerate(self.values):
                w.writerow([i] + ["" if not np.isfinite(v) else repr(float(v)) for v in row])

    def to_json(self) -> str:
        return json.dumps({"methods": list(self.methods), "config": self.config,
                           "summary": self.summary(), "errors": self.errors}, indent=2)


def cross_validate_compare(data: RecurrenceDataset, methods: Sequence[str] = ("RF-R", "MCF", "MCF-K", "HPP"),
                           iterations: int = 500, split: float = 0.75, seed: int = 0, K: int = 20,
                           rfr_params: dict | None = None) -> ComparisonReport:
    """Repeated random train/test splits; test-set C-index of every method.

    A method that fails on an iteration gets NaN there; the failure is
    listed in ``errors``.
    """
    if iterations < 1:
        raise ValueError("need at least one iteration")
    if not 0 < split < 1:
        raise ValueError("split must lie in (0, 1)")
    methods = tuple(methods)
    for name in methods:
        if name not in METHODS:
            raise ValueError(f"unknown method {name!r}; choose from {', '.join(METHODS)}")
    rfr_params = dict(rfr_params or {})
    horizon = default_horizon(data.records)
    n_train = int(round(split * data.n))
    if not 2 <= n_train <= data.n - 2:
        raise ValueError("split leaves fewer than two systems on one side")
    values = np.full((iterations, len(methods)), np.nan)
    errors = []
    for it in range(iterations):
        order = np.random.default_rng([seed, it]).permutation(data.n)
        train, test = data.subset(np.sort(order[:n_train])), data.subset(np.sort(order[n_train:]))
        obs = observed_scores(test.records, horizon)
        for j, name in enumerate(methods):
            try:
                model = _fit_method(name, train, seed * 100003 + it, K, rfr_params)
                values[it, j] = c_index(model.predict(test.records, horizon), obs)
            except (ValueError, ArithmeticError) as exc:
                errors.append({"iteration": it, "method": name, "error": str(exc)})
    config = dict(methods=list(methods), iterations=iterations, split=split, seed=seed, K=K,
                  horizon=horizon, rfr_params=rfr_params)
    return ComparisonReport(methods, values, config, errors)

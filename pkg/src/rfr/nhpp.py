"""Log-linear NHPP intensity models with an L1 (Lasso) penalty.

The intensity of a node is ``exp(beta0 + sum_j zs_j(t) * beta_j)`` where
``zs`` are the dynamic covariates standardised with the node's exposure
weighted mean and standard deviation.  Covariate paths are piecewise
constant, so every integral below is an exact sum over segments.
"""

from __future__ import annotations

import json
import math
import weakref
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import DataError, SystemRecord, dynamic_value_at


@dataclass(frozen=True, eq=False)
class IntensityModel:
    beta0: float = 0.0
    beta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    omega: float = 0.0
    center: np.ndarray | None = None
    scale: np.ndarray | None = None
    fitted: bool = True
    converged: bool = True
    node_id: int | None = None

    def __post_init__(self):
        b = np.array(self.beta, dtype=float).reshape(-1)
        object.__setattr__(self, "beta", b)
        object.__setattr__(self, "beta0", float(self.beta0))
        c = np.zeros(b.size) if self.center is None else np.array(self.center, dtype=float).reshape(-1)
        s = np.ones(b.size) if self.scale is None else np.array(self.scale, dtype=float).reshape(-1)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "scale", s)

    @property
    def q(self) -> int:
        return self.beta.size

    def raw_coefficients(self) -> tuple[float, np.ndarray]:
        """Coefficients on the unstandardised covariate scale."""
        b = self.beta / self.scale
        return self.beta0 - float(self.center @ b), b

    def log_intensity(self, Z) -> np.ndarray:
        Z = np.asarray(Z, dtype=float).reshape(-1, self.q)
        return self.beta0 + ((Z - self.center) / self.scale) @ self.beta

    def to_dict(self) -> dict:
        return {"beta0": self.beta0, "beta": self.beta.tolist(), "omega": self.omega,
                "center": self.center.tolist(), "scale": self.scale.tolist(),
                "converged": self.converged}

    @classmethod
    def from_dict(cls, d: dict) -> "IntensityModel":
        return cls(d["beta0"], d["beta"], d.get("omega", 0.0), d.get("center"), d.get("scale"),
                   converged=d.get("converged", True))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> "IntensityModel":
        return cls.from_dict(json.loads(s))


def _require_fitted(model: IntensityModel):
    if not model.fitted:
        raise ValueError("intensity model is not fitted")


# ---------------------------------------------------------------- segment designs

def _carry_forward(times, values, at):
    k = np.searchsorted(times, at, side="right") - 1
    # before the first sample the first value is used
    return values[np.maximum(k, 0)]


_DESIGNS: "weakref.WeakKeyDictionary[SystemRecord, tuple]" = weakref.WeakKeyDictionary()


def record_design(record: SystemRecord) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """``(starts, lengths, Z_segments, Z_events)`` over ``[0, censor_time)``."""
    cached = _DESIGNS.get(record)
    if cached is None:
        cached = _DESIGNS[record] = _build_design(record)
    return cached


def _build_design(record: SystemRecord):
    c = record.censor_time
    cuts = [np.array([0.0, c])]
    for t, _ in record.dynamic_series:
        cuts.append(t[(t > 0) & (t < c)])
    bp = np.unique(np.concatenate(cuts))
    starts, lengths = bp[:-1], np.diff(bp)
    q = record.q
    Zs = np.empty((starts.size, q))
    Ze = np.empty((record.n_failures, q))
    for j, (t, v) in enumerate(record.dynamic_series):
        Zs[:, j] = _carry_forward(t, v, starts)
        Ze[:, j] = _carry_forward(t, v, record.failure_times)
    for a in (starts, lengths, Zs, Ze):
        a.setflags(write=False)
    return starts, lengths, Zs, Ze


class NodeData:
    """Stacked segment design of a set of systems; the unit of likelihood work."""

    def __init__(self, records: Sequence[SystemRecord]):
        self.records = tuple(records)
        designs = [record_design(r) for r in self.records]
        q = self.records[0].q if self.records else 0
        self.q = q
        self.seg_len = np.concatenate([d[1] for d in designs]) if designs else np.zeros(0)
        self.seg_z = np.concatenate([d[2] for d in designs]) if designs else np.zeros((0, q))
        self.ev_z = np.concatenate([d[3] for d in designs]) if designs else np.zeros((0, q))
        self.seg_owner = np.repeat(np.arange(len(designs)), [d[1].size for d in designs])
        self.ev_owner = np.repeat(np.arange(len(designs)), [d[3].shape[0] for d in designs])
        self.n_events = int(self.ev_z.shape[0])
        self._std = None

    def subset(self, mask: np.ndarray) -> "NodeData":
        """Restrict to the systems flagged in ``mask`` without rebuilding designs."""
        out = NodeData.__new__(NodeData)
        out.records = tuple(r for r, m in zip(self.records, mask) if m)
        out.q = self.q
        sm, em = mask[self.seg_owner], mask[self.ev_owner]
        remap = np.cumsum(mask) - 1
        out.seg_len, out.seg_z = self.seg_len[sm], self.seg_z[sm]
        out.ev_z = self.ev_z[em]
        out.seg_owner, out.ev_owner = remap[self.seg_owner[sm]], remap[self.ev_owner[em]]
        out.n_events = int(out.ev_z.shape[0])
        out._std = None
        return out

    # sufficient statistics; all of them are additive across disjoint shards
    def moments(self) -> tuple[float, np.ndarray, np.ndarray, int, np.ndarray]:
        L = self.seg_len
        return (float(L.sum()), L @ self.seg_z, L @ (self.seg_z ** 2), self.n_events,
                self.ev_z.sum(axis=0))

    def standardized(self, center, scale):
        key = (center.tobytes(), scale.tobytes())
        if self._std is None or self._std[0] != key:
            self._std = (key, (self.seg_z - center) / scale)
        return self._std[1]

    def exposure(self, beta, center, scale) -> tuple[float, np.ndarray]:
        """``S = sum len*exp(zs.beta)`` and ``G = sum len*zs*exp(zs.beta)``."""
        Zs = self.standardized(center, scale)
        with np.errstate(over="ignore"):
            u = self.seg_len * np.exp(Zs @ beta) if beta.size else self.seg_len.copy()
        return float(u.sum()), u @ Zs


def standardization(moments) -> tuple[np.ndarray, np.ndarray]:
    total, sz, sz2, _, _ = moments
    if total <= 0:
        q = np.size(sz)
        return np.zeros(q), np.ones(q)
    mean = sz / total
    var = np.maximum(sz2 / total - mean ** 2, 0.0)
    sd = np.sqrt(var)
    return mean, np.where(sd > 1e-12, sd, 1.0)


def sum_moments(parts):
    parts = list(parts)
    total = parts[0]
    for p in parts[1:]:
        total = tuple(a + b for a, b in zip(total, p))
    return total


# ---------------------------------------------------------------- point evaluation

def intensity_at(model: IntensityModel, record: SystemRecord, t: float) -> float:
    _require_fitted(model)
    if model.q == 0:
        return math.exp(model.beta0)
    z = np.array([dynamic_value_at(record, j, t) for j in range(model.q)])
    return float(np.exp(model.log_intensity(z))[0])


def cumulative_intensity_curve(model: IntensityModel, record: SystemRecord, grid) -> np.ndarray:
    """Exact integral of the intensity from 0 to each grid time."""
    _require_fitted(model)
    grid = np.asarray(grid, dtype=float)
    if np.any(grid < 0) or np.any(grid > record.censor_time):
        raise DataError(f"system {record.id}: grid outside [0, censor_time]", system_id=record.id)
    starts, lengths, Zs, _ = record_design(record)
    lam = np.exp(model.log_intensity(Zs)) if model.q else np.full(starts.size, math.exp(model.beta0))
    cum = np.concatenate([[0.0], np.cumsum(lam * lengths)])
    k = np.clip(np.searchsorted(starts, grid, side="right") - 1, 0, starts.size - 1)
    return cum[k] + lam[k] * (grid - starts[k])


def cumulative_intensity(model: IntensityModel, record: SystemRecord, t: float) -> float:
    return float(cumulative_intensity_curve(model, record, [t])[0])


def predict_cumulative_hazard(model: IntensityModel, record: SystemRecord, grid) -> np.ndarray:
    return cumulative_intensity_curve(model, record, grid)


def mean_covariate_path(records: Sequence[SystemRecord], grid) -> np.ndarray:
    """Cross-system mean covariate value at each grid time, shape (len(grid), q).

    Systems already censored at a grid time are left out of that time's mean.
    """
    grid = np.asarray(grid, dtype=float)
    q = records[0].q
    total = np.zeros((grid.size, q))
    count = np.zeros(grid.size)
    for r in records:
        live = grid <= r.censor_time
        count += live
        for j, (t, v) in enumerate(r.dynamic_series):
            total[live, j] += _carry_forward(t, v, grid[live])
    if np.any(count == 0):
        # fall back to every system where nobody is observed any more
        for r in records:
            for j, (t, v) in enumerate(r.dynamic_series):
                total[count == 0, j] += _carry_forward(t, v, grid[count == 0])
        count = np.where(count == 0, len(records), count)
    return total / count[:, None]


# ---------------------------------------------------------------- likelihood

def _as_model(params, omega=0.0) -> IntensityModel:
    if isinstance(params, IntensityModel):
        return params
    params = np.asarray(params, dtype=float)
    return IntensityModel(params[0], params[1:], omega)


def penalized_nll(params, records: Sequence[SystemRecord], omega: float | None = None) -> float:
    """Negative log-likelihood plus ``omega * ||beta||_1`` (intercept unpenalised).

    ``params`` is an :class:`IntensityModel` or an array ``(beta0, beta...)``.
    """
    model = _as_model(params, omega or 0.0)
    w = model.omega if omega is None else omega
    return _nll(NodeData(records), model) + w * float(np.abs(model.beta).sum())


def nll_gradient(params, records: Sequence[SystemRecord]) -> np.ndarray:
    """Gradient of the unpenalised NLL with respect to ``(beta0, beta)``."""
    model = _as_model(params)
    nd = NodeData(records)
    return _gradient(nd, model)


def _gradient(nd: NodeData, model: IntensityModel) -> np.ndarray:
    Zs = (nd.seg_z - model.center) / model.scale
    Ze = (nd.ev_z - model.center) / model.scale
    u = nd.seg_len * np.exp(model.beta0 + Zs @ model.beta)
    g = np.empty(model.q + 1)
    g[0] = u.sum() - nd.n_events
    g[1:] = u @ Zs - Ze.sum(axis=0)
    return g


def _nll(nd: NodeData, model: IntensityModel) -> float:
    Zs = (nd.seg_z - model.center) / model.scale
    Ze = (nd.ev_z - model.center) / model.scale
    eta = model.beta0 + Zs @ model.beta
    return float(nd.seg_len @ np.exp(eta)) - float(np.sum(model.beta0 + Ze @ model.beta))


# ---------------------------------------------------------------- fitting

class DegenerateNodeError(ValueError):
    """No failures in the node: the intercept MLE diverges to -inf."""


def soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def _solve(exposure: Callable, r: int, esum: np.ndarray, omega: float, beta: np.ndarray,
           tol: float, max_iter: int) -> tuple[np.ndarray, float, bool]:
    """Proximal gradient with backtracking on the intercept-profiled objective.

    With the intercept profiled out the smooth part is
    ``r*log(S(beta)) - esum.beta``, which stays convex.  Returns
    ``(beta, log S(beta), converged)``.
    """
    def smooth(b):
        S, G = exposure(b)
        if not (S > 0 and math.isfinite(S)):
            return math.inf, None, S
        return r * math.log(S) - float(esum @ b), r * G / S - esum, S

    f, g, S = smooth(beta)
    if beta.size == 0:
        return beta, math.log(S), True
    obj = f + omega * np.abs(beta).sum()
    alpha = 1.0 / max(r, 1)
    converged = False
    for _ in range(max_iter):
        while True:
            b_new = soft_threshold(beta - alpha * g, alpha * omega)
            f_new, g_new, S_new = smooth(b_new)
            diff = b_new - beta
            if f_new <= f + g @ diff + (diff @ diff) / (2 * alpha) + 1e-12 * abs(f):
                break
            alpha *= 0.5
            if alpha < 1e-30:
                return beta, math.log(S), True
        obj_new = f_new + omega * np.abs(b_new).sum()
        dec = obj - obj_new
        y = g_new - g
        sy = float(diff @ y)
        alpha = float(diff @ diff) / sy if sy > 1e-300 else alpha * 2.0
        beta, f, g, S, obj = b_new, f_new, g_new, S_new, obj_new
        if dec < tol:
            converged = True
            break
    return beta, math.log(S), converged


def fit_node(parts: Sequence[NodeData], omega: float, init: IntensityModel | None = None,
             tol: float = 1e-8, max_iter: int = 500) -> IntensityModel:
    """Fit one intensity model from additive statistics of one or more shards."""
    mom = sum_moments(p.moments() for p in parts)
    r = int(mom[3])
    if r == 0:
        raise DegenerateNodeError("degenerate node: no failures")
    center, scale = standardization(mom)
    esum = (mom[4] - r * center) / scale
    q = center.size
    if init is not None and init.q == q:
        # carry the warm start over to this node's covariate scaling
        beta = init.beta / init.scale * scale
    else:
        beta = np.zeros(q)

    def exposure(b):
        S, G = 0.0, np.zeros(q)
        for p in parts:
            s, gg = p.exposure(b, center, scale)
            S, G = S + s, G + gg
        return S, G

    beta, logS, ok = _solve(exposure, r, esum, omega, beta, tol, max_iter)
    return IntensityModel(math.log(r) - logS, beta, omega, center, scale, converged=ok)


def fit_intensity(records: Sequence[SystemRecord], omega: float = 0.0,
                  init: IntensityModel | None = None, tol: float = 1e-8,
                  max_iter: int = 500) -> IntensityModel:
    """Penalised maximum-likelihood intensity for a set of systems."""
    if not records:
        raise ValueError("fit_intensity needs at least one system")
    return fit_node([NodeData(records)], omega, init, tol, max_iter)


def omega_max(records: Sequence[SystemRecord]) -> float:
    """Smallest penalty at which every slope is shrunk to zero."""
    nd = NodeData(records)
    mom = nd.moments()
    r = mom[3]
    center, scale = standardization(mom)
    if center.size == 0 or r == 0:
        return 0.0
    S, G = nd.exposure(np.zeros(center.size), center, scale)
    grad = r * G / S - (mom[4] - r * center) / scale
    return float(np.max(np.abs(grad)))


def select_omega(records: Sequence[SystemRecord], n_folds: int = 5, n_grid: int = 10,
                 seed: int = 0, span: float = 1e-3) -> float:
    """Penalty with the best cross-validated held-out log-likelihood.

    The grid is log-spaced from ``omega_max`` down to ``span * omega_max``.
    """
    records = list(records)
    if not records or records[0].q == 0:
        return 0.0
    top = omega_max(records)
    if top == 0.0:
        return 0.0
    grid = top * np.logspace(0.0, math.log10(span), n_grid)
    folds = np.random.default_rng(seed).permutation(len(records)) % n_folds
    score = np.zeros(n_grid)
    for f in range(n_folds):
        train = [r for r, k in zip(records, folds) if k != f]
        test = [r for r, k in zip(records, folds) if k == f]
        if not test or sum(r.n_failures for r in train) == 0:
            continue
        nd_test = NodeData(test)
        model = None
        for g, w in enumerate(grid):
            model = fit_intensity(train, w, init=model)
            score[g] -= _nll(nd_test, model)
    # ties resolve to the larger penalty
    return float(grid[int(np.argmax(score))])

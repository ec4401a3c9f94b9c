"""Synthetic recurrence datasets: HPP/NHPP failures, Brownian sensor covariates."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .data import RecurrenceDataset, SystemRecord

SCENARIOS = ("A", "B", "C", "D")


def gen_hpp(rate: float, horizon: float, rng: np.random.Generator) -> np.ndarray:
    """Event times on [0, horizon] from successive exponential gaps."""
    if rate < 0:
        raise ValueError("rate must be non-negative")
    if rate == 0 or horizon <= 0:
        return np.empty(0)
    chunk = max(16, int(rate * horizon * 1.5) + 8)
    times = []
    last = 0.0
    while True:
        gaps = rng.exponential(1.0 / rate, size=chunk)
        t = last + np.cumsum(gaps)
        times.append(t[t <= horizon])
        if t[-1] > horizon:
            break
        last = t[-1]
    return np.concatenate(times)


def gen_brownian_covariate(sigma: float, horizon: float, step: float,
                           rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Brownian path sampled every ``step`` on [0, horizon), starting at 0."""
    if sigma < 0 or step <= 0:
        raise ValueError("need sigma >= 0 and step > 0")
    times = np.arange(0.0, horizon, step)
    inc = rng.normal(0.0, sigma * math.sqrt(step), size=times.size - 1)
    return times, np.concatenate([[0.0], np.cumsum(inc)])


def gen_nhpp_thinning(intensity_fn: Callable, lambda_max: float, horizon: float,
                      rng: np.random.Generator) -> np.ndarray:
    """Lewis-Shedler thinning of a rate-``lambda_max`` HPP."""
    cand = gen_hpp(lambda_max, horizon, rng)
    if cand.size == 0:
        return cand
    lam = np.asarray(intensity_fn(cand), dtype=float).reshape(-1)
    if lam.size != cand.size:
        lam = np.array([float(intensity_fn(t)) for t in cand])
    if np.any(lam > lambda_max * (1 + 1e-12)) or np.any(lam < 0):
        raise ValueError("intensity exceeds lambda_max (or is negative) on [0, horizon]")
    u = rng.uniform(size=cand.size)
    return cand[u * lambda_max < lam]


def step_intensity(times, values, coef_fn) -> Callable:
    """Intensity ``coef_fn(z(t))`` of a carried-forward sensor path."""
    def lam(t):
        k = np.searchsorted(times, t, side="right") - 1
        return coef_fn(values[np.maximum(k, 0)])
    return lam


# ---------------------------------------------------------------- scenario definitions

def rate_a(x1: float, x2: float, rates=(0.01, 0.1, 0.05)) -> float:
    """Three-class rate: low when both are <= 0.5, high when both exceed it."""
    if x1 <= 0.5 and x2 <= 0.5:
        return rates[0]
    if x1 > 0.5 and x2 > 0.5:
        return rates[1]
    return rates[2]


def rate_b(x, coef=(0.01, 2.0, 0.5)) -> float:
    return math.exp(coef[0] + coef[1] * x[0] + coef[2] * x[1])


def params_c(x1: float, x2: float, regions=((0.01, 0.5), (0.1, 0.1), (0.05, 0.0))) -> tuple[float, float]:
    """``(exp(beta0), beta1)`` of the region holding ``(x1, x2)``."""
    if x1 <= 0.5 and x2 <= 0.5:
        return regions[0]
    if x1 > 0.5 and x2 > 0.5:
        return regions[1]
    return regions[2]


@dataclass(frozen=True)
class SimConfig:
    n: int = 200
    p: int = 10
    horizon: float = 100.0
    scenario: str = "A"
    seed: int = 0
    sigma: float = 0.1
    step: float = 1.0
    rates_a: tuple = (0.01, 0.1, 0.05)
    coef_b: tuple = (0.01, 2.0, 0.5)
    regions_c: tuple = ((0.01, 0.5), (0.1, 0.1), (0.05, 0.0))
    coef_d: tuple = (math.log(0.01), 2.0, 0.5, 0.5)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; choose one of {', '.join(SCENARIOS)}")
        if self.horizon <= 0 or self.n < 1:
            raise ValueError("need n >= 1 and a positive horizon")
        if self.p < 2:
            raise ValueError("scenarios use x1 and x2, so p must be at least 2")
        if min(self.rates_a) <= 0 or min(r[0] for r in self.regions_c) <= 0:
            raise ValueError("rates must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["regions_c"] = [list(r) for r in self.regions_c]
        for k in ("rates_a", "coef_b", "coef_d"):
            d[k] = list(d[k])
        return d


def _system(cfg: SimConfig, i: int, rng: np.random.Generator) -> SystemRecord:
    x = rng.uniform(size=cfg.p)
    T = cfg.horizon
    series = ()
    if cfg.scenario == "A":
        ft = gen_hpp(rate_a(x[0], x[1], cfg.rates_a), T, rng)
    elif cfg.scenario == "B":
        ft = gen_hpp(rate_b(x, cfg.coef_b), T, rng)
    else:
        zt, zv = gen_brownian_covariate(cfg.sigma, T, cfg.step, rng)
        if cfg.scenario == "C":
            base, b1 = params_c(x[0], x[1], cfg.regions_c)
            b0 = math.log(base)
        else:
            c = cfg.coef_d
            b0, b1 = c[0] + c[1] * x[0] + c[2] * x[1], c[3]
        lam = step_intensity(zt, zv, lambda z: np.exp(b0 + b1 * z))
        lam_max = float(np.max(np.exp(b0 + b1 * zv))) * 1.05
        ft = gen_nhpp_thinning(lam, lam_max, T, rng)
        series = ((zt, zv),)
    return SystemRecord(f"S{i + 1:05d}", ft, T, x, series)


def build_dataset(config: SimConfig) -> RecurrenceDataset:
    """Simulate one dataset; every system has its own random stream and is censored at the horizon."""
    streams = np.random.SeedSequence(config.seed).spawn(config.n)
    records = tuple(_system(config, i, np.random.default_rng(s)) for i, s in enumerate(streams))
    chans = ("z",) if config.scenario in ("C", "D") else ()
    return RecurrenceDataset(records, tuple(f"x{j + 1}" for j in range(config.p)), chans)

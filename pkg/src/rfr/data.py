"""Recurrence-data records, covariate scaling, CSV ingestion/export and sharding."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted


class DataError(ValueError):
    """Raised when records or input files violate the data contract."""

    def __init__(self, message: str, *, system_id=None, line: int | None = None):
        super().__init__(message)
        self.system_id = system_id
        self.line = line


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SystemRecord:
    """One repairable system: failure ages, censoring age and covariates.

    ``dynamic_series`` holds one ``(times, values)`` pair per sensor channel;
    values are carried forward between samples.
    """

    id: str
    failure_times: np.ndarray
    censor_time: float
    static_covariates: np.ndarray
    dynamic_series: tuple = ()

    def __post_init__(self):
        ft = _frozen(self.failure_times)
        x = _frozen(self.static_covariates)
        object.__setattr__(self, "id", str(self.id))
        object.__setattr__(self, "failure_times", ft)
        object.__setattr__(self, "static_covariates", x)
        object.__setattr__(self, "censor_time", float(self.censor_time))
        chans = tuple((_frozen(t), _frozen(v)) for t, v in self.dynamic_series)
        object.__setattr__(self, "dynamic_series", chans)

        c = self.censor_time
        if not (math.isfinite(c) and c > 0):
            raise DataError(f"system {self.id}: censor time must be positive, got {c}", system_id=self.id)
        if ft.ndim != 1:
            raise DataError(f"system {self.id}: failure times must be 1-d", system_id=self.id)
        if ft.size:
            if not np.all(np.isfinite(ft)) or ft[0] < 0:
                raise DataError(f"system {self.id}: failure times must be finite and non-negative",
                                system_id=self.id)
            # simultaneous failures are allowed and count with multiplicity
            if np.any(np.diff(ft) < 0):
                raise DataError(f"system {self.id}: failure times must be increasing", system_id=self.id)
            if ft[-1] > c:
                raise DataError(f"system {self.id}: failure time {ft[-1]!r} exceeds censor time {c!r}",
                                system_id=self.id)
        for k, (t, v) in enumerate(chans):
            if t.shape != v.shape or t.ndim != 1 or t.size == 0:
                raise DataError(f"system {self.id}: channel {k} is empty or misshapen", system_id=self.id)
            if np.any(np.diff(t) <= 0):
                raise DataError(f"system {self.id}: channel {k} timestamps not strictly increasing",
                                system_id=self.id)

    @property
    def n_failures(self) -> int:
        return int(self.failure_times.size)

    @property
    def q(self) -> int:
        return len(self.dynamic_series)

    def with_covariates(self, x) -> "SystemRecord":
        return SystemRecord(self.id, self.failure_times, self.censor_time, x, self.dynamic_series)

    def __eq__(self, other):
        if not isinstance(other, SystemRecord):
            return NotImplemented
        if (self.id, self.censor_time, self.q) != (other.id, other.censor_time, other.q):
            return False
        if not (np.array_equal(self.failure_times, other.failure_times)
                and np.array_equal(self.static_covariates, other.static_covariates)):
            return False
        return all(np.array_equal(t1, t2) and np.array_equal(v1, v2)
                   for (t1, v1), (t2, v2) in zip(self.dynamic_series, other.dynamic_series))

    __hash__ = object.__hash__


@dataclass(frozen=True)
class RecurrenceDataset:
    records: tuple
    covariate_names: tuple = ()
    channel_names: tuple = ()

    def __post_init__(self):
        recs = tuple(self.records)
        object.__setattr__(self, "records", recs)
        if not recs:
            raise DataError("dataset has no records")
        p, q = recs[0].static_covariates.size, recs[0].q
        names = tuple(self.covariate_names) or tuple(f"x{j + 1}" for j in range(p))
        chans = tuple(self.channel_names) or tuple(str(k) for k in range(q))
        object.__setattr__(self, "covariate_names", names)
        object.__setattr__(self, "channel_names", chans)
        seen = set()
        for r in recs:
            if r.static_covariates.size != p or r.q != q:
                raise DataError(f"system {r.id}: covariate dimensions differ from the dataset",
                                system_id=r.id)
            if r.id in seen:
                raise DataError(f"duplicate system id {r.id}", system_id=r.id)
            seen.add(r.id)
        if len(names) != p or len(chans) != q:
            raise DataError("covariate/channel name count does not match records")

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def n(self) -> int:
        return len(self.records)

    @property
    def p(self) -> int:
        return self.records[0].static_covariates.size

    @property
    def q(self) -> int:
        return self.records[0].q

    @property
    def ids(self) -> list:
        return [r.id for r in self.records]

    @property
    def X(self) -> np.ndarray:
        """Static covariate matrix, shape (n, p)."""
        return np.array([r.static_covariates for r in self.records], dtype=float).reshape(self.n, self.p)

    def subset(self, indices) -> "RecurrenceDataset":
        return RecurrenceDataset(tuple(self.records[i] for i in indices), self.covariate_names,
                                 self.channel_names)

    def with_X(self, X) -> "RecurrenceDataset":
        X = np.asarray(X, dtype=float)
        recs = tuple(r.with_covariates(x) for r, x in zip(self.records, X))
        return RecurrenceDataset(recs, self.covariate_names, self.channel_names)


@dataclass(frozen=True)
class Shard:
    worker_id: int
    records: tuple = field(default_factory=tuple)

    def __len__(self):
        return len(self.records)


# ---------------------------------------------------------------- scaling

class CovariateScaler(TransformerMixin, BaseEstimator):
    """Min-max scaler onto [0, 1]; constant columns map to 0.

    Test data are transformed with the training minima and ranges and are
    clipped to [0, 1] so they stay inside the covariate cube.
    """

    def __init__(self, clip: bool = True):
        self.clip = clip

    def fit(self, X, y=None):
        X = _check_finite(X)
        self.data_min_ = X.min(axis=0)
        self.data_range_ = X.max(axis=0) - self.data_min_
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "data_min_")
        X = _check_finite(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} covariates, got {X.shape[1]}")
        rng = np.where(self.data_range_ > 0, self.data_range_, 1.0)
        Z = (X - self.data_min_) / rng
        Z[:, self.data_range_ == 0] = 0.0
        if self.clip:
            np.clip(Z, 0.0, 1.0, out=Z)
        return Z


def _check_finite(X, ids=None) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    bad = ~np.all(np.isfinite(X), axis=1)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        who = ids[i] if ids is not None else i
        raise DataError(f"non-finite covariate value for system {who}", system_id=who)
    return X


def standardize_covariates(raw: RecurrenceDataset, scaler: CovariateScaler | None = None):
    """Map every static covariate onto [0, 1].

    Returns ``(dataset, scaler)``; pass the returned scaler back in to apply
    training-set scaling to test data.
    """
    X = _check_finite(raw.X, raw.ids) if raw.p else raw.X
    if scaler is None:
        scaler = CovariateScaler().fit(X)
    return raw.with_X(scaler.transform(X)), scaler


# ---------------------------------------------------------------- dynamic covariates

def dynamic_value_at(record: SystemRecord, channel: int, t: float) -> float:
    """Most recent sample at or before ``t`` (carry-forward)."""
    times, values = record.dynamic_series[channel]
    k = int(np.searchsorted(times, t, side="right")) - 1
    if k < 0:
        raise DataError(f"system {record.id}: t={t!r} precedes first sample of channel {channel}",
                        system_id=record.id)
    return float(values[k])


# ---------------------------------------------------------------- sharding

def shard_dataset(data: RecurrenceDataset, W: int, seed: int, stratify: bool = False) -> list[Shard]:
    """Random balanced partition of ``data`` across ``W`` workers (ids 1..W).

    ``stratify=True`` deals systems out in blocks of ``W`` consecutive
    censoring times, so every shard keeps nearly the same at-risk count at
    every age.
    """
    n = data.n
    if W < 1 or W > n:
        raise ValueError(f"need 1 <= W <= n (n={n}), got W={W}")
    if W == 1:
        return [Shard(1, data.records)]
    rng = np.random.default_rng(seed)
    if stratify:
        by_censor = np.argsort([r.censor_time for r in data.records], kind="stable")
        owner = np.empty(n, dtype=np.intp)
        for b in range(0, n, W):
            blk = by_censor[b:b + W]
            owner[blk] = rng.permutation(W)[:blk.size]
        parts = [np.flatnonzero(owner == w) for w in range(W)]
    else:
        parts = np.array_split(rng.permutation(n), W)
    return [Shard(w + 1, tuple(data.records[i] for i in sorted(part)))
            for w, part in enumerate(parts)]


# ---------------------------------------------------------------- CSV I/O

def _fmt(v: float) -> str:
    return repr(float(v))


def _rows(path, expect_prefix: Sequence[str]):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file", line=1) from None
        header = [h.strip() for h in header]
        if header[: len(expect_prefix)] != list(expect_prefix):
            raise DataError(f"{path}: header must start with {','.join(expect_prefix)}", line=1)
        for row in reader:
            if not row:
                continue
            yield reader.line_num, header, row


def _num(text: str, path, line: int) -> float:
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"{path}:{line}: malformed number {text!r}", line=line) from None
    return v


def ingest(events_file, covariates_file, sensors_file=None) -> RecurrenceDataset:
    """Assemble a dataset from the events, covariates and optional sensors CSVs."""
    covs: dict[str, tuple[float, list[float]]] = {}
    names: list[str] = []
    for line, header, row in _rows(covariates_file, ("id", "censor_time")):
        names = header[2:]
        if len(row) != len(header):
            raise DataError(f"{covariates_file}:{line}: expected {len(header)} fields, got {len(row)}",
                            line=line)
        sid = row[0]
        x = [_num(v, covariates_file, line) for v in row[2:]]
        if not all(math.isfinite(v) for v in x):
            raise DataError(f"system {sid}: non-finite covariate value", system_id=sid, line=line)
        if sid in covs:
            raise DataError(f"{covariates_file}:{line}: duplicate id {sid}", system_id=sid, line=line)
        covs[sid] = (_num(row[1], covariates_file, line), x)

    events: dict[str, list[float]] = {sid: [] for sid in covs}
    for line, header, row in _rows(events_file, ("id", "time")):
        if len(row) != 2:
            raise DataError(f"{events_file}:{line}: expected 2 fields, got {len(row)}", line=line)
        sid = row[0]
        if sid not in covs:
            raise DataError(f"{events_file}:{line}: id {sid} missing from covariates file",
                            system_id=sid, line=line)
        t = _num(row[1], events_file, line)
        if t > covs[sid][0]:
            raise DataError(f"system {sid}: failure time {t!r} exceeds censor time {covs[sid][0]!r}",
                            system_id=sid, line=line)
        events[sid].append(t)

    channels: list[str] = []
    series: dict[str, dict[str, list[tuple[float, float]]]] = {sid: {} for sid in covs}
    if sensors_file is not None:
        for line, header, row in _rows(sensors_file, ("id", "channel", "time", "value")):
            if len(row) != 4:
                raise DataError(f"{sensors_file}:{line}: expected 4 fields, got {len(row)}", line=line)
            sid, ch = row[0], row[1]
            if sid not in covs:
                raise DataError(f"{sensors_file}:{line}: id {sid} missing from covariates file",
                                system_id=sid, line=line)
            if ch not in channels:
                channels.append(ch)
            series[sid].setdefault(ch, []).append(
                (_num(row[2], sensors_file, line), _num(row[3], sensors_file, line)))

    records = []
    for sid, (c, x) in covs.items():
        dyn = []
        for ch in channels:
            pts = sorted(series[sid].get(ch, []))
            if not pts:
                raise DataError(f"system {sid}: no samples for channel {ch}", system_id=sid)
            dyn.append(([a for a, _ in pts], [b for _, b in pts]))
        records.append(SystemRecord(sid, sorted(events[sid]), c, x, tuple(dyn)))
    return RecurrenceDataset(tuple(records), tuple(names), tuple(channels))


def export(data: RecurrenceDataset, events_file, covariates_file, sensors_file=None) -> None:
    """Write ``data`` in the ingestion formats (UTF-8, LF line endings)."""
    def write(path, header, rows: Iterable):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="")

    write(events_file, ["id", "time"],
          ([r.id, _fmt(t)] for r in data for t in r.failure_times))
    write(covariates_file, ["id", "censor_time", *data.covariate_names],
          ([r.id, _fmt(r.censor_time), *map(_fmt, r.static_covariates)] for r in data))
    if sensors_file is not None:
        write(sensors_file, ["id", "channel", "time", "value"],
              ([r.id, ch, _fmt(t), _fmt(v)]
               for r in data
               for ch, (ts, vs) in zip(data.channel_names, r.dynamic_series)
               for t, v in zip(ts, vs)))

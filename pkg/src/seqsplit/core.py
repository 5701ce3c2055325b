"""Interaction log ingestion and preprocessing.

A :class:`Dataset` is stored column-wise: dense integer codes for users and
items plus the original string labels, timestamps and the row position in the
source file. All filters return new datasets and never mutate their input.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator, Sequence

import numpy as np

_log = logging.getLogger(__name__)

SECONDS_PER_DAY = 86_400


class DataError(Exception):
    """Input data cannot be processed (exit code 2 at the CLI)."""


class EmptyDatasetWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Schema:
    """Column mapping for delimiter-separated interaction logs.

    Columns are given either by header name or by 0-based position.
    ``time_format`` is ``"int"``, ``"iso"`` or ``"auto"`` (integer first, then ISO-8601).
    """

    user_col: str | int = "user_id"
    item_col: str | int = "item_id"
    time_col: str | int = "timestamp"
    delimiter: str = ","
    header: bool = True
    time_format: str = "auto"
    strict: bool = False

    @classmethod
    def movielens(cls, **overrides) -> "Schema":
        """``ratings.dat`` layout of MovieLens-1M: ``user::item::rating::timestamp``."""
        params = dict(user_col=0, item_col=1, time_col=3, delimiter="::", header=False, time_format="int")
        params.update(overrides)
        return cls(**params)


@dataclass(frozen=True)
class PreprocessConfig:
    p_core: int = 5
    dedup_consecutive: bool = True
    sample_users: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.p_core < 0 or self.p_core == 1:
            raise ValueError(f"p_core must be 0 or >= 2, got {self.p_core}")
        if self.sample_users is not None and self.sample_users < 1:
            raise ValueError("sample_users must be >= 1")


@dataclass(frozen=True)
class Interaction:
    user_id: str
    item_id: str
    timestamp: int
    ingest_index: int


@dataclass(eq=False)
class Dataset:
    """Column-oriented interaction log with dense user/item codes."""

    users: np.ndarray
    items: np.ndarray
    timestamps: np.ndarray
    ingest_index: np.ndarray
    user_labels: np.ndarray
    item_labels: np.ndarray
    skipped: int = 0

    @classmethod
    def from_records(cls, records: Iterable[tuple[str, str, int]], skipped: int = 0) -> "Dataset":
        """Build a dataset from ``(user, item, timestamp)`` triples; ingest order is iteration order."""
        user_codes: dict[str, int] = {}
        item_codes: dict[str, int] = {}
        users, items, times = [], [], []
        for user, item, ts in records:
            users.append(user_codes.setdefault(str(user), len(user_codes)))
            items.append(item_codes.setdefault(str(item), len(item_codes)))
            times.append(int(ts))
        n = len(times)
        return cls(
            users=np.asarray(users, dtype=np.int64).reshape(n),
            items=np.asarray(items, dtype=np.int64).reshape(n),
            timestamps=np.asarray(times, dtype=np.int64).reshape(n),
            ingest_index=np.arange(n, dtype=np.int64),
            user_labels=_label_array(user_codes),
            item_labels=_label_array(item_codes),
            skipped=skipped,
        )

    @classmethod
    def empty(cls) -> "Dataset":
        return cls.from_records([])

    @property
    def interaction_count(self) -> int:
        return int(self.users.shape[0])

    @property
    def user_count(self) -> int:
        return int(self.user_labels.shape[0])

    @property
    def item_count(self) -> int:
        return int(self.item_labels.shape[0])

    @property
    def span_seconds(self) -> int:
        if self.interaction_count == 0:
            return 0
        return int(self.timestamps.max() - self.timestamps.min())

    @property
    def span_days(self) -> float:
        return self.span_seconds / SECONDS_PER_DAY

    def __len__(self) -> int:
        return self.interaction_count

    def __iter__(self) -> Iterator[Interaction]:
        for u, i, t, k in zip(self.users, self.items, self.timestamps, self.ingest_index):
            yield Interaction(self.user_labels[u], self.item_labels[i], int(t), int(k))

    def select(self, mask: np.ndarray) -> "Dataset":
        """Rows where ``mask`` is true, with user and item codes re-compacted."""
        users = self.users[mask]
        items = self.items[mask]
        u_keep, u_codes = np.unique(users, return_inverse=True)
        i_keep, i_codes = np.unique(items, return_inverse=True)
        return Dataset(
            users=u_codes.astype(np.int64),
            items=i_codes.astype(np.int64),
            timestamps=self.timestamps[mask],
            ingest_index=self.ingest_index[mask],
            user_labels=self.user_labels[u_keep],
            item_labels=self.item_labels[i_keep],
            skipped=self.skipped,
        )

    def chronological_order(self) -> np.ndarray:
        """Row permutation sorting by (user, timestamp, ingest_index)."""
        return np.lexsort((self.ingest_index, self.timestamps, self.users))

    def triples(self) -> list[tuple[str, str, int]]:
        return [(self.user_labels[u], self.item_labels[i], int(t)) for u, i, t in zip(self.users, self.items, self.timestamps)]


def _label_array(codes: dict[str, int]) -> np.ndarray:
    labels = np.empty(len(codes), dtype=object)
    for label, code in codes.items():
        labels[code] = label
    return labels


def parse_time(value: str, time_format: str = "auto") -> int:
    """Parse an integer epoch or an ISO-8601 string into integer seconds.

    Naive ISO timestamps are taken as UTC.
    """
    value = value.strip()
    if time_format in ("int", "auto"):
        try:
            return int(value)
        except ValueError:
            if time_format == "int":
                try:
                    as_float = float(value)
                except ValueError:
                    raise ValueError(f"not an integer timestamp: {value!r}") from None
                if not as_float.is_integer():
                    raise ValueError(f"not an integer timestamp: {value!r}")
                return int(as_float)
    if value.endswith("Z"):
        value = value[:-1] + "+00:00"
    dt = datetime.fromisoformat(value)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return math.floor(dt.timestamp())


def _open_text(source) -> tuple[io.TextIOBase, bool]:
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(bytes(source).decode("utf-8")), True
    if isinstance(source, (str, os.PathLike)):
        try:
            return open(source, "r", encoding="utf-8", newline=""), True
        except OSError as exc:
            raise DataError(f"cannot read {source}: {exc}") from exc
    if hasattr(source, "read"):
        data = source.read()
        if isinstance(data, bytes):
            data = data.decode("utf-8")
        return io.StringIO(data), True
    raise TypeError(f"unsupported source type {type(source).__name__}")


def _rows(handle: io.TextIOBase, delimiter: str) -> Iterator[list[str]]:
    if len(delimiter) == 1:
        yield from csv.reader(handle, delimiter=delimiter)
    else:
        for line in handle:
            line = line.rstrip("\r\n")
            yield line.split(delimiter) if line else []


def _resolve(col: str | int, header: Sequence[str] | None) -> int:
    if isinstance(col, int):
        return col
    if isinstance(col, str) and col.isdigit() and (header is None or col not in header):
        return int(col)
    if header is None:
        raise DataError(f"column {col!r} given by name but the file has no header")
    try:
        return list(header).index(col)
    except ValueError:
        raise DataError(f"column {col!r} not in header {list(header)}") from None


def parse_event_log(source: str | os.PathLike | bytes | BinaryIO, schema: Schema | None = None) -> Dataset:
    """Read a delimiter-separated interaction log.

    Rows with a missing or unparseable field are skipped and counted in
    ``Dataset.skipped``; with ``schema.strict`` the first such row raises
    :class:`DataError`. A source without a single valid row is an error.
    """
    schema = schema or Schema()
    handle, close = _open_text(source)
    try:
        rows = _rows(handle, schema.delimiter)
        header = None
        if schema.header:
            header = next(rows, None)
            if header is None:
                raise DataError("zero valid rows")
            header = [h.strip() for h in header]
        cols = [_resolve(c, header) for c in (schema.user_col, schema.item_col, schema.time_col)]
        width = max(cols) + 1
        records = []
        skipped = 0
        first_line = 2 if schema.header else 1
        for lineno, row in enumerate(rows, start=first_line):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            try:
                if len(row) < width:
                    raise ValueError(f"expected at least {width} fields, got {len(row)}")
                user, item = row[cols[0]].strip(), row[cols[1]].strip()
                if not user or not item:
                    raise ValueError("empty user or item id")
                ts = parse_time(row[cols[2]], schema.time_format)
                if ts < 0:
                    raise ValueError(f"negative timestamp {ts}")
            except ValueError as exc:
                if schema.strict:
                    raise DataError(f"line {lineno}: {exc}") from exc
                skipped += 1
                continue
            records.append((user, item, ts))
    finally:
        if close:
            handle.close()
    if not records:
        raise DataError("zero valid rows")
    if skipped:
        _log.warning("skipped %d malformed rows", skipped)
    return Dataset.from_records(records, skipped=skipped)


def write_dataset(ds: Dataset, path: str | os.PathLike, delimiter: str = ",") -> None:
    """Write the canonical ``user_id,item_id,timestamp`` text format in ingest order."""
    order = np.argsort(ds.ingest_index, kind="stable")
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, delimiter=delimiter, lineterminator="\n")
        writer.writerow(["user_id", "item_id", "timestamp"])
        for k in order:
            writer.writerow([ds.user_labels[ds.users[k]], ds.item_labels[ds.items[k]], int(ds.timestamps[k])])


def dedup_consecutive(ds: Dataset) -> Dataset:
    """Collapse runs of the same item in each user's chronological history to the run's first event."""
    if ds.interaction_count == 0:
        return ds
    order = ds.chronological_order()
    u = ds.users[order]
    i = ds.items[order]
    repeat = np.zeros(len(order), dtype=bool)
    repeat[1:] = (u[1:] == u[:-1]) & (i[1:] == i[:-1])
    keep = np.ones(ds.interaction_count, dtype=bool)
    keep[order[repeat]] = False
    if keep.all():
        return ds
    return ds.select(keep)


def pcore_filter(ds: Dataset, p: int) -> Dataset:
    """Iteratively drop users and items with fewer than ``p`` interactions.

    Both counts are recomputed on the surviving rows each round; the loop stops
    once a round removes nothing.
    """
    if p < 2:
        raise ValueError(f"p must be >= 2, got {p}")
    keep = np.ones(ds.interaction_count, dtype=bool)
    rounds = 0
    while True:
        rounds += 1
        ucount = np.bincount(ds.users[keep], minlength=ds.user_count)
        icount = np.bincount(ds.items[keep], minlength=ds.item_count)
        ok = keep & (ucount[ds.users] >= p) & (icount[ds.items] >= p)
        if ok.sum() == keep.sum():
            break
        keep = ok
    _log.debug("p-core(%d) converged after %d rounds", p, rounds)
    if not keep.any():
        warnings.warn(f"{p}-core filtering removed every interaction", EmptyDatasetWarning, stacklevel=2)
        return Dataset.empty()
    if keep.all():
        return ds
    return ds.select(keep)


def sample_users(ds: Dataset, n: int, seed: int) -> Dataset:
    """Keep a uniform random subset of ``min(n, user_count)`` users with all their events.

    Users are ordered by label, shuffled with ``numpy.random.default_rng(seed)``
    and the first ``n`` are kept.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if n >= ds.user_count:
        return ds
    by_label = np.argsort(ds.user_labels.astype(str), kind="stable")
    chosen = by_label[np.random.default_rng(seed).permutation(ds.user_count)[:n]]
    mask = np.zeros(ds.user_count, dtype=bool)
    mask[chosen] = True
    return ds.select(mask[ds.users])


def preprocess(ds: Dataset, config: PreprocessConfig) -> Dataset:
    """Run dedup, then p-core, then user sampling, each only if enabled."""
    if config.dedup_consecutive:
        ds = dedup_consecutive(ds)
    if config.p_core:
        ds = pcore_filter(ds, config.p_core)
    if config.sample_users is not None and ds.interaction_count:
        ds = sample_users(ds, config.sample_users, config.seed)
    return ds


@dataclass(eq=False)
class UserSequence:
    """One user's events in (timestamp, ingest_index) order.

    ``items`` is an object array of item labels; slices of it are shared
    (not copied) by evaluation instances.
    """

    user_id: str
    items: np.ndarray
    timestamps: np.ndarray
    ingest_index: np.ndarray = field(default=None)

    def __post_init__(self):
        self.items = np.asarray(self.items, dtype=object)
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        if self.ingest_index is None:
            self.ingest_index = np.arange(len(self.items), dtype=np.int64)
        if len(self.items) != len(self.timestamps):
            raise ValueError("items and timestamps differ in length")

    def __len__(self) -> int:
        return len(self.items)

    def __eq__(self, other) -> bool:
        if not isinstance(other, UserSequence):
            return NotImplemented
        return (
            self.user_id == other.user_id
            and len(self) == len(other)
            and bool(np.all(self.items == other.items))
            and bool(np.all(self.timestamps == other.timestamps))
        )

    def __repr__(self) -> str:
        return f"UserSequence({self.user_id!r}, items={list(self.items)}, timestamps={self.timestamps.tolist()})"

    def head(self, n: int) -> "UserSequence":
        return UserSequence(self.user_id, self.items[:n], self.timestamps[:n], self.ingest_index[:n])


def to_user_sequences(ds: Dataset) -> list[UserSequence]:
    """Group a dataset into per-user chronological sequences, ordered by user label."""
    if ds.interaction_count == 0:
        return []
    order = ds.chronological_order()
    users = ds.users[order]
    bounds = np.flatnonzero(np.diff(users)) + 1
    starts = np.concatenate(([0], bounds))
    ends = np.concatenate((bounds, [len(order)]))
    item_labels = ds.item_labels[ds.items[order]]
    times = ds.timestamps[order]
    ingest = ds.ingest_index[order]
    seqs = [
        UserSequence(ds.user_labels[users[s]], item_labels[s:e], times[s:e], ingest[s:e])
        for s, e in zip(starts, ends)
    ]
    seqs.sort(key=lambda seq: seq.user_id)
    return seqs


def sequences_to_dataset(sequences: Iterable[UserSequence]) -> Dataset:
    """Flatten sequences back to a dataset, in sequence order."""
    return Dataset.from_records(
        (seq.user_id, item, int(ts)) for seq in sequences for item, ts in zip(seq.items, seq.timestamps)
    )


def load_sequences(path: str | os.PathLike, schema: Schema | None = None) -> list[UserSequence]:
    return to_user_sequences(parse_event_log(Path(path), schema))

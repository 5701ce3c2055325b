"""Dataset and split diagnostics: sizes, holdout coverage, time gaps before targets."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .core import SECONDS_PER_DAY, Dataset, UserSequence, to_user_sequences
from .splitting import EvalInstance, SplitError, SplitResult, Target, gts_cutoff, gts_split


@dataclass
class DatasetStats:
    interactions: int
    users: int
    items: int
    avg_len: float
    density_pct: float
    days: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SplitStats:
    role: str
    days: float
    days_pct: float
    users: int
    users_pct: float
    holdout_len: float
    lifetime_pct: float
    avg_train_len: float
    train_events: int
    train_users: int
    instances: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SweepRow:
    quantile: float
    t_test: int | None
    stats: SplitStats | None
    flagged: bool = False
    reason: str = ""

    def to_dict(self) -> dict:
        return {
            "quantile": self.quantile,
            "t_test": self.t_test,
            "flagged": self.flagged,
            "reason": self.reason,
            "stats": self.stats.to_dict() if self.stats else None,
        }


@dataclass
class GapReport:
    per_target_deltas: np.ndarray
    median_delta: int
    full_data_median: int | None
    histogram: list[tuple[float, int]]
    full_data_histogram: list[tuple[float, int]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "count": int(len(self.per_target_deltas)),
            "median_delta": self.median_delta,
            "full_data_median": self.full_data_median,
            "histogram": [[edge, count] for edge, count in self.histogram],
            "full_data_histogram": [[edge, count] for edge, count in self.full_data_histogram],
        }


def _sequences(data) -> list[UserSequence]:
    return to_user_sequences(data) if isinstance(data, Dataset) else list(data)


def _span(seqs: Sequence[UserSequence]) -> int:
    lo = min(int(s.timestamps[0]) for s in seqs)
    hi = max(int(s.timestamps[-1]) for s in seqs)
    return hi - lo


def lower_median(values) -> int:
    values = np.sort(np.asarray(values))
    if len(values) == 0:
        raise ValueError("median of an empty collection")
    return int(values[(len(values) - 1) // 2])


def dataset_stats(ds: Dataset) -> DatasetStats:
    if ds.interaction_count == 0:
        raise ValueError("statistics of an empty dataset")
    n, users, items = ds.interaction_count, ds.user_count, ds.item_count
    return DatasetStats(
        interactions=n,
        users=users,
        items=items,
        avg_len=n / users,
        density_pct=100.0 * n / (users * items),
        days=ds.span_days,
    )


def lifetime_pct(data) -> float:
    """Median user activity period as a percentage of the whole log's span."""
    seqs = _sequences(data)
    span = _span(seqs)
    if span == 0:
        return 0.0
    lifetimes = np.array([int(s.timestamps[-1] - s.timestamps[0]) for s in seqs])
    return 100.0 * float(np.median(lifetimes)) / span


def split_stats(split_result: SplitResult, data, role: str = "test") -> SplitStats:
    """Holdout statistics of one role (``"test"`` or ``"valid"``) of a split.

    The holdout period is the span of the role's holdout event timestamps.
    Without stored holdouts, each instance's targets stand in for the holdout.
    """
    seqs = _sequences(data)
    span = _span(seqs)
    instances = split_result.test_instances if role == "test" else split_result.validation_instances
    holdout = split_result.holdouts.get(role)
    if not holdout:
        holdout = {}
        for inst in instances:
            prev = holdout.get(inst.user_id)
            ts = inst.target_timestamps
            holdout[inst.user_id] = ts if prev is None else np.concatenate((prev, ts))
    if holdout:
        lo = min(int(ts.min()) for ts in holdout.values())
        hi = max(int(ts.max()) for ts in holdout.values())
        period = hi - lo
        holdout_len = math.fsum(len(ts) for ts in holdout.values()) / len(holdout)
    else:
        period, holdout_len = 0, 0.0
    train_events = sum(len(s) for s in split_result.train)
    return SplitStats(
        role=role,
        days=period / SECONDS_PER_DAY,
        days_pct=100.0 * period / span if span else 0.0,
        users=len(holdout),
        users_pct=100.0 * len(holdout) / len(seqs),
        holdout_len=holdout_len,
        lifetime_pct=lifetime_pct(seqs),
        avg_train_len=train_events / len(split_result.train) if split_result.train else 0.0,
        train_events=train_events,
        train_users=len(split_result.train),
        instances=len(instances),
    )


def quantile_sweep(
    data, quantiles: Sequence[float], target: Target | str = Target.LAST, seed: int = 0, min_seq_len: int = 2
) -> list[SweepRow]:
    """Test-side statistics of GTS at each quantile; unusable quantiles are flagged, not raised."""
    quantiles = list(quantiles)
    if any(not 0 < q < 1 for q in quantiles) or quantiles != sorted(quantiles):
        raise ValueError("quantiles must be ascending and inside (0, 1)")
    seqs = _sequences(data)
    rows = []
    for q in quantiles:
        t_test = gts_cutoff(seqs, q)
        try:
            result = gts_split(seqs, t_test, target, seed, min_seq_len)
        except SplitError as exc:
            rows.append(SweepRow(q, t_test, None, flagged=True, reason=str(exc)))
            continue
        rows.append(SweepRow(q, t_test, split_stats(result, seqs)))
    return rows


def consecutive_deltas(sequences: Iterable[UserSequence]) -> np.ndarray:
    parts = [np.diff(s.timestamps) for s in sequences if len(s) > 1]
    return np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)


def log_histogram(deltas: np.ndarray, bins_per_decade: int = 4) -> list[tuple[float, int]]:
    """Counts over bins of ``log10(1 + delta)``, each bin ``1 / bins_per_decade`` wide."""
    if len(deltas) == 0:
        return []
    idx = np.floor(np.log10(1.0 + np.asarray(deltas, dtype=np.float64)) * bins_per_decade).astype(np.int64)
    keys, counts = np.unique(idx, return_counts=True)
    return [(float(k) / bins_per_decade, int(c)) for k, c in zip(keys, counts)]


def target_time_gaps(
    instances: Sequence[EvalInstance],
    sequences: Iterable[UserSequence] | None = None,
    bins_per_decade: int = 4,
) -> GapReport:
    """Seconds between each instance's first target and the event right before it.

    With ``sequences`` the report also carries the median over all consecutive
    events of the log, for comparison.
    """
    deltas = np.array([int(inst.target_timestamps[0]) - int(inst.prev_timestamp) for inst in instances], dtype=np.int64)
    full = None
    full_hist: list = []
    if sequences is not None:
        all_deltas = consecutive_deltas(sequences)
        if len(all_deltas):
            full = lower_median(all_deltas)
            full_hist = log_histogram(all_deltas, bins_per_decade)
    return GapReport(
        per_target_deltas=deltas,
        median_delta=lower_median(deltas),
        full_data_median=full,
        histogram=log_histogram(deltas, bins_per_decade),
        full_data_histogram=full_hist,
    )

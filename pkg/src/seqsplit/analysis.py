"""Agreement between evaluation setups: rank correlations and best-model rankings."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .metrics import MetricReport, metric_key


class DegenerateRankingError(ValueError):
    pass


class AlignmentError(ValueError):
    pass


@dataclass
class RunVector:
    """Metric values of one split, keyed by configuration id."""

    label: str
    values: dict[str, float]


@dataclass
class CorrelationResult:
    kendall_tau: float
    spearman_rho: float
    n: int
    pairs: list[tuple[str, float, float]] = field(default_factory=list, repr=False)
    # one side has every value tied, so both coefficients are undefined (NaN)
    degenerate: bool = False

    def to_dict(self) -> dict:
        if self.degenerate:
            return {"kendall_tau": None, "spearman_rho": None, "n": self.n, "degenerate": True}
        return {"kendall_tau": self.kendall_tau, "spearman_rho": self.spearman_rho, "n": self.n}


def _pairs_tied(values: np.ndarray) -> int:
    _, counts = np.unique(values, axis=0, return_counts=True)
    return int(np.sum(counts * (counts - 1) // 2))


def _count_inversions(values: list) -> int:
    """Pairs ``i < j`` with ``values[i] > values[j]`` (bottom-up merge sort)."""
    n = len(values)
    src = list(values)
    inversions = 0
    width = 1
    while width < n:
        dst = []
        for lo in range(0, n, 2 * width):
            left = src[lo : lo + width]
            right = src[lo + width : lo + 2 * width]
            i = j = 0
            while i < len(left) and j < len(right):
                if right[j] < left[i]:
                    dst.append(right[j])
                    inversions += len(left) - i
                    j += 1
                else:
                    dst.append(left[i])
                    i += 1
            dst.extend(left[i:])
            dst.extend(right[j:])
        src = dst
        width *= 2
    return inversions


def _check_pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-d and of equal length")
    if len(x) < 2:
        raise ValueError("need at least two paired values")
    return x, y


def kendall_tau_b(x, y) -> float:
    """Tie-adjusted Kendall correlation in O(n log n) (Knight's method)."""
    x, y = _check_pair(x, y)
    n = len(x)
    order = np.lexsort((y, x))
    xs, ys = x[order], y[order]
    n0 = n * (n - 1) // 2
    tx = _pairs_tied(xs)
    ty = _pairs_tied(ys)
    joint = _pairs_tied(np.column_stack((xs, ys)))
    denom_x, denom_y = n0 - tx, n0 - ty
    if denom_x == 0 or denom_y == 0:
        raise DegenerateRankingError("degenerate ranking: all values tied")
    discordant = _count_inversions(ys.tolist())
    concordant_minus_discordant = n0 - tx - ty + joint - 2 * discordant
    return concordant_minus_discordant / math.sqrt(denom_x * denom_y)


def average_ranks(values) -> np.ndarray:
    """1-based ranks; tied values share the mean of their positions."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    ranks = np.empty(len(values), dtype=np.float64)
    start = 0
    n = len(values)
    while start < n:
        end = start + 1
        while end < n and sorted_vals[end] == sorted_vals[start]:
            end += 1
        ranks[order[start:end]] = (start + end + 1) / 2.0
        start = end
    return ranks


def spearman_rho(x, y) -> float:
    """Pearson correlation of average ranks."""
    x, y = _check_pair(x, y)
    rx = average_ranks(x)
    ry = average_ranks(y)
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateRankingError("degenerate ranking: zero rank variance")
    rho = float(np.dot(dx, dy)) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, rho))


def run_vector(reports: Mapping[str, MetricReport | float], metric: str | None = None, k: int | None = None,
               label: str = "") -> RunVector:
    values = {}
    for config_id, rep in reports.items():
        values[str(config_id)] = float(rep) if isinstance(rep, (int, float)) else rep.value(metric, k)
    return RunVector(label, values)


def correlate_runs(a, b, metric: str | None = None, k: int | None = None,
                   allow_degenerate: bool = False) -> CorrelationResult:
    """Kendall tau-b and Spearman rho between two runs aligned by configuration id.

    ``a`` and ``b`` are :class:`RunVector` objects or mappings of configuration
    id to :class:`MetricReport` (then ``metric`` and ``k`` select the value).
    With ``allow_degenerate`` an all-tied side yields a result flagged
    ``degenerate`` instead of raising.
    """
    if not isinstance(a, RunVector):
        a = run_vector(a, metric, k, "a")
    if not isinstance(b, RunVector):
        b = run_vector(b, metric, k, "b")
    only_a = sorted(set(a.values) - set(b.values))
    only_b = sorted(set(b.values) - set(a.values))
    if only_a or only_b:
        raise AlignmentError(f"configuration ids differ: only in {a.label or 'a'}: {only_a}; only in {b.label or 'b'}: {only_b}")
    ids = sorted(a.values)
    xs = [a.values[c] for c in ids]
    ys = [b.values[c] for c in ids]
    if allow_degenerate and (len(set(xs)) < 2 or len(set(ys)) < 2):
        return CorrelationResult(math.nan, math.nan, len(ids), list(zip(ids, xs, ys)), degenerate=True)
    return CorrelationResult(
        kendall_tau=kendall_tau_b(xs, ys),
        spearman_rho=spearman_rho(xs, ys),
        n=len(ids),
        pairs=list(zip(ids, xs, ys)),
    )


def correlation_matrix(
    runs: Mapping[str, Mapping[str, MetricReport]],
    reference: str,
    metrics: Sequence[str] = ("hr", "mrr", "ndcg"),
    ks: Sequence[int] = (10,),
) -> dict[tuple[str, str, int], CorrelationResult]:
    """Correlate every run against ``reference`` for each (metric, K).

    Cells where one run ties every configuration are kept and flagged degenerate.
    """
    if reference not in runs:
        raise KeyError(f"reference run {reference!r} not among {sorted(runs)}")
    out = {}
    for label in sorted(runs):
        if label == reference:
            continue
        for m in metrics:
            for k in ks:
                out[(label, m, k)] = correlate_runs(
                    run_vector(runs[reference], m, k, reference), run_vector(runs[label], m, k, label),
                    allow_degenerate=True,
                )
    return out


def write_scatter_csv(result: CorrelationResult, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["config_id", "a", "b"])
        for row in result.pairs:
            writer.writerow([row[0], repr(row[1]), repr(row[2])])


@dataclass
class RankRow:
    rank: int
    model: str
    best_value: float
    best_config: str
    tied: bool = False


def model_ranking(entries: Iterable[tuple[str, str, MetricReport | float]], metric: str | None = None,
                  k: int | None = None) -> list[RankRow]:
    """Rank models by their best value over configurations.

    ``entries`` holds ``(model, config_id, report_or_value)``. Equal best
    values are ordered by model label and flagged as tied.
    """
    best: dict[str, tuple[float, str]] = {}
    for model, config_id, rep in entries:
        value = float(rep) if isinstance(rep, (int, float)) else rep.value(metric, k)
        cur = best.get(model)
        if cur is None or value > cur[0] or (value == cur[0] and str(config_id) < cur[1]):
            best[model] = (value, str(config_id))
    if not best:
        raise ValueError("no reports to rank")
    ordered = sorted(best.items(), key=lambda kv: (-kv[1][0], kv[0]))
    rows = [RankRow(pos, model, value, cfg) for pos, (model, (value, cfg)) in enumerate(ordered, start=1)]
    for prev, nxt in zip(rows, rows[1:]):
        if prev.best_value == nxt.best_value:
            prev.tied = nxt.tied = True
    return rows


def rank_shift_table(rankings: Mapping[str, list[RankRow]], reference: str | None = None) -> dict[str, dict[str, int]]:
    """Per model, its rank under each split and the shift from the reference split.

    Shift is ``rank(split) - rank(reference)``; positive means the model dropped.
    """
    if not rankings:
        raise ValueError("no rankings")
    reference = reference or next(iter(rankings))
    ranks = {label: {row.model: row.rank for row in rows} for label, rows in rankings.items()}
    models = sorted(set().union(*(r.keys() for r in ranks.values())))
    table = {}
    for model in models:
        entry = {f"rank:{label}": ranks[label].get(model) for label in rankings}
        base = ranks[reference].get(model)
        for label in rankings:
            r = ranks[label].get(model)
            entry[f"shift:{label}"] = None if base is None or r is None else r - base
        table[model] = entry
    return table


def mean_correlation(results: Mapping[str, Mapping[object, CorrelationResult]]) -> dict[object, dict]:
    """Unweighted mean of tau and rho across datasets, per comparison key.

    Degenerate cells are left out of the mean and counted.
    """
    if not results:
        raise ValueError("need at least one dataset")
    keys = sorted({key for per in results.values() for key in per}, key=repr)
    out = {}
    for key in keys:
        present = [per[key] for per in results.values() if key in per]
        cells = [c for c in present if not c.degenerate]
        out[key] = {
            "kendall_tau": math.fsum(c.kendall_tau for c in cells) / len(cells) if cells else None,
            "spearman_rho": math.fsum(c.spearman_rho for c in cells) / len(cells) if cells else None,
            "datasets": len(cells),
            "degenerate": len(present) - len(cells),
        }
    return out


def metric_keys(report: MetricReport) -> list[tuple[str, int]]:
    return [(m, k) for m in report.config["metrics"] for k in report.config["ks"] if metric_key(m, k) in report.summary]

"""Unsampled top-K ranking metrics and their aggregation over evaluation instances."""

from __future__ import annotations

import json
import math
import os
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .core import DataError
from .splitting import EvalInstance

DEFAULT_KS = (5, 10, 20, 50, 100)
METRICS = ("hr", "mrr", "ndcg")


class MetricsError(DataError):
    pass


class EmptyRankingWarning(UserWarning):
    pass


@dataclass
class RankedList:
    instance_id: int
    items: list

    def __post_init__(self):
        self.items = list(self.items)
        if len(set(self.items)) != len(self.items):
            raise MetricsError(f"ranked list for instance {self.instance_id} repeats items")


def _check_k(k: int) -> None:
    if k < 1:
        raise ValueError(f"K must be >= 1, got {k}")


def _warn_empty(ranked) -> bool:
    if len(ranked) == 0:
        warnings.warn("empty ranked list scored as a miss", EmptyRankingWarning, stacklevel=3)
        return True
    return False


def hr_at_k(targets, ranked, k: int) -> float:
    """1.0 if any target is in the first ``k`` positions, else 0.0."""
    _check_k(k)
    if _warn_empty(ranked):
        return 0.0
    wanted = set(targets)
    return 1.0 if any(item in wanted for item in ranked[:k]) else 0.0


def mrr_at_k(targets, ranked, k: int) -> float:
    """Reciprocal of the 1-based rank of the earliest target within the first ``k``."""
    _check_k(k)
    if _warn_empty(ranked):
        return 0.0
    wanted = set(targets)
    for pos, item in enumerate(ranked[:k], start=1):
        if item in wanted:
            return 1.0 / pos
    return 0.0


def ndcg_at_k(targets, ranked, k: int) -> float:
    """Binary-relevance NDCG; the ideal DCG places ``min(k, |targets|)`` hits first."""
    _check_k(k)
    if _warn_empty(ranked):
        return 0.0
    wanted = set(targets)
    dcg = math.fsum(1.0 / math.log2(pos + 1) for pos, item in enumerate(ranked[:k], start=1) if item in wanted)
    if dcg == 0.0:
        return 0.0
    idcg = math.fsum(1.0 / math.log2(i + 1) for i in range(1, min(k, len(wanted)) + 1))
    return dcg / idcg


_METRIC_FNS = {"hr": hr_at_k, "mrr": mrr_at_k, "ndcg": ndcg_at_k}


def apply_filter_seen(ranked: Sequence, seen: Iterable) -> list:
    """Drop already-seen items, keeping the order of the rest."""
    seen = set(seen)
    if not seen:
        return list(ranked)
    return [item for item in ranked if item not in seen]


def metric_key(metric: str, k: int) -> str:
    return f"{metric}@{k}"


@dataclass
class MetricReport:
    per_instance: dict[int, dict[str, float]]
    per_user: dict[str, dict[str, float]]
    summary: dict[str, float]
    config: dict
    meta: dict = field(default_factory=dict)

    def value(self, metric: str, k: int) -> float:
        return self.summary[metric_key(metric, k)]

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "meta": self.meta,
            "global": self.summary,
            "per_user": self.per_user,
            "per_instance": {str(k): v for k, v in self.per_instance.items()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MetricReport":
        return cls(
            per_instance={int(k): v for k, v in data["per_instance"].items()},
            per_user=data["per_user"],
            summary=data["global"],
            config=data["config"],
            meta=data.get("meta", {}),
        )

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "MetricReport":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _as_mapping(rankings) -> dict[int, list]:
    if isinstance(rankings, Mapping):
        return {int(k): RankedList(int(k), v).items for k, v in rankings.items()}
    out: dict[int, list] = {}
    for r in rankings:
        if r.instance_id in out:
            raise MetricsError(f"duplicate ranking for instance {r.instance_id}")
        out[r.instance_id] = r.items
    return out


def _mean(values) -> float:
    values = list(values)
    return math.fsum(values) / len(values)


def evaluate_run(
    instances: Sequence[EvalInstance],
    rankings,
    ks: Sequence[int] = DEFAULT_KS,
    metrics: Sequence[str] = METRICS,
    averaging: str = "user",
    filter_seen: bool = False,
    catalog: set | None = None,
    exclude_cold: bool = False,
) -> MetricReport:
    """Score rankings against instances.

    ``averaging="user"`` averages each user's instances first and then the
    users; ``"flat"`` averages over instances directly. With ``catalog`` and
    ``exclude_cold``, instances whose targets are all outside the catalog are
    left out and counted.
    """
    if averaging not in ("user", "flat"):
        raise ValueError(f"averaging must be 'user' or 'flat', got {averaging!r}")
    unknown = [m for m in metrics if m not in _METRIC_FNS]
    if unknown:
        raise ValueError(f"unknown metrics {unknown}")
    for k in ks:
        _check_k(k)
    ranked = _as_mapping(rankings)
    by_id: dict[int, EvalInstance] = {}
    for inst in instances:
        if inst.instance_id in by_id:
            raise MetricsError(f"duplicate instance id {inst.instance_id}")
        by_id[inst.instance_id] = inst
    stray = sorted(set(ranked) - set(by_id))
    if stray:
        raise MetricsError(f"rankings for unknown instance ids: {stray[:20]}")
    missing = sorted(set(by_id) - set(ranked))
    if missing:
        raise MetricsError(f"{len(missing)} instances have no ranking: {missing[:20]}")

    keys = [(m, k, metric_key(m, k)) for m in metrics for k in ks]
    per_instance: dict[int, dict[str, float]] = {}
    user_rows: dict[str, list[dict[str, float]]] = defaultdict(list)
    cold = excluded = 0
    for iid in sorted(by_id):
        inst = by_id[iid]
        targets = list(inst.targets)
        if catalog is not None and not any(t in catalog for t in targets):
            cold += 1
            if exclude_cold:
                excluded += 1
                continue
        items = ranked[iid]
        if filter_seen:
            items = apply_filter_seen(items, inst.prefix)
        row = {key: _METRIC_FNS[m](targets, items, k) for m, k, key in keys}
        per_instance[iid] = row
        user_rows[inst.user_id].append(row)
    if not per_instance:
        raise MetricsError("no instances left to score")

    per_user = {user: {key: _mean(r[key] for r in rows) for _, _, key in keys} for user, rows in sorted(user_rows.items())}
    source = per_user.values() if averaging == "user" else per_instance.values()
    summary = {key: _mean(r[key] for r in source) for _, _, key in keys}
    config = {
        "ks": list(ks),
        "metrics": list(metrics),
        "averaging": averaging,
        "filter_seen": filter_seen,
        "exclude_cold": exclude_cold,
    }
    meta = {"instances": len(per_instance), "users": len(per_user), "cold_instances": cold, "excluded_cold": excluded}
    return MetricReport(per_instance, per_user, summary, config, meta)


def read_rankings(path: str | os.PathLike) -> dict[int, list[str]]:
    """Read rankings as JSON lines ``{"instance_id", "items"}`` or ``id<TAB>item,item,...`` text."""
    out: dict[int, list[str]] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if line.lstrip().startswith("{"):
                rec = json.loads(line)
                iid, items = int(rec["instance_id"]), [str(x) for x in rec["items"]]
            else:
                head, _, tail = line.partition("\t")
                try:
                    iid = int(head)
                except ValueError:
                    raise MetricsError(f"{path}:{lineno}: bad instance id {head!r}") from None
                items = [x for x in tail.split(",") if x] if tail else []
            if iid in out:
                raise MetricsError(f"duplicate ranking for instance {iid}")
            out[iid] = items
    return out


def write_rankings(rankings: Mapping[int, Sequence], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for iid in sorted(rankings):
            f.write(json.dumps({"instance_id": int(iid), "items": [str(x) for x in rankings[iid]]}, separators=(",", ":")) + "\n")

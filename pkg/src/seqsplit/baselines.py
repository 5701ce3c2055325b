"""Non-neural next-item baselines: popularity, first-order Markov chain and last-item item-kNN.

Models are fit on training sequences only and are immutable afterwards. Ties
in any score are broken by item index (items indexed in sorted label order).
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse

from .core import SECONDS_PER_DAY, UserSequence
from .splitting import EvalInstance, SplitResult, dataset_checksum

MODEL_FORMAT = "seqsplit-model"
MODEL_VERSION = 1


class Recommender:
    kind = "base"
    defaults: dict = {}

    def __init__(self, **params):
        unknown = set(params) - set(self.defaults)
        if unknown:
            raise ValueError(f"unknown {self.kind} parameters: {sorted(unknown)}")
        self.params = {**self.defaults, **params}
        self.items: np.ndarray | None = None
        self.index: dict = {}
        self.pop_order: np.ndarray | None = None
        self.fit_stats: dict = {}

    def _index_items(self, train: Sequence[UserSequence]) -> None:
        labels = sorted({str(x) for seq in train for x in seq.items})
        self.items = np.array(labels, dtype=object)
        self.index = {label: k for k, label in enumerate(labels)}

    def _popularity(self, train: Sequence[UserSequence], since: int | None = None) -> np.ndarray:
        counts = np.zeros(len(self.items), dtype=np.int64)
        for seq in train:
            items = seq.items if since is None else seq.items[seq.timestamps >= since]
            if len(items):
                np.add.at(counts, [self.index[x] for x in items], 1)
        return counts

    def fit(self, train: Sequence[UserSequence]) -> "Recommender":
        train = list(train)
        if not train or not any(len(s) for s in train):
            raise ValueError("cannot fit on an empty training set")
        self._index_items(train)
        self._fit(train)
        self.fit_stats = {
            "sequences": len(train),
            "events": int(sum(len(s) for s in train)),
            "items": len(self.items),
            "train_checksum": dataset_checksum(train),
        }
        return self

    def _fit(self, train: Sequence[UserSequence]) -> None:
        raise NotImplementedError

    def _scores(self, prefix_idx: list[int]) -> dict[int, float]:
        return {}

    def recommend(self, prefix: Sequence, k: int, seen: Iterable | None = None, filter_seen: bool = False) -> list:
        """Top-``k`` item labels; scored candidates first, then popularity order."""
        if self.items is None:
            raise RuntimeError("model is not fitted")
        banned = set()
        if filter_seen:
            banned = {self.index[x] for x in (prefix if seen is None else seen) if x in self.index}
        prefix_idx = [self.index[x] for x in prefix if x in self.index]
        scores = self._scores(prefix_idx)
        out: list[int] = []
        taken = set(banned)
        for j in sorted(scores, key=lambda j: (-scores[j], j)):
            if len(out) >= k:
                break
            if j not in taken:
                out.append(j)
                taken.add(j)
        if len(out) < k:
            for j in self.pop_order:
                if len(out) >= k:
                    break
                if j not in taken:
                    out.append(int(j))
                    taken.add(j)
        return [self.items[j] for j in out]

    def _state(self) -> dict:
        raise NotImplementedError

    def _load_state(self, state: dict) -> None:
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "kind": self.kind,
            "params": self.params,
            "fit_stats": self.fit_stats,
            "items": [str(x) for x in self.items],
            "pop_order": [int(j) for j in self.pop_order],
            "state": self._state(),
        }

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n", encoding="utf-8")


class PopModel(Recommender):
    """Most-popular items, optionally counting only the last ``recency_days`` of training."""

    kind = "pop"
    defaults = {"recency_days": None}

    def _fit(self, train):
        since = None
        if self.params["recency_days"] is not None:
            last = max(int(s.timestamps[-1]) for s in train if len(s))
            since = last - int(self.params["recency_days"] * SECONDS_PER_DAY)
        self.counts = self._popularity(train, since)
        self.pop_order = np.lexsort((np.arange(len(self.items)), -self.counts))

    def _state(self):
        return {"counts": self.counts.tolist()}

    def _load_state(self, state):
        self.counts = np.asarray(state["counts"], dtype=np.int64)


class MarkovModel(Recommender):
    """First-order transitions between consecutive training items.

    With ``window > 1`` the transition rows of the last ``window`` prefix items
    are normalised and summed with weight ``decay ** age``.
    """

    kind = "markov"
    defaults = {"window": 1, "decay": 0.5}

    def _fit(self, train):
        counts = self._popularity(train)
        self.pop_order = np.lexsort((np.arange(len(self.items)), -counts))
        src, dst = [], []
        for seq in train:
            idx = [self.index[x] for x in seq.items]
            src.extend(idx[:-1])
            dst.extend(idx[1:])
        n = len(self.items)
        self.transitions = sparse.coo_matrix(
            (np.ones(len(src), dtype=np.int64), (np.asarray(src, dtype=np.int64), np.asarray(dst, dtype=np.int64))),
            shape=(n, n),
        ).tocsr()
        self.transitions.sum_duplicates()

    def transition_count(self, a, b) -> int:
        return int(self.transitions[self.index[a], self.index[b]])

    def _scores(self, prefix_idx):
        window = int(self.params["window"])
        scores: dict[int, float] = {}
        if window == 1:
            if not prefix_idx:
                return scores
            row = self.transitions[prefix_idx[-1]]
            return {int(j): float(c) for j, c in zip(row.indices, row.data)}
        for age, i in enumerate(reversed(prefix_idx[-window:])):
            row = self.transitions[i]
            total = row.data.sum()
            if total == 0:
                continue
            w = float(self.params["decay"]) ** age
            for j, c in zip(row.indices, row.data):
                scores[int(j)] = scores.get(int(j), 0.0) + w * c / total
        return scores

    def _state(self):
        coo = self.transitions.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return {"pairs": [[int(coo.row[t]), int(coo.col[t]), int(coo.data[t])] for t in order]}

    def _load_state(self, state):
        n = len(self.items)
        pairs = np.asarray(state["pairs"], dtype=np.int64).reshape(-1, 3)
        self.transitions = sparse.csr_matrix((pairs[:, 2], (pairs[:, 0], pairs[:, 1])), shape=(n, n))


class ItemKnnModel(Recommender):
    """Item-kNN on within-user co-occurrence cosine, scored from the last prefix item(s).

    ``sim(i, j) = users(i and j) / sqrt(users(i) * users(j))``; each item keeps
    its ``neighbors`` most similar items.
    """

    kind = "itemknn"
    defaults = {"neighbors": 100, "window": 1, "decay": 0.5}

    def _fit(self, train):
        counts = self._popularity(train)
        self.pop_order = np.lexsort((np.arange(len(self.items)), -counts))
        rows, cols = [], []
        for u, seq in enumerate(train):
            idx = {self.index[x] for x in seq.items}
            rows.extend([u] * len(idx))
            cols.extend(sorted(idx))
        n = len(self.items)
        incidence = sparse.csr_matrix(
            (np.ones(len(rows)), (np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64))),
            shape=(len(train), n),
        )
        co = (incidence.T @ incidence).tocsr()
        users = co.diagonal()
        m = int(self.params["neighbors"])
        self.neighbors: list[list[tuple[int, float]]] = []
        for i in range(n):
            row = co.getrow(i)
            js, cs = row.indices, row.data
            keep = js != i
            js, cs = js[keep], cs[keep]
            sims = cs / np.sqrt(users[i] * users[js])
            order = np.lexsort((js, -sims))[:m]
            self.neighbors.append([(int(js[t]), float(sims[t])) for t in order])

    def similarity(self, a, b) -> float:
        i, j = self.index[a], self.index[b]
        for nb, s in self.neighbors[i]:
            if nb == j:
                return s
        return 0.0

    def _scores(self, prefix_idx):
        window = int(self.params["window"])
        scores: dict[int, float] = {}
        for age, i in enumerate(reversed(prefix_idx[-window:])):
            w = float(self.params["decay"]) ** age
            for j, s in self.neighbors[i]:
                scores[j] = scores.get(j, 0.0) + w * s
        return scores

    def _state(self):
        return {"neighbors": [[[j, s] for j, s in nb] for nb in self.neighbors]}

    def _load_state(self, state):
        self.neighbors = [[(int(j), float(s)) for j, s in nb] for nb in state["neighbors"]]


MODELS = {cls.kind: cls for cls in (PopModel, MarkovModel, ItemKnnModel)}


def make_model(kind: str, **params) -> Recommender:
    try:
        return MODELS[kind](**params)
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}; choose from {sorted(MODELS)}") from None


def fit(kind: str, train: Sequence[UserSequence], params: dict | None = None) -> Recommender:
    return make_model(kind, **(params or {})).fit(train)


def recommend(model: Recommender, prefix: Sequence, k: int, seen: Iterable | None = None, filter_seen: bool = False) -> list:
    return model.recommend(prefix, k, seen, filter_seen)


def refit_on_train_plus_valid(kind: str, split: SplitResult, params: dict | None = None) -> Recommender:
    """Fit on the training side as it was before validation events were held out."""
    if split.train_side is None:
        raise ValueError("split does not carry its pre-validation training side")
    return fit(kind, split.train_side, params)


def load_model(path: str | os.PathLike) -> Recommender:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if data.get("format") != MODEL_FORMAT or data.get("version") != MODEL_VERSION:
        raise ValueError(f"{path} is not a version {MODEL_VERSION} model file")
    model = make_model(data["kind"], **data["params"])
    model.items = np.array(data["items"], dtype=object)
    model.index = {label: k for k, label in enumerate(data["items"])}
    model.pop_order = np.asarray(data["pop_order"], dtype=np.int64)
    model.fit_stats = data["fit_stats"]
    model._load_state(data["state"])
    return model


def recommend_batch(
    model: Recommender, instances: Sequence[EvalInstance], k: int, filter_seen: bool = False, threads: int = 1
) -> dict[int, list]:
    """Rankings for every instance, keyed by instance id; independent of ``threads``."""
    def run(chunk):
        return [(inst.instance_id, model.recommend(inst.prefix, k, None, filter_seen)) for inst in chunk]

    if threads <= 1 or len(instances) < 2:
        pairs = run(instances)
    else:
        size = -(-len(instances) // threads)
        chunks = [instances[s : s + size] for s in range(0, len(instances), size)]
        with ThreadPoolExecutor(threads) as pool:
            pairs = [p for part in pool.map(run, chunks) for p in part]
    return dict(sorted(pairs))

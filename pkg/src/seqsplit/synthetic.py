"""Synthetic interaction logs for tests and demos."""

from __future__ import annotations

import numpy as np

from .core import SECONDS_PER_DAY, Dataset


def random_log(
    rng: np.random.Generator,
    n_users: int = 30,
    n_items: int = 20,
    min_len: int = 1,
    max_len: int = 25,
    horizon: int = 1000,
) -> Dataset:
    """Users with random lengths, items and (often repeated) integer timestamps.

    Rows are emitted in a shuffled order so ingest order differs from time order.
    """
    records = []
    for u in range(n_users):
        n = int(rng.integers(min_len, max_len + 1))
        times = rng.integers(0, horizon, size=n)
        items = rng.integers(0, n_items, size=n)
        records.extend((f"u{u}", f"i{i}", int(t)) for i, t in zip(items, times))
    order = rng.permutation(len(records))
    return Dataset.from_records(records[k] for k in order)


def session_log(
    rng: np.random.Generator,
    n_users: int = 300,
    n_items: int = 200,
    sessions: tuple[int, int] = (4, 12),
    session_len: tuple[int, int] = (3, 8),
    in_session_gap: int = 60,
    between_sessions_gap: int = SECONDS_PER_DAY,
    start_window_days: int = 30,
) -> Dataset:
    """Session-structured activity: fixed gaps inside a session and between sessions.

    Each user starts at a random second of the first ``start_window_days`` days.
    """
    records = []
    for u in range(n_users):
        t = int(rng.integers(0, start_window_days * SECONDS_PER_DAY))
        for s in range(int(rng.integers(sessions[0], sessions[1] + 1))):
            if s:
                t += between_sessions_gap
            for e in range(int(rng.integers(session_len[0], session_len[1] + 1))):
                if e:
                    t += in_session_gap
                records.append((f"u{u}", f"i{int(rng.integers(n_items))}", t))
    return Dataset.from_records(records)


def sequential_log(
    rng: np.random.Generator,
    n_users: int = 200,
    n_items: int = 60,
    length: tuple[int, int] = (8, 40),
    stickiness: float = 0.7,
    horizon_days: int = 200,
) -> Dataset:
    """Logs with learnable next-item structure: with probability ``stickiness``
    the next item is ``(prev + 1) mod n_items``, otherwise a Zipf-like popular item."""
    weights = 1.0 / np.arange(1, n_items + 1)
    weights /= weights.sum()
    records = []
    horizon = horizon_days * SECONDS_PER_DAY
    for u in range(n_users):
        n = int(rng.integers(length[0], length[1] + 1))
        start = int(rng.integers(0, horizon // 2))
        times = np.sort(rng.integers(start, horizon, size=n))
        item = int(rng.choice(n_items, p=weights))
        for t in times:
            records.append((f"u{u:04d}", f"i{item:03d}", int(t)))
            if rng.random() < stickiness:
                item = (item + 1) % n_items
            else:
                item = int(rng.choice(n_items, p=weights))
    return Dataset.from_records(records)

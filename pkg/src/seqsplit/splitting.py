"""Leave-one-out and global temporal splits for next-item prediction.

Every split yields a :class:`SplitResult`: training sequences plus validation
and test :class:`EvalInstance` lists. An instance's prefix is the user's whole
history before its first target, including post-cutoff events.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import warnings
from dataclasses import dataclass, field, fields
from enum import Enum
from fractions import Fraction
from math import ceil
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import DataError, Dataset, UserSequence

_log = logging.getLogger(__name__)

MANIFEST_VERSION = 1


class Strategy(str, Enum):
    LOO = "loo"
    GTS = "gts"


class Target(str, Enum):
    LAST = "last"
    FIRST = "first"
    RANDOM = "random"
    SUCCESSIVE = "successive"
    ALL = "all"


class Validation(str, Enum):
    LOO = "loo"
    GT = "gt"
    LTI = "lti"
    UB = "ub"
    NONE = "none"


class SplitError(DataError):
    pass


class ChecksumMismatchWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SplitSpec:
    strategy: Strategy = Strategy.GTS
    test_quantile: float | None = 0.9
    t_test: int | None = None
    target: Target = Target.LAST
    validation: Validation | None = None
    val_quantile: float = 0.9
    ub_user_count: int = 1024
    val_target: Target = Target.LAST
    seed: int = 0
    min_seq_len: int = 2

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        object.__setattr__(self, "target", Target(self.target))
        object.__setattr__(self, "val_target", Target(self.val_target))
        validation = self.validation
        if validation is None:
            validation = Validation.LOO if self.strategy is Strategy.LOO else Validation.GT
        object.__setattr__(self, "validation", Validation(validation))
        if self.strategy is Strategy.LOO and self.validation not in (Validation.LOO, Validation.NONE):
            raise ValueError("leave-one-out supports only its own validation scheme")
        if self.strategy is Strategy.GTS:
            if self.validation is Validation.LOO:
                raise ValueError("loo validation requires the loo strategy")
            if self.t_test is None and self.test_quantile is None:
                raise ValueError("GTS needs test_quantile or t_test")
            if self.t_test is None and not 0 < self.test_quantile < 1:
                raise ValueError("test_quantile must lie in (0, 1)")
        if not 0 < self.val_quantile < 1:
            raise ValueError("val_quantile must lie in (0, 1)")
        if self.min_seq_len < 2:
            raise ValueError("min_seq_len must be >= 2")

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = value.value if isinstance(value, Enum) else value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SplitSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown split options: {sorted(unknown)}")
        return cls(**data)

    def label(self) -> str:
        if self.strategy is Strategy.LOO:
            return "loo"
        cut = f"t{self.t_test}" if self.t_test is not None else f"q{self.test_quantile:g}"
        val = self.validation.value
        if self.validation is Validation.GT:
            val += f"-{self.val_target.value}"
        return f"gts-{cut}-{self.target.value}-{val}"


@dataclass(eq=False)
class EvalInstance:
    """A scoring unit: an input prefix and its ground-truth target item(s)."""

    instance_id: int
    user_id: str
    prefix: np.ndarray
    targets: np.ndarray
    target_timestamps: np.ndarray
    prev_timestamp: int
    role: str = "test"
    position: int = -1

    def __post_init__(self):
        self.prefix = np.asarray(self.prefix, dtype=object)
        self.targets = np.asarray(self.targets, dtype=object)
        self.target_timestamps = np.asarray(self.target_timestamps, dtype=np.int64)
        if len(self.targets) < 1:
            raise ValueError("an instance needs at least one target")
        if len(self.prefix) < 1:
            raise ValueError("an instance needs a non-empty prefix")

    def __eq__(self, other) -> bool:
        if not isinstance(other, EvalInstance):
            return NotImplemented
        return (
            self.instance_id == other.instance_id
            and self.user_id == other.user_id
            and self.role == other.role
            and int(self.prev_timestamp) == int(other.prev_timestamp)
            and self.prefix.tolist() == other.prefix.tolist()
            and self.targets.tolist() == other.targets.tolist()
            and self.target_timestamps.tolist() == other.target_timestamps.tolist()
        )

    def __repr__(self) -> str:
        return (
            f"EvalInstance(id={self.instance_id}, user={self.user_id!r}, role={self.role}, "
            f"prefix={self.prefix.tolist()}, targets={self.targets.tolist()})"
        )

    def to_record(self) -> dict:
        return {
            "record": "instance",
            "instance_id": int(self.instance_id),
            "role": self.role,
            "user_id": self.user_id,
            "prefix": [str(x) for x in self.prefix],
            "targets": [str(x) for x in self.targets],
            "target_timestamps": [int(t) for t in self.target_timestamps],
            "prev_timestamp": int(self.prev_timestamp),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "EvalInstance":
        return cls(
            instance_id=rec["instance_id"],
            user_id=rec["user_id"],
            prefix=rec["prefix"],
            targets=rec["targets"],
            target_timestamps=rec["target_timestamps"],
            prev_timestamp=rec["prev_timestamp"],
            role=rec["role"],
            position=len(rec["prefix"]),
        )


@dataclass(eq=False)
class SplitResult:
    spec: SplitSpec
    train: list[UserSequence]
    validation_instances: list[EvalInstance]
    test_instances: list[EvalInstance]
    t_test: int | None = None
    t_val: int | None = None
    provenance: dict = field(default_factory=dict)
    report: dict = field(default_factory=dict)
    # training side before validation events were carved out; used for refits
    train_side: list[UserSequence] | None = None
    # role -> user_id -> timestamps of that user's holdout events
    holdouts: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)

    @property
    def instances(self) -> list[EvalInstance]:
        return self.validation_instances + self.test_instances

    def equivalent(self, other: "SplitResult") -> bool:
        return (
            self.train == other.train
            and self.validation_instances == other.validation_instances
            and self.test_instances == other.test_instances
            and self.t_test == other.t_test
            and self.t_val == other.t_val
            and self.provenance == other.provenance
        )


def _timestamps(data) -> np.ndarray:
    if isinstance(data, Dataset):
        return data.timestamps
    if isinstance(data, np.ndarray):
        return data
    seqs = list(data)
    if seqs and isinstance(seqs[0], UserSequence):
        return np.concatenate([s.timestamps for s in seqs]) if seqs else np.empty(0, np.int64)
    return np.asarray(seqs, dtype=np.int64)


def gts_cutoff(data, q: float) -> int:
    """Timestamp of the ``ceil(q * N)``-th event in global time order.

    ``data`` may be a :class:`Dataset`, a list of sequences or an array of timestamps.
    The quantile is read as a decimal so that ``0.9 * 10`` is exactly 9.
    """
    if not 0 < q < 1:
        raise ValueError(f"quantile must lie in (0, 1), got {q}")
    ts = _timestamps(data)
    n = len(ts)
    if n == 0:
        raise SplitError("cannot place a cutoff on an empty log")
    rank = max(1, ceil(Fraction(str(q)) * n))
    return int(np.partition(ts, rank - 1)[rank - 1])


def _user_generator(seed: int, user_id: str, role: str) -> np.random.Generator:
    digest = hashlib.blake2b(f"{seed}\x1f{role}\x1f{user_id}".encode(), digest_size=16).digest()
    return np.random.Generator(np.random.Philox(key=int.from_bytes(digest, "little")))


def _instance(seq: UserSequence, pos: int, role: str, end: int | None = None) -> EvalInstance:
    stop = pos + 1 if end is None else end
    return EvalInstance(
        instance_id=-1,
        user_id=seq.user_id,
        prefix=seq.items[:pos],
        targets=seq.items[pos:stop],
        target_timestamps=seq.timestamps[pos:stop],
        prev_timestamp=int(seq.timestamps[pos - 1]),
        role=role,
        position=pos,
    )


def select_targets(
    seq: UserSequence, holdout_start: int, target: Target | str, seed: int = 0, role: str = "test"
) -> list[EvalInstance]:
    """Build evaluation instances from the holdout ``seq[holdout_start:]``.

    When the holdout is the whole sequence (``holdout_start == 0``) its first
    event cannot be a target, and no ``All`` instance is produced.
    """
    target = Target(target)
    n = len(seq)
    first = max(holdout_start, 1)
    if first >= n:
        return []
    if target is Target.LAST:
        return [_instance(seq, n - 1, role)]
    if target is Target.FIRST:
        return [_instance(seq, first, role)]
    if target is Target.RANDOM:
        pos = first + int(_user_generator(seed, seq.user_id, role).integers(n - first))
        return [_instance(seq, pos, role)]
    if target is Target.SUCCESSIVE:
        return [_instance(seq, pos, role) for pos in range(first, n)]
    if holdout_start == 0:
        return []
    return [_instance(seq, holdout_start, role, end=n)]


def _assign_ids(*groups: list[EvalInstance]) -> None:
    next_id = 0
    for group in groups:
        group.sort(key=lambda inst: (inst.user_id, inst.position))
        for inst in group:
            inst.instance_id = next_id
            next_id += 1


def dataset_checksum(sequences: Iterable[UserSequence]) -> str:
    h = hashlib.sha256()
    for seq in sorted(sequences, key=lambda s: s.user_id):
        h.update(seq.user_id.encode())
        h.update(b"\x1d")
        h.update("\x1f".join(map(str, seq.items)).encode())
        h.update(b"\x1e")
        h.update(np.ascontiguousarray(seq.timestamps, dtype="<i8").tobytes())
    return h.hexdigest()


def loo_split(sequences: Sequence[UserSequence], min_seq_len: int = 2, validation: bool = True) -> SplitResult:
    """Leave-one-out: last event is the test target, the one before it the validation target.

    Users with exactly two events get a test instance but no validation
    instance; shorter users are dropped and counted.
    """
    min_len = max(2, min_seq_len)
    train, train_side, valid, test = [], [], [], []
    holdouts: dict[str, dict[str, np.ndarray]] = {"test": {}, "valid": {}}
    excluded = no_valid = 0
    for seq in sorted(sequences, key=lambda s: s.user_id):
        n = len(seq)
        if n < min_len:
            excluded += 1
            continue
        test.append(_instance(seq, n - 1, "test"))
        holdouts["test"][seq.user_id] = seq.timestamps[n - 1 :]
        train_side.append(seq.head(n - 1))
        if validation and n >= 3:
            valid.append(_instance(seq, n - 2, "valid"))
            holdouts["valid"][seq.user_id] = seq.timestamps[n - 2 : n - 1]
            train.append(seq.head(n - 2))
        else:
            if validation:
                no_valid += 1
            train.append(seq.head(n - 1))
    if not test:
        raise SplitError("no user has the two events needed for a leave-one-out test instance")
    _assign_ids(valid, test)
    report = {
        "users": len(sequences),
        "excluded_short_users": excluded,
        "users_without_validation": no_valid,
        "test_users": len(test),
        "validation_users": len(valid),
    }
    if excluded:
        _log.info("leave-one-out excluded %d users shorter than %d", excluded, min_len)
    return SplitResult(
        spec=SplitSpec(strategy=Strategy.LOO, validation=Validation.LOO if validation else Validation.NONE, min_seq_len=min_len),
        train=train,
        validation_instances=valid,
        test_instances=test,
        report=report,
        train_side=train_side,
        holdouts=holdouts,
    )


def gts_split(
    sequences: Sequence[UserSequence],
    t_test: int,
    target: Target | str = Target.LAST,
    seed: int = 0,
    min_seq_len: int = 2,
    role: str = "test",
) -> SplitResult:
    """Global temporal split of the test side at ``t_test``.

    Events at ``t_test`` stay in training; the holdout is strictly later.
    Training keeps users with at least ``min_seq_len`` pre-cutoff events.
    """
    target = Target(target)
    train, instances = [], []
    holdout: dict[str, np.ndarray] = {}
    holdout_users = dropped = 0
    for seq in sorted(sequences, key=lambda s: s.user_id):
        cut = int(np.searchsorted(seq.timestamps, t_test, side="right"))
        if cut >= min_seq_len:
            train.append(seq.head(cut))
        if cut < len(seq):
            holdout_users += 1
            made = select_targets(seq, cut, target, seed, role)
            if made:
                instances.extend(made)
                holdout[seq.user_id] = seq.timestamps[cut:]
            else:
                dropped += 1
    if holdout_users == 0:
        raise SplitError(f"cutoff too late: no events after {t_test}")
    if not train:
        raise SplitError(f"cutoff too early: no user keeps {min_seq_len} events up to {t_test}")
    if not instances:
        raise SplitError(f"no {target.value} instances could be built after {t_test}")
    _assign_ids(instances)
    report = {
        "holdout_users": holdout_users,
        "dropped_holdout_users": dropped,
        "instance_users": len(holdout),
        "instances": len(instances),
        "train_users": len(train),
        "train_events": sum(len(s) for s in train),
    }
    return SplitResult(
        spec=SplitSpec(strategy=Strategy.GTS, t_test=int(t_test), test_quantile=None, target=target,
                       validation=Validation.NONE, seed=seed, min_seq_len=min_seq_len),
        train=train,
        validation_instances=[],
        test_instances=instances,
        t_test=int(t_test),
        report=report,
        train_side=train,
        holdouts={role: holdout},
    )


def make_validation(
    train_side: Sequence[UserSequence], scheme: Validation | str, spec: SplitSpec
) -> tuple[list[UserSequence], list[EvalInstance], int | None, dict[str, np.ndarray], dict]:
    """Carve validation instances out of the training side of a test split.

    Returns the reduced training sequences, the validation instances,
    ``T_val`` (GT only), per-user validation holdout timestamps and a report.
    """
    scheme = Validation(scheme)
    train_side = sorted(train_side, key=lambda s: s.user_id)
    if scheme is Validation.NONE:
        return list(train_side), [], None, {}, {}
    if scheme is Validation.GT:
        t_val = gts_cutoff(train_side, spec.val_quantile)
        try:
            inner = gts_split(train_side, t_val, spec.val_target, spec.seed, spec.min_seq_len, role="valid")
        except SplitError as exc:
            raise SplitError(f"global temporal validation: {exc}") from exc
        report = {f"validation_{k}": v for k, v in inner.report.items()}
        return inner.train, inner.test_instances, t_val, inner.holdouts["valid"], report
    if scheme is Validation.LTI:
        train, instances, holdout = [], [], {}
        for seq in train_side:
            n = len(seq)
            if n >= 2:
                instances.append(_instance(seq, n - 1, "valid"))
                holdout[seq.user_id] = seq.timestamps[n - 1 :]
                if n - 1 >= spec.min_seq_len:
                    train.append(seq.head(n - 1))
            else:
                train.append(seq)
        return train, instances, None, holdout, {"validation_users": len(instances)}
    if scheme is Validation.UB:
        n_users = len(train_side)
        if spec.ub_user_count >= n_users:
            raise SplitError(f"user-based validation wants {spec.ub_user_count} users but training has {n_users}")
        picked = set(np.random.default_rng(spec.seed).permutation(n_users)[: spec.ub_user_count].tolist())
        train, instances, holdout = [], [], {}
        for k, seq in enumerate(train_side):
            if k not in picked:
                train.append(seq)
                continue
            made = select_targets(seq, 1, spec.val_target, spec.seed, "valid")
            instances.extend(made)
            if made:
                holdout[seq.user_id] = seq.timestamps
        return train, instances, None, holdout, {"validation_users": len(holdout)}
    raise ValueError(f"validation scheme {scheme.value} does not apply to a temporal split")


def split(sequences: Sequence[UserSequence], spec: SplitSpec) -> SplitResult:
    """Run the split described by ``spec`` and attach provenance."""
    sequences = sorted(sequences, key=lambda s: s.user_id)
    checksum = dataset_checksum(sequences)
    if spec.strategy is Strategy.LOO:
        result = loo_split(sequences, spec.min_seq_len, validation=spec.validation is Validation.LOO)
        result.spec = spec
    else:
        t_test = spec.t_test if spec.t_test is not None else gts_cutoff(sequences, spec.test_quantile)
        result = gts_split(sequences, t_test, spec.target, spec.seed, spec.min_seq_len)
        train, valid, t_val, holdout, vreport = make_validation(result.train, spec.validation, spec)
        if spec.validation is not Validation.NONE and not valid:
            raise SplitError(f"{spec.validation.value} validation produced no instances")
        result.spec = spec
        result.train = train
        result.validation_instances = valid
        result.t_val = t_val
        result.holdouts["valid"] = holdout
        result.report.update(vreport)
        _assign_ids(result.validation_instances, result.test_instances)
    result.provenance = {"spec": spec.to_dict(), "dataset_checksum": checksum, "users": len(sequences)}
    return result


def _write_sequences(seqs: Iterable[UserSequence], path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["user_id", "item_id", "timestamp"])
        for seq in seqs:
            for item, ts in zip(seq.items, seq.timestamps):
                writer.writerow([seq.user_id, item, int(ts)])


def _read_sequences(path: Path) -> list[UserSequence]:
    grouped: dict[str, tuple[list, list]] = {}
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        next(reader, None)
        for user, item, ts in reader:
            items, times = grouped.setdefault(user, ([], []))
            items.append(item)
            times.append(int(ts))
    return [UserSequence(u, items, times) for u, (items, times) in grouped.items()]


def sidecar_paths(path: str | os.PathLike) -> tuple[Path, Path]:
    """Train and full-train file locations that accompany a manifest."""
    path = Path(path)
    stem = path.name[: -len(path.suffix)] if path.suffix else path.name
    return path.with_name(stem + ".train.csv"), path.with_name(stem + ".train_full.csv")


def write_manifest(split_result: SplitResult, path: str | os.PathLike) -> None:
    """Write instances as JSON lines next to the training sequences files.

    The first line is a header with provenance; ids are original strings.
    """
    path = Path(path)
    train_path, full_path = sidecar_paths(path)
    header = {
        "record": "header",
        "version": MANIFEST_VERSION,
        "provenance": split_result.provenance,
        "t_test": split_result.t_test,
        "t_val": split_result.t_val,
        "report": split_result.report,
        "counts": {
            "valid": len(split_result.validation_instances),
            "test": len(split_result.test_instances),
        },
    }
    dump = lambda rec: json.dumps(rec, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(dump(header) + "\n")
        for inst in split_result.instances:
            f.write(dump(inst.to_record()) + "\n")
        for role in sorted(split_result.holdouts):
            for user, ts in sorted(split_result.holdouts[role].items()):
                f.write(dump({"record": "holdout", "role": role, "user_id": user, "timestamps": ts.tolist()}) + "\n")
    _write_sequences(split_result.train, train_path)
    if split_result.train_side is not None:
        _write_sequences(split_result.train_side, full_path)


def read_manifest(path: str | os.PathLike, sequences: Sequence[UserSequence] | None = None) -> SplitResult:
    """Load a manifest written by :func:`write_manifest`.

    When ``sequences`` is given, its checksum is compared with the one stored
    in the header and a :class:`ChecksumMismatchWarning` is issued on mismatch.
    """
    path = Path(path)
    train_path, full_path = sidecar_paths(path)
    valid, test = [], []
    holdouts: dict[str, dict[str, np.ndarray]] = {}
    header = None
    with open(path, encoding="utf-8") as f:
        for line in f:
            rec = json.loads(line)
            kind = rec.get("record")
            if kind == "header":
                header = rec
            elif kind == "instance":
                inst = EvalInstance.from_record(rec)
                (valid if inst.role == "valid" else test).append(inst)
            elif kind == "holdout":
                holdouts.setdefault(rec["role"], {})[rec["user_id"]] = np.asarray(rec["timestamps"], dtype=np.int64)
    if header is None:
        raise DataError(f"{path} has no manifest header")
    if header.get("version") != MANIFEST_VERSION:
        raise DataError(f"unsupported manifest version {header.get('version')}")
    provenance = header["provenance"]
    if sequences is not None:
        actual = dataset_checksum(sequences)
        if actual != provenance.get("dataset_checksum"):
            warnings.warn(
                f"dataset checksum {actual[:12]} does not match manifest {str(provenance.get('dataset_checksum'))[:12]}",
                ChecksumMismatchWarning,
                stacklevel=2,
            )
    return SplitResult(
        spec=SplitSpec.from_dict(provenance["spec"]),
        train=_read_sequences(train_path),
        validation_instances=valid,
        test_instances=test,
        t_test=header["t_test"],
        t_val=header["t_val"],
        provenance=provenance,
        report=header.get("report", {}),
        train_side=_read_sequences(full_path) if full_path.exists() else None,
        holdouts=holdouts,
    )

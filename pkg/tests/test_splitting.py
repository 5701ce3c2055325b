import warnings
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqsplit.core import UserSequence, to_user_sequences
from seqsplit.splitting import (
    ChecksumMismatchWarning,
    SplitError,
    SplitSpec,
    Target,
    Validation,
    gts_cutoff,
    gts_split,
    loo_split,
    make_validation,
    read_manifest,
    select_targets,
    split,
    write_manifest,
)
from seqsplit.synthetic import random_log

from conftest import mkseq
from oracles import quantile_timestamp


def items(inst):
    return inst.prefix.tolist(), inst.targets.tolist()


# leave-one-out

def test_loo_four_events():
    res = loo_split([mkseq("u", "abcd")])
    assert [list(s.items) for s in res.train] == [["a", "b"]]
    assert items(res.validation_instances[0]) == (["a", "b"], ["c"])
    assert items(res.test_instances[0]) == (["a", "b", "c"], ["d"])


def test_loo_length_three_users_train_on_one_event():
    res = loo_split([mkseq(f"u{k}", "xyz") for k in range(5)])
    assert all(len(s) == 1 for s in res.train)


def test_loo_covers_every_user():
    seqs = [mkseq(f"u{k:03d}", [f"i{j}" for j in range(3 + k % 7)]) for k in range(100)]
    res = loo_split(seqs)
    assert len(res.test_instances) == 100
    assert len(res.validation_instances) == 100


def test_loo_length_two_user_has_test_only():
    res = loo_split([mkseq("short", "ab"), mkseq("long", "abc")])
    assert {i.user_id for i in res.test_instances} == {"short", "long"}
    assert {i.user_id for i in res.validation_instances} == {"long"}
    assert res.report["users_without_validation"] == 1


def test_loo_drops_single_event_users():
    res = loo_split([mkseq("one", "a"), mkseq("two", "ab")])
    assert res.report["excluded_short_users"] == 1
    with pytest.raises(SplitError):
        loo_split([mkseq("one", "a")])


# cutoff

def test_cutoff_direct_index():
    assert gts_cutoff(np.arange(1, 11), 0.9) == 9


def test_cutoff_single_timestamp_leads_to_error():
    seqs = [mkseq("a", "xyz", [5, 5, 5]), mkseq("b", "xy", [5, 5])]
    t = gts_cutoff(seqs, 0.9)
    assert t == 5
    with pytest.raises(SplitError, match="too late"):
        gts_split(seqs, t)


def test_cutoff_matches_sort_oracle(rng):
    for q in (0.1, 0.5, 0.8, 0.9, 0.95, 0.975):
        ts = rng.integers(0, 50, size=1000)
        assert gts_cutoff(ts, q) == quantile_timestamp(ts.tolist(), q)


def test_cutoff_rejects_bad_quantile():
    with pytest.raises(ValueError):
        gts_cutoff(np.arange(3), 1.0)


# temporal split

def test_gts_last():
    res = gts_split([mkseq("u", "abcd")], 2, Target.LAST)
    assert [list(s.items) for s in res.train] == [["a", "b"]]
    assert [items(i) for i in res.test_instances] == [(["a", "b", "c"], ["d"])]


def test_gts_first_skips_first_item_of_late_starters():
    res = gts_split([mkseq("old", "ab", [1, 2]), mkseq("new", "xy", [5, 6])], 2, Target.FIRST)
    inst = [i for i in res.test_instances if i.user_id == "new"]
    assert [items(i) for i in inst] == [(["x"], ["y"])]


def test_gts_successive_grows_prefix():
    res = gts_split([mkseq("u", "abcde")], 2, Target.SUCCESSIVE)
    assert [items(i) for i in res.test_instances] == [
        (["a", "b"], ["c"]),
        (["a", "b", "c"], ["d"]),
        (["a", "b", "c", "d"], ["e"]),
    ]


def test_gts_events_at_cutoff_stay_in_train():
    res = gts_split([mkseq("u", "abcd", [1, 2, 2, 3])], 2)
    assert list(res.train[0].items) == ["a", "b", "c"]
    assert items(res.test_instances[0]) == (["a", "b", "c"], ["d"])


def test_gts_all_target():
    res = gts_split([mkseq("u", "abcde"), mkseq("late", "xyz", [7, 8, 9])], 2, Target.ALL)
    assert [items(i) for i in res.test_instances] == [(["a", "b"], ["c", "d", "e"])]
    assert res.test_instances[0].target_timestamps.tolist() == [3, 4, 5]


def test_gts_train_min_len():
    res = gts_split([mkseq("u", "abcd"), mkseq("v", "ab", [2, 3])], 2, min_seq_len=2)
    assert [s.user_id for s in res.train] == ["u"]


def test_gts_too_early():
    with pytest.raises(SplitError, match="too early"):
        gts_split([mkseq("u", "abc")], 1)


# targets

def test_select_last_and_all():
    seq = mkseq("u", "abcde")
    assert items(select_targets(seq, 2, "last")[0]) == (["a", "b", "c", "d"], ["e"])
    assert items(select_targets(seq, 2, "all")[0]) == (["a", "b"], ["c", "d", "e"])
    assert select_targets(seq, 0, "all") == []


def test_select_random_fixed_seed_is_fixed():
    seq = mkseq("u", "abcde")
    a = select_targets(seq, 2, "random", seed=3)
    b = select_targets(seq, 2, "random", seed=3)
    assert a == b
    assert a[0].targets[0] in {"c", "d", "e"}


def test_select_random_is_uniform():
    seq = mkseq("u", "abcde")
    n = 100_000
    counts = Counter(select_targets(seq, 2, "random", seed=s)[0].targets[0] for s in range(n))
    assert set(counts) == {"c", "d", "e"}
    for c in counts.values():
        assert abs(c / n - 1 / 3) < 0.01


def test_random_draws_are_per_user():
    seqs = [mkseq(f"u{k}", "abcdefgh") for k in range(30)]
    full = {i.user_id: i.targets[0] for i in gts_split(seqs, 3, "random", seed=1).test_instances}
    part = {i.user_id: i.targets[0] for i in gts_split(seqs[::2], 3, "random", seed=1).test_instances}
    assert all(full[u] == t for u, t in part.items())


# validation

def test_lti_validation():
    spec = SplitSpec(validation="lti")
    train, valid, t_val, _, _ = make_validation([mkseq("u", "abc")], Validation.LTI, spec)
    assert [list(s.items) for s in train] == [["a", "b"]]
    assert [items(i) for i in valid] == [(["a", "b"], ["c"])]
    assert t_val is None


def test_gt_validation_respects_t_val(rng):
    seqs = to_user_sequences(random_log(rng, n_users=60, max_len=30))
    res = split(seqs, SplitSpec(strategy="gts", test_quantile=0.9, validation="gt"))
    assert res.t_val <= res.t_test
    assert len(res.validation_instances) > 0
    assert max(int(s.timestamps.max()) for s in res.train) <= res.t_val
    for inst in res.validation_instances:
        assert inst.target_timestamps.min() > res.t_val
        assert inst.target_timestamps.max() <= res.t_test


def test_ub_validation_is_seeded():
    seqs = [mkseq(f"u{k:04d}", "abcdef", [1, 2, 3, 4, 5, 100]) for k in range(1500)]
    spec = SplitSpec(strategy="gts", t_test=50, validation="ub", ub_user_count=1024, seed=11)
    a = split(seqs, spec)
    b = split(seqs, spec)
    users_a = {i.user_id for i in a.validation_instances}
    assert users_a == {i.user_id for i in b.validation_instances}
    assert len(users_a) == 1024
    assert len(a.train) == 1500 - 1024
    assert not users_a & {s.user_id for s in a.train}
    c = split(seqs, SplitSpec(strategy="gts", t_test=50, validation="ub", ub_user_count=1024, seed=12))
    assert {i.user_id for i in c.validation_instances} != users_a


def test_ub_too_many_users():
    seqs = [mkseq(f"u{k}", "abc") for k in range(3)]
    with pytest.raises(SplitError):
        make_validation(seqs, "ub", SplitSpec(validation="ub", ub_user_count=3))


def test_spec_validation():
    with pytest.raises(ValueError):
        SplitSpec(strategy="loo", validation="gt")
    with pytest.raises(ValueError):
        SplitSpec(strategy="gts", validation="loo")
    with pytest.raises(ValueError):
        SplitSpec(test_quantile=1.5)
    assert SplitSpec().validation is Validation.GT
    assert SplitSpec(strategy="loo").validation is Validation.LOO
    assert SplitSpec.from_dict(SplitSpec(target="all").to_dict()) == SplitSpec(target="all")


def test_ids_are_sequential_valid_then_test(rng):
    seqs = to_user_sequences(random_log(rng, n_users=40, max_len=30))
    res = split(seqs, SplitSpec(target="successive", validation="lti"))
    ids = [i.instance_id for i in res.instances]
    assert ids == list(range(len(ids)))
    assert all(i.role == "valid" for i in res.instances[: len(res.validation_instances)])


# manifest

def test_manifest_roundtrip(tmp_path, rng):
    seqs = to_user_sequences(random_log(rng, n_users=40, max_len=30))
    for spec in (SplitSpec(strategy="loo"), SplitSpec(target="all", validation="lti"), SplitSpec(target="successive")):
        res = split(seqs, spec)
        path = tmp_path / f"{spec.label()}.jsonl"
        write_manifest(res, path)
        back = read_manifest(path, seqs)
        assert back.equivalent(res)
        assert back.spec == res.spec
        n_instances = sum(1 for line in path.read_text().splitlines() if '"record":"instance"' in line)
        assert n_instances == len(res.validation_instances) + len(res.test_instances)


def test_manifest_checksum_mismatch_warns(tmp_path):
    seqs = [mkseq("u", "abcd"), mkseq("v", "abcd")]
    res = split(seqs, SplitSpec(strategy="loo"))
    write_manifest(res, tmp_path / "m.jsonl")
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        read_manifest(tmp_path / "m.jsonl", seqs)
    altered = [mkseq("u", "abce"), mkseq("v", "abcd")]
    with pytest.warns(ChecksumMismatchWarning):
        read_manifest(tmp_path / "m.jsonl", altered)


def test_provenance_contents():
    seqs = [mkseq("u", "abcd")]
    res = split(seqs, SplitSpec(strategy="loo", seed=4))
    assert res.provenance["spec"]["seed"] == 4
    assert len(res.provenance["dataset_checksum"]) == 64


def test_labels():
    assert SplitSpec(strategy="loo").label() == "loo"
    assert SplitSpec(target="successive").label() == "gts-q0.9-successive-gt-last"
    assert SplitSpec(t_test=7, validation="lti").label() == "gts-t7-last-lti"


# properties

sequence_lists = st.lists(
    st.lists(st.tuples(st.integers(0, 6), st.integers(0, 40)), min_size=1, max_size=15),
    min_size=2,
    max_size=12,
)


def build(raw):
    seqs = []
    for k, events in enumerate(raw):
        events = sorted(events, key=lambda e: e[1])
        seqs.append(UserSequence(f"u{k:02d}", [f"i{i}" for i, _ in events], [t for _, t in events]))
    return seqs


@settings(max_examples=80, deadline=None)
@given(sequence_lists, st.sampled_from(list(Target)), st.sampled_from([0.3, 0.5, 0.8, 0.9]))
def test_gts_invariants(raw, target, q):
    seqs = build(raw)
    t = gts_cutoff(seqs, q)
    try:
        res = gts_split(seqs, t, target, seed=5)
    except SplitError:
        return
    by_user = {s.user_id: s for s in seqs}
    for s in res.train:
        assert int(s.timestamps.max()) <= t
        assert len(s) >= 2
    per_user = Counter(i.user_id for i in res.test_instances)
    for inst in res.test_instances:
        seq = by_user[inst.user_id]
        cut = int(np.searchsorted(seq.timestamps, t, side="right"))
        pos = len(inst.prefix)
        assert pos >= 1
        assert inst.prefix.tolist() == list(seq.items[:pos])
        assert inst.targets.tolist() == list(seq.items[pos : pos + len(inst.targets)])
        assert inst.target_timestamps.min() > t
        assert inst.prev_timestamp == seq.timestamps[pos - 1]
        if target is Target.ALL:
            assert cut >= 1 and pos == cut
    if target is Target.SUCCESSIVE:
        for user, count in per_user.items():
            seq = by_user[user]
            cut = int(np.searchsorted(seq.timestamps, t, side="right"))
            assert count == len(seq) - cut - (1 if cut == 0 else 0)
        chains = {}
        for inst in res.test_instances:
            chains.setdefault(inst.user_id, []).append(inst)
        for chain in chains.values():
            for prev, cur in zip(chain, chain[1:]):
                assert cur.prefix.tolist() == prev.prefix.tolist() + prev.targets.tolist()


@settings(max_examples=80, deadline=None)
@given(sequence_lists)
def test_loo_partition(raw):
    seqs = build(raw)
    try:
        res = loo_split(seqs)
    except SplitError:
        return
    train = {s.user_id: list(s.items) for s in res.train}
    valid = {i.user_id: i.targets.tolist() for i in res.validation_instances}
    test = {i.user_id: i.targets.tolist() for i in res.test_instances}
    for seq in seqs:
        if len(seq) < 2:
            assert seq.user_id not in test
            continue
        rebuilt = train[seq.user_id] + valid.get(seq.user_id, []) + test[seq.user_id]
        assert rebuilt == list(seq.items)

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqsplit.baselines import (
    fit,
    load_model,
    make_model,
    recommend,
    recommend_batch,
    refit_on_train_plus_valid,
)
from seqsplit.core import to_user_sequences
from seqsplit.splitting import SplitSpec, split
from seqsplit.synthetic import random_log, sequential_log

from conftest import mkseq


def test_markov_counts_pairs():
    model = fit("markov", [mkseq("u", "ab"), mkseq("v", "ab")])
    assert model.transition_count("a", "b") == 2
    assert model.transition_count("b", "a") == 0


def test_markov_ranks_observed_successor_first():
    model = fit("markov", [mkseq("u", "ab"), mkseq("v", "cc"), mkseq("w", "cdc")])
    assert recommend(model, ["x", "a"], 3)[0] == "b"


def test_markov_unseen_last_item_falls_back_to_popularity():
    model = fit("markov", [mkseq("u", "ab"), mkseq("v", "bb")])
    assert recommend(model, ["zzz"], 2) == ["b", "a"]


def test_pop_ranking_and_ties():
    model = fit("pop", [mkseq("u", "aaab"), mkseq("v", "c")])
    assert recommend(model, ["x"], 3) == ["a", "b", "c"]


def test_pop_filter_seen_skips_to_next_popular():
    model = fit("pop", [mkseq("u", "aaabbc"), mkseq("v", "aabd")])
    assert recommend(model, ["a", "b"], 2, filter_seen=True) == ["c", "d"]
    assert recommend(model, ["a", "b"], 2) == ["a", "b"]


def test_pop_recency_window():
    day = 86400
    train = [mkseq("u", "aaab", [0, 1, 2, 10 * day]), mkseq("v", "bc", [10 * day, 10 * day + 1])]
    assert recommend(fit("pop", train, {"recency_days": 1}), ["x"], 2) == ["b", "c"]


def test_itemknn_hand_cosine():
    # users: {a,b}, {a,b,c}, {a}
    model = fit("itemknn", [mkseq("u", "ab"), mkseq("v", "abc"), mkseq("w", "a")])
    assert model.similarity("a", "b") == pytest.approx(2 / math.sqrt(3 * 2), abs=1e-12)
    assert model.similarity("a", "c") == pytest.approx(1 / math.sqrt(3 * 1), abs=1e-12)
    assert model.similarity("b", "c") == pytest.approx(1 / math.sqrt(2 * 1), abs=1e-12)
    assert recommend(model, ["c"], 2) == ["b", "a"]


def test_itemknn_symmetric_and_bounded(rng):
    seqs = to_user_sequences(random_log(rng, n_users=40, n_items=25))
    model = fit("itemknn", seqs)
    labels = list(model.items)
    for a in labels:
        for nb, s in model.neighbors[model.index[a]]:
            assert 0 <= s <= 1 + 1e-12
            assert model.similarity(a, labels[nb]) == pytest.approx(model.similarity(labels[nb], a), abs=1e-12)
        sims = [s for _, s in model.neighbors[model.index[a]]]
        assert sims == sorted(sims, reverse=True)


def test_itemknn_neighbor_cap(rng):
    seqs = to_user_sequences(random_log(rng, n_users=40, n_items=25))
    model = fit("itemknn", seqs, {"neighbors": 3})
    assert max(len(nb) for nb in model.neighbors) <= 3


def test_unknown_params_and_kinds():
    with pytest.raises(ValueError):
        make_model("pop", window=2)
    with pytest.raises(ValueError):
        make_model("sasrec")
    with pytest.raises(ValueError):
        fit("pop", [])


@pytest.mark.parametrize("kind,params", [("pop", {}), ("markov", {"window": 3}), ("itemknn", {"neighbors": 5, "window": 2})])
def test_recommend_contract(kind, params, rng):
    seqs = to_user_sequences(sequential_log(rng, n_users=60, n_items=30))
    model = fit(kind, seqs, params)
    catalog = len(model.items)
    for seq in seqs[:20]:
        prefix = list(seq.items[:5])
        for k in (1, 10, catalog + 5):
            out = recommend(model, prefix, k)
            assert len(out) == min(k, catalog)
            assert len(set(out)) == len(out)
            assert out == recommend(model, prefix, k)
            filtered = recommend(model, prefix, k, filter_seen=True)
            assert not set(filtered) & set(prefix)
            assert len(filtered) == min(k, catalog - len(set(prefix) & set(model.index)))


@pytest.mark.parametrize("kind", ["pop", "markov", "itemknn"])
def test_save_load_roundtrip(kind, tmp_path, rng):
    seqs = to_user_sequences(sequential_log(rng, n_users=40))
    model = fit(kind, seqs)
    model.save(tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    for seq in seqs[:10]:
        assert recommend(back, seq.items[:4], 20) == recommend(model, seq.items[:4], 20)
    assert back.to_dict() == model.to_dict()


def test_batch_is_independent_of_threads(rng):
    seqs = to_user_sequences(sequential_log(rng, n_users=80))
    res = split(seqs, SplitSpec(target="successive"))
    model = fit("itemknn", res.train)
    one = recommend_batch(model, res.test_instances, 20, threads=1)
    four = recommend_batch(model, res.test_instances, 20, threads=4)
    assert one == four
    assert list(one) == sorted(one)


def test_refit_gt_uses_all_pre_cutoff_events(rng):
    seqs = to_user_sequences(random_log(rng, n_users=60, max_len=30))
    res = split(seqs, SplitSpec(validation="gt"))
    model = refit_on_train_plus_valid("pop", res)
    pre = sum(int((s.timestamps <= res.t_test).sum()) for s in seqs if (s.timestamps <= res.t_test).sum() >= 2)
    assert model.fit_stats["events"] == pre
    assert model.fit_stats["events"] > sum(len(s) for s in res.train)


def test_refit_ub_restores_users():
    seqs = [mkseq(f"u{k:02d}", "abcdef", [1, 2, 3, 4, 5, 100]) for k in range(30)]
    res = split(seqs, SplitSpec(t_test=50, validation="ub", ub_user_count=10))
    assert len(res.train) == 20
    model = refit_on_train_plus_valid("pop", res)
    assert model.fit_stats["sequences"] == 30


def test_refit_markov_adds_validation_pairs():
    seqs = [mkseq("u", "abcd", [1, 2, 3, 9]), mkseq("v", "abc", [1, 2, 3])]
    res = split(seqs, SplitSpec(t_test=5, validation="lti"))
    base = fit("markov", res.train)
    refit = refit_on_train_plus_valid("markov", res)
    # LTI held out c for both users, i.e. one b->c pair each
    assert base.transition_count("a", "b") == 2
    assert refit.transition_count("a", "b") == 2
    assert "c" not in base.index
    assert refit.transition_count("b", "c") == 2
    assert int(refit.transitions.sum()) == int(base.transitions.sum()) + 2


def test_models_never_see_future(rng):
    seqs = to_user_sequences(random_log(rng, n_users=50, max_len=30))
    res = split(seqs, SplitSpec())
    model = fit("markov", res.train)
    assert model.fit_stats["events"] == sum(len(s) for s in res.train)
    assert all(int(s.timestamps.max()) <= res.t_val for s in res.train)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(st.sampled_from("abcdefg"), min_size=1, max_size=8), min_size=1, max_size=8))
def test_markov_counts_equal_adjacent_pairs(raw):
    seqs = [mkseq(f"u{k}", items) for k, items in enumerate(raw)]
    model = fit("markov", seqs)
    pairs = {}
    for items in raw:
        for a, b in zip(items, items[1:]):
            pairs[a, b] = pairs.get((a, b), 0) + 1
    for a in model.index:
        for b in model.index:
            assert model.transition_count(a, b) == pairs.get((a, b), 0)
    assert int(model.transitions.sum()) == sum(pairs.values())

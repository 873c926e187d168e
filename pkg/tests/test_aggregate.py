from collections import Counter

import numpy as np
from hypothesis import given, settings, strategies as st

from sessrank.aggregate import (
    Key,
    KeyKind,
    format_link_stats,
    format_user_stats,
    map_shard,
    read_stats,
    reduce,
    run_aggregation,
    shard,
    write_stats,
)
from sessrank.session import BAIDU, BING, SOUGOU

from conftest import make_session

TEN = tuple(f"L{i}" for i in range(10))


def test_map_empty_shard():
    assert map_shard([]) == []


def test_map_hand_count():
    pairs = map_shard([make_session(["S", "C:L4"], shown=TEN)])
    kinds = Counter(k.kind for k, _ in pairs)
    assert kinds == {KeyKind.LINK_IMPRESSION: 10, KeyKind.LINK_CLICK: 1, KeyKind.USER_ENGINE_USE: 1}
    assert (Key(KeyKind.LINK_CLICK, "L4"), 1) in pairs
    assert (Key(KeyKind.USER_ENGINE_USE, "u1|Baidu"), 1) in pairs


def test_duplicated_session_doubles_counts():
    s = make_session(["S", "C:L2"], shown=TEN)
    once, _ = run_aggregation([s])
    twice, users = run_aggregation([s, s])
    for link, st_ in once.items():
        assert twice[link].impressions == 2 * st_.impressions
        assert twice[link].clicks == 2 * st_.clicks
    assert users["u1"].counts == {BAIDU: 2}


def test_invalid_sessions_are_skipped():
    tally = Counter()
    bad = make_session(["S", "C:nowhere"])
    good = make_session(["S"], sid="g")
    assert len(map_shard([bad, good], tally)) == 3 + 1
    assert tally["skipped"] == 1


def test_reduce():
    assert reduce(Key(KeyKind.LINK_CLICK, "x"), []) == 0
    assert reduce(Key(KeyKind.LINK_CLICK, "x"), [1, 1, 1]) == 3


@given(st.lists(st.integers(0, 50)), st.data())
def test_reduce_split_associative(values, data):
    cut = data.draw(st.integers(0, len(values)))
    k = Key(KeyKind.LINK_IMPRESSION, "a")
    assert reduce(k, [reduce(k, values[:cut]), reduce(k, values[cut:])]) == reduce(k, values)


def test_shards_are_contiguous_partition():
    items = list(range(11))
    parts = shard(items, 3)
    assert [x for p in parts for x in p] == items
    assert [len(p) for p in parts] == [3, 4, 4]


def test_shard_and_permutation_invariance(small_corpus):
    base = run_aggregation(small_corpus.sessions, 1)
    text = format_link_stats(base[0]) + format_user_stats(base[1])
    for n in (2, 3, 8, 50):
        out = run_aggregation(small_corpus.sessions, n)
        assert format_link_stats(out[0]) + format_user_stats(out[1]) == text
    perm = np.random.default_rng(1).permutation(len(small_corpus.sessions))
    shuffled = run_aggregation([small_corpus.sessions[i] for i in perm], 3)
    assert format_link_stats(shuffled[0]) + format_user_stats(shuffled[1]) == text
    threaded = run_aggregation(small_corpus.sessions, 4, workers=4)
    assert threaded == base


def test_conservation(small_corpus):
    link_stats, _ = run_aggregation(small_corpus.sessions, 2)
    assert sum(s.impressions for s in link_stats.values()) == sum(len(s.shown_links) for s in small_corpus.sessions)
    assert sum(s.clicks for s in link_stats.values()) == sum(len(s.clicks) for s in small_corpus.sessions)
    for s in link_stats.values():
        assert 0 <= s.clicks <= s.impressions
        assert 0.0 <= s.ctr <= 1.0


def test_zero_clicks_zero_ctr():
    sessions = [make_session(["S"], sid=f"s{i}") for i in range(3)]
    link_stats, _ = run_aggregation(sessions, 2)
    assert all(s.ctr == 0.0 for s in link_stats.values())


def test_user_frequencies():
    sessions = [
        make_session(["S"], engine=BAIDU, sid="a"),
        make_session(["S"], engine=BAIDU, sid="b"),
        make_session(["S"], engine=BING, sid="c"),
    ]
    _, users = run_aggregation(sessions)
    st_ = users["u1"]
    assert st_.total == 3
    assert st_.freq(BAIDU) == 2 / 3 and st_.freq(BING) == 1 / 3 and st_.freq(SOUGOU) == 0.0
    assert abs(sum(st_.frequencies.values()) - 1.0) < 1e-9


def test_default_engine_use_totals(default_corpus):
    _, users = run_aggregation(default_corpus.sessions, 4)
    assert sum(u.counts.get(BAIDU, 0) for u in users.values()) == 24 + 68 + 108 + 100


def test_stats_file_round_trip(tmp_path, small_corpus):
    link_stats, user_stats = run_aggregation(small_corpus.sessions)
    write_stats(tmp_path, link_stats, user_stats)
    assert read_stats(tmp_path) == (link_stats, user_stats)
    assert (tmp_path / "link_stats.tsv").read_text().splitlines()[0] == "link_id\timpressions\tclicks\tctr"


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2), st.sampled_from(TEN[:4]), st.booleans()), max_size=25), st.integers(1, 9))
def test_random_logs_shard_invariant(spec, n_shards):
    sessions = []
    for i, (n_extra, link, clicked) in enumerate(spec):
        kinds = ["S"] * (1 + n_extra) + ([f"C:{link}"] if clicked else [])
        sessions.append(make_session(kinds, shown=TEN[:4], sid=f"s{i}", user=f"u{i % 3}"))
    assert run_aggregation(sessions, n_shards) == run_aggregation(sessions[::-1], 1)

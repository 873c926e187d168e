import filecmp

import numpy as np
import pytest

from sessrank.corpus import (
    MAX_PASSES,
    PUBLISHED_QUOTAS,
    GenConfig,
    attempt_stream,
    draw_user,
    generate_corpus,
    label_counts,
    mean_relevance_clicked_vs_unclicked,
    parse_session_id,
    read_corpus,
    session_id_for,
    simulate_attempt,
    simulate_session,
    write_corpus,
)
from sessrank.errors import ConfigError, ValidationError
from sessrank.session import BAIDU, BING, SOUGOU, ActionKind, EngineId, SessionLabel, label_session, validate_session


def test_default_quotas_exact(default_corpus):
    counts = label_counts(default_corpus.sessions)
    assert counts[BAIDU] == [24, 68, 108, 100]
    assert counts[SOUGOU] == [54, 82, 64, 100]
    assert counts[BING] == [33, 88, 79, 100]
    assert {e: tuple(c) for e, c in counts.items()} == PUBLISHED_QUOTAS


def test_every_generated_session_is_valid(default_corpus):
    assert all(validate_session(s) == [] for s in default_corpus.sessions)


def test_zero_quotas_give_empty_corpus():
    c = generate_corpus(GenConfig(quotas={BAIDU: (0, 0, 0, 0), BING: (0, 0, 0, 0)}))
    assert c.sessions == []


def test_unit_quotas_one_engine():
    c = generate_corpus(GenConfig(quotas={SOUGOU: (1, 1, 1, 1)}))
    assert len(c.sessions) == 4
    assert sorted(label_session(s) for s in c.sessions) == list(SessionLabel)


def test_other_engine_supported():
    other = EngineId("Yandex")
    c = generate_corpus(GenConfig(quotas={other: (2, 1, 1, 1)}))
    assert label_counts(c.sessions) == {other: [2, 1, 1, 1]}


def test_unsatisfiable_quota():
    with pytest.raises(ConfigError, match="catalog_size"):
        generate_corpus(GenConfig(catalog_size=0))
    with pytest.raises(ConfigError, match="not reachable"):
        generate_corpus(GenConfig(quotas={BAIDU: (50, 0, 0, 0)}, max_attempts=20))


def test_invalid_configs():
    with pytest.raises(ConfigError):
        GenConfig(quotas={BAIDU: (1, -1, 0, 0)}).validate()
    with pytest.raises(ConfigError):
        GenConfig(position_decay=0.0).validate()
    with pytest.raises(ConfigError):
        GenConfig(catalog_size=5, list_length=10).validate()


def test_serialized_corpus_deterministic(tmp_path, small_cfg):
    write_corpus(tmp_path / "a", generate_corpus(small_cfg))
    write_corpus(tmp_path / "b", generate_corpus(small_cfg))
    names = ["sessions.jsonl", "catalog.jsonl", "users.jsonl", "gen.cfg"]
    match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", names, shallow=False)
    assert match == names and not mismatch and not errors


def test_seed_changes_output(small_cfg):
    a = generate_corpus(small_cfg)
    b_cfg = GenConfig(**{**small_cfg.__dict__, "seed": small_cfg.seed + 1})
    b = generate_corpus(b_cfg)
    assert [s.to_dict() for s in a.sessions] != [s.to_dict() for s in b.sessions]


def test_corpus_round_trip(tmp_path, small_corpus):
    write_corpus(tmp_path, small_corpus)
    back = read_corpus(tmp_path)
    assert back.sessions == small_corpus.sessions
    assert back.users == small_corpus.users
    assert back.catalog.links == small_corpus.catalog.links
    assert back.config.to_flat() == small_corpus.config.to_flat()


def test_read_corpus_missing_file(tmp_path):
    with pytest.raises(ValidationError, match="lacks"):
        read_corpus(tmp_path)


def test_profile_and_catalog_invariants(default_corpus):
    for u in default_corpus.users:
        assert abs(sum(u.engine_freq.values()) - 1.0) < 1e-9
        assert all(np.isfinite(u.pref))
        assert len(u.settings_flags) == default_corpus.config.settings_count
    for link in default_corpus.catalog.links:
        assert 0.0 <= link.publisher_popularity <= 1.0
        assert 0.0 <= link.base_ctr <= 1.0
        assert len(link.topic) == default_corpus.config.dimension


def test_relevance_one_gives_once(small_corpus):
    cfg = GenConfig(position_decay=1.0)
    user = small_corpus.users[0]
    s = simulate_session(
        user, BAIDU, small_corpus.catalog, np.random.default_rng(0), cfg, relevance_fn=lambda u, l: 1.0
    )
    assert [e.kind for e in s.events] == [ActionKind.SEARCH, ActionKind.CLICK_LINK]
    assert s.clicks == [s.shown_links[0]]
    assert label_session(s) is SessionLabel.ONCE


def test_relevance_zero_gives_futile(small_corpus):
    user = small_corpus.users[0]
    s = simulate_session(
        user, BAIDU, small_corpus.catalog, np.random.default_rng(0), relevance_fn=lambda u, l: 0.0
    )
    assert label_session(s) is SessionLabel.FUTILE
    assert len(s.events) == MAX_PASSES


def test_fixed_seed_same_session(small_corpus):
    user = small_corpus.users[3]
    a = simulate_session(user, BING, small_corpus.catalog, np.random.default_rng(9))
    b = simulate_session(user, BING, small_corpus.catalog, np.random.default_rng(9))
    assert a == b


def test_attempt_reproducible(small_corpus):
    cfg = small_corpus.config
    s = small_corpus.sessions[0]
    engine, attempt = parse_session_id(s.session_id)
    assert simulate_attempt(cfg, small_corpus.users, small_corpus.catalog, engine, attempt) == s


def test_session_id_round_trip():
    assert parse_session_id(session_id_for(SOUGOU, 42)) == (SOUGOU, 42)
    with pytest.raises(ValidationError):
        parse_session_id("nonsense")


def test_draw_user_follows_engine_freq(default_corpus):
    users = default_corpus.users
    draws = [draw_user(attempt_stream(default_corpus.config, BAIDU, a), users, BAIDU).user_id for a in range(3000)]
    top = max(users, key=lambda u: u.engine_freq[BAIDU])
    low = min(users, key=lambda u: u.engine_freq[BAIDU])
    assert draws.count(top.user_id) > draws.count(low.user_id)


def test_clicked_links_more_relevant(default_corpus):
    clicked, unclicked = mean_relevance_clicked_vs_unclicked(default_corpus)
    assert clicked > unclicked

"""Synthetic users, link catalog and sessions with exact per-engine label quotas.

Behavioral model
----------------
Each session attempt draws a user (weighted by how often that user uses the
engine) and then runs up to ``MAX_PASSES`` result passes. In every pass the
engine retrieves ``list_length`` candidate links and orders them by its own
noisy quality score. The user scans top-down and clicks the link at 1-based
rank ``r`` with probability ``position_decay**(r-1) * relevance``, where
``relevance = logistic(pref . topic)``. Without a click the user either
edits the query or issues a new search and tries again.

Every random number an attempt needs is drawn up front, in a fixed layout,
from a PCG64 generator keyed by ``(seed, engine, attempt)`` through
``numpy.random.SeedSequence``. Reordering a result list therefore never
shifts the stream, which is what makes behavioral replay over a re-ranked
list well defined.

Quotas are met by sampling attempts and dropping each outcome into its
(engine, label) bucket until every bucket is full; overflow is discarded.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import flatcfg
from .errors import ConfigError, ValidationError
from .session import (
    BAIDU,
    BING,
    SOUGOU,
    ActionEvent,
    EngineId,
    SessionLabel,
    SessionRecord,
    label_session,
    sort_engines,
    read_sessions,
    write_sessions,
)

MAX_PASSES = 4
_T0_BASE = 1_600_000_000_000
_SCAN_MS = 1_500

# (once, twice, multiform, futile)
PUBLISHED_QUOTAS = {
    BAIDU: (24, 68, 108, 100),
    SOUGOU: (54, 82, 64, 100),
    BING: (33, 88, 79, 100),
}
DEFAULT_ENGINE_SKILL = {BAIDU: 0.0, SOUGOU: 0.35, BING: 0.15}


@dataclass(frozen=True)
class UserProfile:
    user_id: str
    engine_freq: Mapping[EngineId, float]
    pref: tuple[float, ...]
    settings_flags: tuple[bool, ...]

    @property
    def suggestions_enabled(self) -> bool:
        """First settings flag: the user has query suggestions switched on."""
        return bool(self.settings_flags) and self.settings_flags[0]

    def to_dict(self) -> dict:
        return {
            "user_id": self.user_id,
            "engine_freq": {e.name: f for e, f in self.engine_freq.items()},
            "settings_flags": list(self.settings_flags),
            "pref": list(self.pref),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UserProfile":
        return cls(
            user_id=str(d["user_id"]),
            engine_freq={EngineId(k): float(v) for k, v in d["engine_freq"].items()},
            pref=tuple(float(x) for x in d["pref"]),
            settings_flags=tuple(bool(x) for x in d["settings_flags"]),
        )


@dataclass(frozen=True)
class LinkEntry:
    link_id: str
    publisher_id: str
    publisher_popularity: float
    has_image: bool
    has_audio: bool
    has_external_links: bool
    topic: tuple[float, ...]
    base_ctr: float

    @property
    def quality(self) -> float:
        """Shared (user-independent) appeal; stored as the first topic coordinate."""
        return self.topic[0]

    def to_dict(self) -> dict:
        return {
            "link_id": self.link_id,
            "publisher_id": self.publisher_id,
            "popularity": self.publisher_popularity,
            "flags": {
                "has_image": self.has_image,
                "has_audio": self.has_audio,
                "has_external_links": self.has_external_links,
            },
            "topic": list(self.topic),
            "base_ctr": self.base_ctr,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LinkEntry":
        flags = d["flags"]
        return cls(
            link_id=str(d["link_id"]),
            publisher_id=str(d["publisher_id"]),
            publisher_popularity=float(d["popularity"]),
            has_image=bool(flags["has_image"]),
            has_audio=bool(flags["has_audio"]),
            has_external_links=bool(flags["has_external_links"]),
            topic=tuple(float(x) for x in d["topic"]),
            base_ctr=float(d["base_ctr"]),
        )


class Catalog:
    """Ordered link catalog with dense arrays for fast relevance lookups."""

    def __init__(self, links: Sequence[LinkEntry]):
        self.links = list(links)
        self.index = {link.link_id: i for i, link in enumerate(self.links)}
        if len(self.index) != len(self.links):
            raise ValidationError("duplicate link_id in catalog")
        dim = len(self.links[0].topic) if self.links else 0
        self.topics = np.array([link.topic for link in self.links], dtype=float).reshape(-1, dim)
        self.ids = [link.link_id for link in self.links]

    def __len__(self) -> int:
        return len(self.links)

    def __getitem__(self, link_id: str) -> LinkEntry:
        try:
            return self.links[self.index[link_id]]
        except KeyError:
            raise ValidationError(f"link {link_id!r} not in catalog") from None

    def __contains__(self, link_id: str) -> bool:
        return link_id in self.index


@dataclass
class GenConfig:
    seed: int = 2020
    dimension: int = 8
    quotas: dict[EngineId, tuple[int, int, int, int]] = field(
        default_factory=lambda: dict(PUBLISHED_QUOTAS)
    )
    catalog_size: int = 500
    user_count: int = 100
    list_length: int = 10
    position_decay: float = 0.7
    relevance_threshold: float = 0.5
    publisher_count: int = 50
    settings_count: int = 2
    engine_skill: dict[EngineId, float] = field(default_factory=lambda: dict(DEFAULT_ENGINE_SKILL))
    default_skill: float = 0.3
    edit_prob: float = 0.1
    suggest_edit_prob: float = 0.3
    quality_mean: float = -3.5
    quality_noise: float = 0.4
    pref_scale: float = 0.3
    max_attempts: int = 200_000

    def validate(self) -> None:
        if self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        if self.dimension < 1:
            raise ConfigError("dimension must be >= 1")
        for engine, quota in self.quotas.items():
            if len(quota) != 4 or any(q < 0 for q in quota):
                raise ConfigError(f"quota for {engine}: need four non-negative counts, got {quota}")
        if not 0.0 < self.position_decay < 1.0 + 1e-12:
            raise ConfigError("position_decay must lie in (0, 1]")
        if self.list_length < 1:
            raise ConfigError("list_length must be >= 1")
        if not 0.0 <= self.edit_prob <= 1.0 or not 0.0 <= self.suggest_edit_prob <= 1.0:
            raise ConfigError("edit probabilities must lie in [0, 1]")
        wants_sessions = any(sum(q) > 0 for q in self.quotas.values())
        if wants_sessions:
            if self.catalog_size == 0:
                raise ConfigError("positive quota with catalog_size = 0 is unsatisfiable")
            if self.user_count == 0:
                raise ConfigError("positive quota with user_count = 0 is unsatisfiable")
            if self.publisher_count < 1:
                raise ConfigError("publisher_count must be >= 1")
        if self.catalog_size and self.catalog_size < self.list_length:
            raise ConfigError(
                f"catalog_size {self.catalog_size} smaller than list_length {self.list_length}"
            )

    @property
    def engines(self) -> list[EngineId]:
        return sort_engines(self.quotas)

    def skill(self, engine: EngineId) -> float:
        return self.engine_skill.get(engine, self.default_skill)

    def to_flat(self) -> dict[str, object]:
        out: dict[str, object] = {}
        for key in _SCALAR_KEYS:
            out[key] = getattr(self, key)
        for engine in self.engines:
            out[f"quota.{engine.name}"] = self.quotas[engine]
        for engine in sort_engines(self.engine_skill):
            out[f"engine_skill.{engine.name}"] = self.engine_skill[engine]
        return out

    @classmethod
    def from_flat(cls, values: Mapping[str, str], base: "GenConfig | None" = None) -> "GenConfig":
        """Build a config from flat keys, on top of ``base`` (defaults if omitted).

        Any ``quota.<Engine>`` key replaces the whole quota table, so the set
        of engines is exactly the set named in the file.
        """
        cfg = copy.deepcopy(base) if base is not None else cls()
        quotas: dict[EngineId, tuple[int, int, int, int]] = {}
        for key, text in values.items():
            if key.startswith("quota."):
                parts = [p.strip() for p in text.split(",")]
                if len(parts) != 4:
                    raise ConfigError(f"{key}: expected once,twice,multiform,futile counts")
                quotas[EngineId(key[6:])] = tuple(flatcfg.to_int(key, p) for p in parts)
            elif key.startswith("engine_skill."):
                cfg.engine_skill[EngineId(key[13:])] = flatcfg.to_float(key, text)
            elif key in _SCALAR_KEYS:
                setattr(cfg, key, flatcfg.coerce_like(key, text, getattr(cfg, key)))
            else:
                raise ConfigError(f"unknown generator key {key!r}")
        if quotas:
            cfg.quotas = quotas
        return cfg


_SCALAR_KEYS = (
    "seed",
    "dimension",
    "catalog_size",
    "user_count",
    "list_length",
    "position_decay",
    "relevance_threshold",
    "publisher_count",
    "settings_count",
    "default_skill",
    "edit_prob",
    "suggest_edit_prob",
    "quality_mean",
    "quality_noise",
    "pref_scale",
    "max_attempts",
)
GEN_KEYS = _SCALAR_KEYS


@dataclass
class Corpus:
    config: GenConfig
    users: list[UserProfile]
    catalog: Catalog
    sessions: list[SessionRecord]

    def __post_init__(self):
        self.user_index = {u.user_id: u for u in self.users}

    def user(self, user_id: str) -> UserProfile:
        try:
            return self.user_index[user_id]
        except KeyError:
            raise ValidationError(f"user {user_id!r} not in user table") from None


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def attempt_stream(cfg: GenConfig, engine: EngineId, attempt: int) -> np.random.Generator:
    return _stream(cfg.seed, 3, engine.stream_key, attempt)


def session_id_for(engine: EngineId, attempt: int) -> str:
    return f"{engine.name}-{attempt:07d}"


def parse_session_id(session_id: str) -> tuple[EngineId, int]:
    name, sep, num = session_id.rpartition("-")
    if not sep or not num.isdigit():
        raise ValidationError(f"session id {session_id!r} does not encode an attempt number")
    return EngineId(name), int(num)


def _logistic(x):
    return 1.0 / (1.0 + np.exp(-x))


def generate_users(cfg: GenConfig) -> list[UserProfile]:
    rng = _stream(cfg.seed, 1)
    engines = cfg.engines
    users = []
    for i in range(cfg.user_count):
        if engines:
            w = rng.dirichlet(np.full(len(engines), 2.0))
            w = w / w.sum()
            freq = {e: float(x) for e, x in zip(engines, w)}
        else:
            freq = {}
        sensitivity = max(0.2, 1.0 + 0.25 * rng.standard_normal())
        personal = cfg.pref_scale * rng.standard_normal(cfg.dimension - 1)
        flags = rng.random(cfg.settings_count) < 0.5
        users.append(
            UserProfile(
                user_id=f"U{i:04d}",
                engine_freq=freq,
                pref=(float(sensitivity), *map(float, personal)),
                settings_flags=tuple(bool(f) for f in flags),
            )
        )
    return users


def generate_catalog(cfg: GenConfig) -> Catalog:
    rng = _stream(cfg.seed, 2)
    n_pub = max(cfg.publisher_count, 1)
    reputation = rng.standard_normal(n_pub)
    popularity = _logistic(1.5 * reputation + 0.3 * rng.standard_normal(n_pub))
    links = []
    for i in range(cfg.catalog_size):
        pub = int(rng.integers(n_pub))
        img, audio, ext = (rng.random(3) < (0.45, 0.2, 0.6)).tolist()
        quality = (
            cfg.quality_mean
            + 0.8 * reputation[pub]
            + 0.9 * img
            + 0.6 * audio
            + 0.3 * ext
            + cfg.quality_noise * rng.standard_normal()
        )
        topic = (float(quality), *map(float, rng.standard_normal(cfg.dimension - 1)))
        links.append(
            LinkEntry(
                link_id=f"L{i:05d}",
                publisher_id=f"P{pub:03d}",
                publisher_popularity=float(popularity[pub]),
                has_image=bool(img),
                has_audio=bool(audio),
                has_external_links=bool(ext),
                topic=topic,
                base_ctr=float(_logistic(quality)),
            )
        )
    return Catalog(links)


def relevance(user: UserProfile, link: LinkEntry) -> float:
    return float(_logistic(np.dot(user.pref, link.topic)))


def draw_user(rng: np.random.Generator, users: Sequence[UserProfile], engine: EngineId) -> UserProfile:
    weights = np.array([u.engine_freq.get(engine, 0.0) for u in users], dtype=float)
    total = weights.sum()
    if total <= 0:
        weights = np.ones(len(users))
        total = float(len(users))
    cum = np.cumsum(weights)
    idx = int(np.searchsorted(cum, rng.random() * total, side="right"))
    return users[min(idx, len(users) - 1)]


# ranker(user, engine, engine-ordered link ids) -> reordered link ids
Ranker = Callable[[UserProfile, EngineId, list[str]], Sequence[str]]
RelevanceFn = Callable[[UserProfile, LinkEntry], float]


@dataclass
class _PassDraws:
    candidates: np.ndarray
    noise: np.ndarray
    click_u: np.ndarray
    next_u: float
    gap_ms: int


def _draw_passes(rng: np.random.Generator, n_links: int, list_length: int) -> tuple[int, list[_PassDraws]]:
    t0 = _T0_BASE + int(rng.integers(0, 30 * 86_400_000))
    passes = []
    for _ in range(MAX_PASSES):
        passes.append(
            _PassDraws(
                candidates=rng.choice(n_links, size=list_length, replace=False),
                noise=rng.standard_normal(list_length),
                click_u=rng.random(list_length),
                next_u=float(rng.random()),
                gap_ms=int(rng.integers(5_000, 60_000)),
            )
        )
    return t0, passes


def engine_order(cfg: GenConfig, engine: EngineId, catalog: Catalog, draws: _PassDraws) -> list[str]:
    quality = catalog.topics[draws.candidates, 0]
    score = cfg.skill(engine) * quality + draws.noise
    order = np.argsort(-score, kind="stable")
    return [catalog.ids[j] for j in draws.candidates[order]]


def simulate_session(
    user: UserProfile,
    engine: EngineId,
    catalog: Catalog,
    rng: np.random.Generator,
    cfg: GenConfig | None = None,
    *,
    session_id: str = "session",
    ranker: Ranker | None = None,
    relevance_fn: RelevanceFn | None = None,
) -> SessionRecord:
    """Simulate one session of ``user`` on ``engine``.

    ``ranker`` reorders each pass's result list before the user scans it;
    ``relevance_fn`` overrides the logistic relevance model (tests use it to
    pin relevance to 0 or 1).
    """
    cfg = cfg or GenConfig()
    if len(catalog) == 0:
        raise ConfigError("cannot simulate a session over an empty catalog")
    t, passes = _draw_passes(rng, len(catalog), min(cfg.list_length, len(catalog)))
    edit_p = cfg.suggest_edit_prob if user.suggestions_enabled else cfg.edit_prob
    pref = np.asarray(user.pref, dtype=float)

    events = [ActionEvent.search(t, f"{engine.name.lower()} {session_id}")]
    shown: list[str] = []
    for p, draws in enumerate(passes):
        shown = engine_order(cfg, engine, catalog, draws)
        if ranker is not None:
            reordered = list(ranker(user, engine, list(shown)))
            if sorted(reordered) != sorted(shown):
                raise ValidationError("ranker must return a permutation of its input")
            shown = reordered
        if relevance_fn is None:
            rows = [catalog.index[link_id] for link_id in shown]
            rel = _logistic(catalog.topics[rows] @ pref)
        else:
            rel = np.array([relevance_fn(user, catalog[link_id]) for link_id in shown])
        click_prob = cfg.position_decay ** np.arange(len(shown)) * rel
        hits = np.flatnonzero(draws.click_u < click_prob)
        if hits.size:
            r = int(hits[0])
            events.append(ActionEvent.click(t + _SCAN_MS * (r + 1), shown[r]))
            break
        if p == len(passes) - 1:
            break
        t += _SCAN_MS * len(shown) + draws.gap_ms
        last_query = events[-1].query_text
        if draws.next_u < edit_p:
            events.append(ActionEvent.edit(t, f"{last_query} +refine"))
        else:
            events.append(ActionEvent.search(t, f"{engine.name.lower()} {session_id} #{p + 2}"))
    return SessionRecord(session_id, user.user_id, engine, tuple(events), tuple(shown))


def simulate_attempt(
    cfg: GenConfig,
    users: Sequence[UserProfile],
    catalog: Catalog,
    engine: EngineId,
    attempt: int,
    ranker: Ranker | None = None,
) -> SessionRecord:
    rng = attempt_stream(cfg, engine, attempt)
    user = draw_user(rng, users, engine)
    return simulate_session(
        user, engine, catalog, rng, cfg, session_id=session_id_for(engine, attempt), ranker=ranker
    )


def generate_corpus(cfg: GenConfig) -> Corpus:
    cfg.validate()
    users = generate_users(cfg)
    catalog = generate_catalog(cfg)
    sessions: list[SessionRecord] = []
    for engine in cfg.engines:
        quota = cfg.quotas[engine]
        remaining = list(quota)
        if sum(remaining) == 0:
            continue
        kept = []
        attempt = 0
        while sum(remaining) > 0:
            if attempt >= cfg.max_attempts:
                missing = {SessionLabel(i).display: r for i, r in enumerate(remaining) if r}
                raise ConfigError(
                    f"{engine}: quotas not reachable within {cfg.max_attempts} attempts, "
                    f"still missing {missing}"
                )
            s = simulate_attempt(cfg, users, catalog, engine, attempt)
            label = label_session(s)
            if remaining[label] > 0:
                remaining[label] -= 1
                kept.append(s)
            attempt += 1
        sessions.extend(kept)
    return Corpus(cfg, users, catalog, sessions)


def is_relevant(cfg: GenConfig, user: UserProfile, link: LinkEntry) -> bool:
    return relevance(user, link) >= cfg.relevance_threshold


# ---------------------------------------------------------------- file I/O

SESSIONS_FILE = "sessions.jsonl"
CATALOG_FILE = "catalog.jsonl"
USERS_FILE = "users.jsonl"
GEN_CONFIG_FILE = "gen.cfg"


def _write_jsonl(path: Path, records) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False, separators=(",", ":")))
            fh.write("\n")


def _read_jsonl(path: Path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    out.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise ValidationError(f"{path}:{lineno}: invalid JSON ({exc})") from None
    return out


def write_catalog(path: str | Path, catalog: Catalog) -> None:
    _write_jsonl(Path(path), (link.to_dict() for link in catalog.links))


def read_catalog(path: str | Path) -> Catalog:
    return Catalog([LinkEntry.from_dict(d) for d in _read_jsonl(Path(path))])


def write_users(path: str | Path, users: Sequence[UserProfile]) -> None:
    _write_jsonl(Path(path), (u.to_dict() for u in users))


def read_users(path: str | Path) -> list[UserProfile]:
    return [UserProfile.from_dict(d) for d in _read_jsonl(Path(path))]


def write_corpus(out_dir: str | Path, corpus: Corpus) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_sessions(out / SESSIONS_FILE, corpus.sessions)
    write_catalog(out / CATALOG_FILE, corpus.catalog)
    write_users(out / USERS_FILE, corpus.users)
    (out / GEN_CONFIG_FILE).write_text(flatcfg.format_flat(corpus.config.to_flat()), encoding="utf-8")


def read_corpus(corpus_dir: str | Path, sessions: bool = True) -> Corpus:
    d = Path(corpus_dir)
    for name in (CATALOG_FILE, USERS_FILE, GEN_CONFIG_FILE):
        if not (d / name).exists():
            raise ValidationError(f"corpus directory {d} lacks {name}")
    cfg = GenConfig.from_flat(flatcfg.read_flat(d / GEN_CONFIG_FILE))
    return Corpus(
        config=cfg,
        users=read_users(d / USERS_FILE),
        catalog=read_catalog(d / CATALOG_FILE),
        sessions=read_sessions(d / SESSIONS_FILE) if sessions else [],
    )


def label_counts(sessions: Sequence[SessionRecord]) -> dict[EngineId, list[int]]:
    counts: dict[EngineId, list[int]] = {}
    for s in sessions:
        counts.setdefault(s.engine, [0] * 4)[label_session(s)] += 1
    return counts


def mean_relevance_clicked_vs_unclicked(corpus: Corpus) -> tuple[float, float]:
    """Mean relevance of clicked links vs shown-but-unclicked links."""
    clicked, unclicked = [], []
    for s in corpus.sessions:
        user = corpus.user(s.user_id)
        hit = set(s.clicks)
        for link_id in s.shown_links:
            (clicked if link_id in hit else unclicked).append(relevance(user, corpus.catalog[link_id]))
    return (
        float(np.mean(clicked)) if clicked else math.nan,
        float(np.mean(unclicked)) if unclicked else math.nan,
    )

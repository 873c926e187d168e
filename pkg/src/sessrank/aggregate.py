"""Shard-invariant map/reduce pass over session logs.

Sessions are split into contiguous shards, each shard is mapped to
``(key, 1)`` pairs, pairs are grouped by key and reduced by summation.
Summation is associative and commutative, so the final aggregates do not
depend on the number of shards or on the order of the input.
"""

from __future__ import annotations

import enum
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ValidationError
from .session import EngineId, SessionRecord, sort_engines, validate_session


class KeyKind(str, enum.Enum):
    LINK_IMPRESSION = "LinkImpression"
    LINK_CLICK = "LinkClick"
    USER_ENGINE_USE = "UserEngineUse"


@dataclass(frozen=True, order=True)
class Key:
    kind: KeyKind
    id: str


KeyValue = tuple[Key, int]


@dataclass(frozen=True)
class LinkStats:
    link_id: str
    impressions: int
    clicks: int

    @property
    def ctr(self) -> float:
        return self.clicks / max(self.impressions, 1)


@dataclass(frozen=True)
class UserStats:
    user_id: str
    counts: dict[EngineId, int] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def freq(self, engine: EngineId) -> float:
        total = self.total
        return self.counts.get(engine, 0) / total if total else 0.0

    @property
    def frequencies(self) -> dict[EngineId, float]:
        return {e: self.freq(e) for e in self.counts}


def user_key(user_id: str, engine: EngineId) -> str:
    return f"{user_id}|{engine.name}"


def map_shard(sessions: Iterable[SessionRecord], tally: Counter | None = None) -> list[KeyValue]:
    """Emit impression, click and engine-use pairs for every valid session.

    Invalid sessions are skipped; ``tally["skipped"]`` counts them.
    """
    out: list[KeyValue] = []
    for s in sessions:
        if validate_session(s):
            if tally is not None:
                tally["skipped"] += 1
            continue
        out.extend((Key(KeyKind.LINK_IMPRESSION, link), 1) for link in s.shown_links)
        out.extend((Key(KeyKind.LINK_CLICK, link), 1) for link in s.clicks)
        out.append((Key(KeyKind.USER_ENGINE_USE, user_key(s.user_id, s.engine)), 1))
    return out


def reduce(key: Key, values: Iterable[int]) -> int:
    return sum(values)


def shard(sessions: Sequence[SessionRecord], shard_count: int) -> list[Sequence[SessionRecord]]:
    if shard_count < 1:
        raise ValidationError("shard_count must be >= 1")
    n = len(sessions)
    bounds = [n * i // shard_count for i in range(shard_count + 1)]
    return [sessions[a:b] for a, b in zip(bounds, bounds[1:])]


def run_aggregation(
    sessions: Sequence[SessionRecord],
    shard_count: int = 1,
    tally: Counter | None = None,
    workers: int = 1,
) -> tuple[dict[str, LinkStats], dict[str, UserStats]]:
    shards = shard(list(sessions), shard_count)
    tallies = [Counter() for _ in shards]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            mapped = list(pool.map(map_shard, shards, tallies))
    else:
        mapped = [map_shard(sh, t) for sh, t in zip(shards, tallies)]
    if tally is not None:
        for t in tallies:
            tally.update(t)

    grouped: dict[Key, list[int]] = defaultdict(list)
    for pairs in mapped:
        for key, value in pairs:
            grouped[key].append(value)
    totals = {key: reduce(key, grouped[key]) for key in sorted(grouped)}

    impressions: dict[str, int] = {}
    clicks: dict[str, int] = {}
    use: dict[str, dict[EngineId, int]] = {}
    for key, value in totals.items():
        if key.kind is KeyKind.LINK_IMPRESSION:
            impressions[key.id] = value
        elif key.kind is KeyKind.LINK_CLICK:
            clicks[key.id] = value
        else:
            user_id, _, engine = key.id.rpartition("|")
            use.setdefault(user_id, {})[EngineId(engine)] = value
    link_stats = {
        link: LinkStats(link, impressions.get(link, 0), clicks.get(link, 0))
        for link in sorted(set(impressions) | set(clicks))
    }
    user_stats = {
        u: UserStats(u, {e: use[u][e] for e in sort_engines(use[u])}) for u in sorted(use)
    }
    return link_stats, user_stats


# ---------------------------------------------------------------- file I/O

LINK_STATS_FILE = "link_stats.tsv"
USER_STATS_FILE = "user_stats.tsv"


def format_link_stats(link_stats: dict[str, LinkStats]) -> str:
    lines = ["link_id\timpressions\tclicks\tctr"]
    for link in sorted(link_stats):
        st = link_stats[link]
        lines.append(f"{st.link_id}\t{st.impressions}\t{st.clicks}\t{st.ctr!r}")
    return "\n".join(lines) + "\n"


def format_user_stats(user_stats: dict[str, UserStats]) -> str:
    engines = sort_engines(e for st in user_stats.values() for e in st.counts)
    lines = ["\t".join(["user_id", *(e.name for e in engines)])]
    for u in sorted(user_stats):
        st = user_stats[u]
        lines.append("\t".join([u, *(str(st.counts.get(e, 0)) for e in engines)]))
    return "\n".join(lines) + "\n"


def write_stats(out_dir: str | Path, link_stats, user_stats) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / LINK_STATS_FILE).write_text(format_link_stats(link_stats), encoding="utf-8")
    (out / USER_STATS_FILE).write_text(format_user_stats(user_stats), encoding="utf-8")


def read_stats(stats_dir: str | Path) -> tuple[dict[str, LinkStats], dict[str, UserStats]]:
    d = Path(stats_dir)
    link_stats: dict[str, LinkStats] = {}
    with open(d / LINK_STATS_FILE, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header[:3] != ["link_id", "impressions", "clicks"]:
            raise ValidationError(f"{d / LINK_STATS_FILE}: unexpected header {header}")
        for line in fh:
            if line.strip():
                link, imp, clk, *_ = line.rstrip("\n").split("\t")
                link_stats[link] = LinkStats(link, int(imp), int(clk))
    user_stats: dict[str, UserStats] = {}
    with open(d / USER_STATS_FILE, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if not header or header[0] != "user_id":
            raise ValidationError(f"{d / USER_STATS_FILE}: unexpected header {header}")
        engines = [EngineId(name) for name in header[1:]]
        for line in fh:
            if line.strip():
                user, *counts = line.rstrip("\n").split("\t")
                user_stats[user] = UserStats(
                    user, {e: int(c) for e, c in zip(engines, counts) if int(c) > 0}
                )
    return link_stats, user_stats

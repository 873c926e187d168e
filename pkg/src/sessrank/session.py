"""Search sessions, action events and the four-way outcome label.

A session is one user's time-ordered interaction with one engine. Its label
depends only on how many searches and query edits preceded a click:

* ``ONCE``      one search, no edits, a click
* ``TWICE``     two searches, no edits, a click
* ``MULTIFORM`` more than two searches or any edit, and a click
* ``FUTILE``    no click at all

The session log format is newline-delimited JSON, one session per line.
"""

from __future__ import annotations

import enum
import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .errors import ValidationError


@dataclass(frozen=True, order=False)
class EngineId:
    """A search engine. The three named engines come first in reporting order."""

    name: str

    def __post_init__(self):
        if not isinstance(self.name, str) or not self.name:
            raise ValidationError("engine name must be a non-empty string")

    @property
    def is_named(self) -> bool:
        return self.name in NAMED_ENGINE_NAMES

    @property
    def sort_key(self) -> tuple[int, str]:
        if self.name in NAMED_ENGINE_NAMES:
            return (NAMED_ENGINE_NAMES.index(self.name), "")
        return (len(NAMED_ENGINE_NAMES), self.name)

    @property
    def stream_key(self) -> int:
        """Stable integer used to derive per-engine random streams."""
        return zlib.crc32(self.name.encode("utf-8"))

    def __lt__(self, other: "EngineId") -> bool:
        return self.sort_key < other.sort_key

    def __str__(self) -> str:
        return self.name


NAMED_ENGINE_NAMES = ("Baidu", "Sougou", "Bing")
BAIDU = EngineId("Baidu")
SOUGOU = EngineId("Sougou")
BING = EngineId("Bing")
NAMED_ENGINES = (BAIDU, SOUGOU, BING)


def sort_engines(engines: Iterable[EngineId]) -> list[EngineId]:
    return sorted(set(engines), key=lambda e: e.sort_key)


class ActionKind(str, enum.Enum):
    SEARCH = "Search"
    EDIT_QUERY = "EditQuery"
    CLICK_LINK = "ClickLink"


@dataclass(frozen=True)
class ActionEvent:
    kind: ActionKind
    timestamp: int
    query_text: str | None = None
    link_id: str | None = None

    @classmethod
    def search(cls, timestamp: int, query_text: str) -> "ActionEvent":
        return cls(ActionKind.SEARCH, timestamp, query_text=query_text)

    @classmethod
    def edit(cls, timestamp: int, query_text: str) -> "ActionEvent":
        return cls(ActionKind.EDIT_QUERY, timestamp, query_text=query_text)

    @classmethod
    def click(cls, timestamp: int, link_id: str) -> "ActionEvent":
        return cls(ActionKind.CLICK_LINK, timestamp, link_id=link_id)

    def to_dict(self) -> dict:
        d = {"kind": self.kind.value, "timestamp": self.timestamp}
        if self.query_text is not None:
            d["query_text"] = self.query_text
        if self.link_id is not None:
            d["link_id"] = self.link_id
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ActionEvent":
        try:
            kind = ActionKind(d["kind"])
            timestamp = d["timestamp"]
        except (KeyError, ValueError) as exc:
            raise ValidationError(f"bad event record {d!r}: {exc}") from None
        if not isinstance(timestamp, int) or isinstance(timestamp, bool):
            raise ValidationError(f"event timestamp must be an integer, got {timestamp!r}")
        return cls(kind, timestamp, query_text=d.get("query_text"), link_id=d.get("link_id"))


class SessionLabel(enum.IntEnum):
    """Outcome label; the integer value doubles as the class index."""

    ONCE = 0
    TWICE = 1
    MULTIFORM = 2
    FUTILE = 3

    @property
    def display(self) -> str:
        return _LABEL_NAMES[self]

    @property
    def ordinal(self) -> int:
        """Ordinal code used by the linear-regression feature summary (1..4)."""
        return int(self) + 1

    @classmethod
    def parse(cls, text: str) -> "SessionLabel":
        for label, name in _LABEL_NAMES.items():
            if text == name:
                return label
        raise ValidationError(f"unknown session label {text!r}")


_LABEL_NAMES = {
    SessionLabel.ONCE: "OnceSearch",
    SessionLabel.TWICE: "TwiceSearch",
    SessionLabel.MULTIFORM: "MultiformSearch",
    SessionLabel.FUTILE: "FutileSearch",
}
N_CLASSES = len(SessionLabel)


@dataclass(frozen=True)
class SessionRecord:
    session_id: str
    user_id: str
    engine: EngineId
    events: tuple[ActionEvent, ...]
    shown_links: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        object.__setattr__(self, "shown_links", tuple(self.shown_links))

    def count(self, kind: ActionKind) -> int:
        return sum(1 for ev in self.events if ev.kind is kind)

    @property
    def clicks(self) -> list[str]:
        return [ev.link_id for ev in self.events if ev.kind is ActionKind.CLICK_LINK]

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "user_id": self.user_id,
            "engine": self.engine.name,
            "events": [ev.to_dict() for ev in self.events],
            "shown_links": list(self.shown_links),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SessionRecord":
        expected = {"session_id", "user_id", "engine", "events", "shown_links"}
        if set(d) != expected:
            raise ValidationError(
                f"session record fields must be exactly {sorted(expected)}, got {sorted(d)}"
            )
        return cls(
            session_id=str(d["session_id"]),
            user_id=str(d["user_id"]),
            engine=EngineId(d["engine"]),
            events=tuple(ActionEvent.from_dict(e) for e in d["events"]),
            shown_links=tuple(str(x) for x in d["shown_links"]),
        )


def validate_session(s: SessionRecord) -> list[str]:
    """Return every violated session invariant; an empty list means valid."""
    problems = []
    if not s.events:
        problems.append("events: session has no events")
        return problems
    for ev in s.events:
        if ev.timestamp < 0:
            problems.append("events: negative timestamp")
            break
    for ev in s.events:
        wants_query = ev.kind in (ActionKind.SEARCH, ActionKind.EDIT_QUERY)
        if wants_query != (ev.query_text is not None) or (not wants_query) != (ev.link_id is not None):
            problems.append(f"events: fields do not match kind {ev.kind.value}")
            break
    if any(a.timestamp > b.timestamp for a, b in zip(s.events, s.events[1:])):
        problems.append("events not time-ordered")
    if s.count(ActionKind.SEARCH) == 0:
        problems.append("events: no Search event")
    if s.events[0].kind is not ActionKind.SEARCH:
        problems.append("events: first event is not a Search")
    shown = set(s.shown_links)
    if any(link not in shown for link in s.clicks):
        problems.append("click references unshown link")
    return problems


def label_session(s: SessionRecord) -> SessionLabel:
    problems = validate_session(s)
    if problems:
        raise ValidationError(f"session {s.session_id}: " + "; ".join(problems))
    n_search = s.count(ActionKind.SEARCH)
    n_edit = s.count(ActionKind.EDIT_QUERY)
    if s.count(ActionKind.CLICK_LINK) == 0:
        return SessionLabel.FUTILE
    # edits take precedence over the two-search rule
    if n_search > 2 or n_edit >= 1:
        return SessionLabel.MULTIFORM
    if n_search == 2:
        return SessionLabel.TWICE
    return SessionLabel.ONCE


def dumps_session(s: SessionRecord) -> str:
    return json.dumps(s.to_dict(), ensure_ascii=False, separators=(",", ":"))


def write_sessions(path: str | Path, sessions: Iterable[SessionRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in sessions:
            fh.write(dumps_session(s))
            fh.write("\n")


def iter_sessions(path: str | Path) -> Iterator[SessionRecord]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: invalid JSON ({exc})") from None
            yield SessionRecord.from_dict(d)


def read_sessions(path: str | Path) -> list[SessionRecord]:
    return list(iter_sessions(path))

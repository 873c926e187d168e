"""Per-session example table: link-side and user-side predictors plus the label."""

from __future__ import annotations

import csv
import enum
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .aggregate import LinkStats, UserStats
from .corpus import Catalog, UserProfile
from .errors import ValidationError
from .session import EngineId, SessionLabel, SessionRecord, label_session


class FeatureKind(str, enum.Enum):
    NUMERIC = "numeric"
    BINARY = "binary"


class FeatureSource(str, enum.Enum):
    LINK = "link"
    USER = "user"
    SESSION = "session"


@dataclass(frozen=True)
class FeatureDescriptor:
    name: str
    kind: FeatureKind
    source: FeatureSource


class FeatureSpec(tuple):
    """Ordered, name-unique tuple of FeatureDescriptor."""

    def __new__(cls, descriptors):
        descriptors = tuple(descriptors)
        names = [d.name for d in descriptors]
        if len(set(names)) != len(names):
            raise ValidationError(f"duplicate feature names in {names}")
        return super().__new__(cls, descriptors)

    @property
    def names(self) -> list[str]:
        return [d.name for d in self]

    @classmethod
    def default(cls, settings_count: int) -> "FeatureSpec":
        return cls(
            [
                FeatureDescriptor("ctr", FeatureKind.NUMERIC, FeatureSource.LINK),
                FeatureDescriptor("publisher_popularity", FeatureKind.NUMERIC, FeatureSource.LINK),
                FeatureDescriptor("has_image", FeatureKind.BINARY, FeatureSource.LINK),
                FeatureDescriptor("has_audio", FeatureKind.BINARY, FeatureSource.LINK),
                FeatureDescriptor("has_external_links", FeatureKind.BINARY, FeatureSource.LINK),
                FeatureDescriptor("engine_freq", FeatureKind.NUMERIC, FeatureSource.USER),
                *(
                    FeatureDescriptor(f"setting_{k}", FeatureKind.BINARY, FeatureSource.USER)
                    for k in range(settings_count)
                ),
            ]
        )

    @classmethod
    def from_names(cls, names: Sequence[str]) -> "FeatureSpec":
        known = {d.name: d for d in cls.default(_count_settings(names))}
        return cls(
            known.get(n, FeatureDescriptor(n, FeatureKind.NUMERIC, FeatureSource.SESSION)) for n in names
        )


def _count_settings(names: Sequence[str]) -> int:
    return sum(1 for n in names if n.startswith("setting_") and n[8:].isdigit())


@dataclass
class LabeledDataset:
    X: np.ndarray
    columns: FeatureSpec
    y: np.ndarray
    engine: list[EngineId]
    session_ids: list[str]

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float).reshape(len(self.y), len(self.columns))
        self.y = np.asarray(self.y, dtype=int)
        if not (len(self.y) == len(self.engine) == len(self.session_ids)):
            raise ValidationError("dataset rows, labels, engines and ids differ in length")
        if not np.all(np.isfinite(self.X)):
            raise ValidationError("dataset contains NaN or infinite entries")

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=int)
        return LabeledDataset(
            self.X[idx],
            self.columns,
            self.y[idx],
            [self.engine[i] for i in idx],
            [self.session_ids[i] for i in idx],
        )

    @property
    def strata(self) -> list[tuple[EngineId, int]]:
        return list(zip(self.engine, self.y.tolist()))


def target_link(s: SessionRecord) -> str:
    """First clicked link, or the top shown link when nothing was clicked."""
    clicks = s.clicks
    if clicks:
        return clicks[0]
    if not s.shown_links:
        raise ValidationError(f"session {s.session_id}: no shown links to pick a target from")
    return s.shown_links[0]


class FeatureContext:
    """Everything needed to build a feature row for (user, engine, link)."""

    def __init__(
        self,
        link_stats: Mapping[str, LinkStats],
        user_stats: Mapping[str, UserStats],
        catalog: Catalog,
        users: Sequence[UserProfile] | Mapping[str, UserProfile],
    ):
        self.link_stats = link_stats
        self.user_stats = user_stats
        self.catalog = catalog
        if isinstance(users, Mapping):
            self.users = dict(users)
        else:
            self.users = {u.user_id: u for u in users}
        settings = {len(u.settings_flags) for u in self.users.values()}
        if len(settings) > 1:
            raise ValidationError("users disagree on the number of settings flags")
        self.settings_count = settings.pop() if settings else 0
        self.spec = FeatureSpec.default(self.settings_count)

    def user(self, user_id: str) -> UserProfile:
        try:
            return self.users[user_id]
        except KeyError:
            raise ValidationError(f"user {user_id!r} missing from user table") from None

    def engine_freq(self, user: UserProfile, engine: EngineId) -> float:
        st = self.user_stats.get(user.user_id)
        if st is not None and st.total > 0:
            return st.freq(engine)
        # no logged history: fall back to the profile's declared usage
        return float(user.engine_freq.get(engine, 0.0))

    def row(self, user_id: str, engine: EngineId, link_id: str) -> list[float]:
        if link_id not in self.catalog:
            raise ValidationError(f"link {link_id!r} missing from catalog")
        link = self.catalog[link_id]
        user = self.user(user_id)
        st = self.link_stats.get(link_id)
        ctr = st.ctr if st is not None else 0.0
        return [
            ctr,
            link.publisher_popularity,
            float(link.has_image),
            float(link.has_audio),
            float(link.has_external_links),
            self.engine_freq(user, engine),
            *(float(f) for f in user.settings_flags),
        ]

    def rows(self, user_id: str, engine: EngineId, link_ids: Sequence[str]) -> np.ndarray:
        return np.array([self.row(user_id, engine, l) for l in link_ids], dtype=float).reshape(
            len(link_ids), len(self.spec)
        )


def featurize(
    sessions: Sequence[SessionRecord],
    link_stats: Mapping[str, LinkStats],
    user_stats: Mapping[str, UserStats],
    catalog: Catalog,
    users,
) -> LabeledDataset:
    ctx = FeatureContext(link_stats, user_stats, catalog, users)
    rows = [ctx.row(s.user_id, s.engine, target_link(s)) for s in sessions]
    return LabeledDataset(
        X=np.array(rows, dtype=float).reshape(len(rows), len(ctx.spec)),
        columns=ctx.spec,
        y=np.array([int(label_session(s)) for s in sessions], dtype=int),
        engine=[s.engine for s in sessions],
        session_ids=[s.session_id for s in sessions],
    )


def split_train_test(
    ds: LabeledDataset, test_fraction: float, seed: int
) -> tuple[LabeledDataset, LabeledDataset]:
    """Stratified by (engine, label); undersized strata go entirely to train."""
    if not 0.0 < test_fraction < 1.0:
        raise ValidationError("test_fraction must lie strictly between 0 and 1")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(11,))))
    groups: dict[tuple[EngineId, int], list[int]] = {}
    for i, key in enumerate(ds.strata):
        groups.setdefault(key, []).append(i)
    train, test = [], []
    for key in sorted(groups, key=lambda k: (k[0].sort_key, k[1])):
        idx = np.array(groups[key])
        if len(idx) < 2:
            warnings.warn(f"stratum {key[0]}/{SessionLabel(key[1]).display} has < 2 examples; kept in train")
            train.extend(idx.tolist())
            continue
        idx = idx[rng.permutation(len(idx))]
        n_test = min(max(math.floor(test_fraction * len(idx) + 0.5), 1), len(idx) - 1)
        test.extend(idx[:n_test].tolist())
        train.extend(idx[n_test:].tolist())
    return ds.subset(sorted(train)), ds.subset(sorted(test))


# ---------------------------------------------------------------- file I/O


def write_dataset(path: str | Path, ds: LabeledDataset) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["session_id", *ds.columns.names, "label", "engine"])
        for i in range(len(ds)):
            w.writerow(
                [
                    ds.session_ids[i],
                    *(repr(float(v)) for v in ds.X[i]),
                    SessionLabel(int(ds.y[i])).display,
                    ds.engine[i].name,
                ]
            )


def read_dataset(path: str | Path) -> LabeledDataset:
    with open(path, encoding="utf-8", newline="") as fh:
        r = csv.reader(fh)
        try:
            header = next(r)
        except StopIteration:
            raise ValidationError(f"{path}: empty dataset file") from None
        if len(header) < 3 or header[0] != "session_id" or header[-2:] != ["label", "engine"]:
            raise ValidationError(f"{path}: malformed dataset header {header}")
        names = header[1:-2]
        ids, rows, labels, engines = [], [], [], []
        for lineno, rec in enumerate(r, 2):
            if len(rec) != len(header):
                raise ValidationError(f"{path}:{lineno}: expected {len(header)} fields, got {len(rec)}")
            ids.append(rec[0])
            try:
                rows.append([float(v) for v in rec[1:-2]])
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from None
            labels.append(int(SessionLabel.parse(rec[-2])))
            engines.append(EngineId(rec[-1]))
    return LabeledDataset(
        X=np.array(rows, dtype=float).reshape(len(rows), len(names)),
        columns=FeatureSpec.from_names(names),
        y=np.array(labels, dtype=int),
        engine=engines,
        session_ids=ids,
    )

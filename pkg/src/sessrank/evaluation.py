"""Repeated stratified cross-validation, re-ranking, behavioral replay and ratio reports."""

from __future__ import annotations

import csv
import enum
import io
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Corpus, UserProfile, attempt_stream, draw_user, parse_session_id, simulate_session
from .errors import ConfigError, NumericError, ValidationError
from .features import FeatureContext, LabeledDataset
from .models import FittedEnsemble, ModelConfig, fit_ensemble
from .preprocess import PipelineConfig
from .session import EngineId, SessionLabel, SessionRecord, label_session, sort_engines


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


# ---------------------------------------------------------------- folds


@dataclass
class FoldPlan:
    k: int
    repeats: int
    assignments: list[np.ndarray]

    def test_indices(self, repeat: int, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments[repeat] == fold)

    def train_indices(self, repeat: int, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments[repeat] != fold)


def make_folds(y, engine: Sequence[EngineId], k: int = 5, repeats: int = 3, seed: int = 0) -> FoldPlan:
    """Stratified k-fold plan, ``repeats`` times with independently derived seeds.

    Strata are (engine, label). Examples are dealt round-robin over folds in
    one continuous sequence that walks labels in order and, inside a label,
    engines in order, so every stratum and every label is spread as evenly
    as possible. Strata smaller than ``k`` are pooled by label.
    """
    y = np.asarray(y, dtype=int)
    n = len(y)
    if k < 2:
        raise ConfigError("k must be >= 2")
    if repeats < 1:
        raise ConfigError("repeats must be >= 1")
    if k > n:
        raise ConfigError(f"k = {k} exceeds the {n} available examples")
    strata: dict[tuple[int, EngineId], list[int]] = {}
    for i, (label, eng) in enumerate(zip(y.tolist(), engine)):
        strata.setdefault((label, eng), []).append(i)

    groups: list[np.ndarray] = []
    for label in sorted({lab for lab, _ in strata}):
        pooled: list[int] = []
        for eng in sort_engines(e for lab, e in strata if lab == label):
            members = strata[(label, eng)]
            if len(members) < k:
                warnings.warn(
                    f"stratum {eng}/{_label_name(label)} has {len(members)} < k = {k} examples; "
                    "stratifying it by label only"
                )
                pooled.extend(members)
            else:
                groups.append(np.array(members))
        if pooled:
            groups.append(np.array(sorted(pooled)))

    assignments = []
    for r in range(repeats):
        rng = _stream(seed, 21, r)
        fold_of = np.empty(n, dtype=int)
        counter = 0
        for members in groups:
            for i in members[rng.permutation(len(members))]:
                fold_of[i] = counter % k
                counter += 1
        assignments.append(fold_of)
    return FoldPlan(k, repeats, assignments)


def _label_name(label: int) -> str:
    try:
        return SessionLabel(label).display
    except ValueError:
        return str(label)


# ---------------------------------------------------------------- cross-validation


@dataclass
class FoldResult:
    repeat: int
    fold: int
    accuracy: float
    confusion: np.ndarray  # rows = truth, columns = prediction


@dataclass
class CvReport:
    folds: list[FoldResult] = field(default_factory=list)

    @property
    def accuracies(self) -> np.ndarray:
        return np.array([f.accuracy for f in self.folds])

    @property
    def mean_accuracy(self) -> float:
        return float(self.accuracies.mean())

    @property
    def std_accuracy(self) -> float:
        acc = self.accuracies
        return float(acc.std(ddof=1)) if len(acc) > 1 else 0.0

    def format(self) -> str:
        lines = ["repeat\tfold\taccuracy\tconfusion"]
        for f in self.folds:
            conf = ";".join(",".join(str(int(v)) for v in row) for row in f.confusion)
            lines.append(f"{f.repeat}\t{f.fold}\t{f.accuracy:.6f}\t{conf}")
        lines.append(f"mean\t\t{self.mean_accuracy:.6f}")
        lines.append(f"std\t\t{self.std_accuracy:.6f}")
        return "\n".join(lines) + "\n"


def cross_validate(
    ds: LabeledDataset,
    pipeline_config: PipelineConfig | None = None,
    model_config: ModelConfig | None = None,
    plan: FoldPlan | None = None,
) -> CvReport:
    """Fit preprocessing and all four models on each training split; score the held-out fold."""
    plan = plan or make_folds(ds.y, ds.engine)
    n_classes = len(SessionLabel)
    out = CvReport()
    names = ds.columns.names
    for r in range(plan.repeats):
        for f in range(plan.k):
            train = plan.train_indices(r, f)
            test = plan.test_indices(r, f)
            try:
                ens = fit_ensemble(ds.X[train], ds.y[train], names, pipeline_config, model_config)
                pred, _ = ens.predict(ds.X[test])
            except (ValidationError, ConfigError, NumericError) as exc:
                raise type(exc)(f"repeat {r}, fold {f}: {exc}") from exc
            conf = np.zeros((n_classes, n_classes), dtype=int)
            np.add.at(conf, (ds.y[test], pred), 1)
            acc = float(np.trace(conf) / len(test)) if len(test) else float("nan")
            out.folds.append(FoldResult(r, f, acc, conf))
    return out


# ---------------------------------------------------------------- re-ranking


def rerank(candidates: Sequence[tuple[str, Sequence[float]]], ensemble) -> list[str]:
    """Order candidate links by descending mean-posterior P(OnceSearch), ties by link id."""
    if not candidates:
        return []
    ids = [c[0] for c in candidates]
    rows = np.array([c[1] for c in candidates], dtype=float)
    post = np.asarray(ensemble.predict_proba(rows))
    if post.shape[0] != len(ids):
        raise ValidationError("ensemble returned the wrong number of posterior rows")
    p_once = post[:, int(SessionLabel.ONCE)]
    return [ids[i] for i in sorted(range(len(ids)), key=lambda i: (-p_once[i], ids[i]))]


class EnsembleRanker:
    """Ranker callable for replay: scores (user, engine, link) with an ensemble, cached."""

    def __init__(self, ensemble, context: FeatureContext):
        self.ensemble = ensemble
        self.context = context
        self._cache: dict[tuple[str, str, str], float] = {}

    def scores(self, user_id: str, engine: EngineId, link_ids: Sequence[str]) -> dict[str, float]:
        missing = [l for l in link_ids if (user_id, engine.name, l) not in self._cache]
        if missing:
            rows = self.context.rows(user_id, engine, missing)
            p = np.asarray(self.ensemble.predict_proba(rows))[:, int(SessionLabel.ONCE)]
            for link, v in zip(missing, p):
                self._cache[(user_id, engine.name, link)] = float(v)
        return {l: self._cache[(user_id, engine.name, l)] for l in link_ids}

    def __call__(self, user: UserProfile, engine: EngineId, link_ids: list[str]) -> list[str]:
        s = self.scores(user.user_id, engine, link_ids)
        return sorted(link_ids, key=lambda l: (-s[l], l))


def identity_ranker(user, engine, link_ids):
    return list(link_ids)


def simulate_post_rerank(sessions: Sequence[SessionRecord], ranker, corpus: Corpus) -> list[SessionRecord]:
    """Replay each session's user and random stream over re-ranked result lists.

    ``ranker`` is a callable ``(user, engine, link_ids) -> link_ids`` (for
    example an :class:`EnsembleRanker`) or a fitted ensemble, in which case the
    corpus's catalog and users provide the feature rows (with no click history).
    """
    if isinstance(ranker, FittedEnsemble):
        ranker = EnsembleRanker(ranker, FeatureContext({}, {}, corpus.catalog, corpus.users))
    out = []
    for s in sessions:
        engine, attempt = parse_session_id(s.session_id)
        if engine != s.engine:
            raise ValidationError(f"session {s.session_id}: id does not match engine {s.engine}")
        rng = attempt_stream(corpus.config, engine, attempt)
        user = draw_user(rng, corpus.users, engine)
        if user.user_id != s.user_id:
            raise ValidationError(
                f"session {s.session_id}: replay drew user {user.user_id}, log says {s.user_id}"
            )
        out.append(
            simulate_session(
                user, engine, corpus.catalog, rng, corpus.config, session_id=s.session_id, ranker=ranker
            )
        )
    return out


# ---------------------------------------------------------------- ratios


class Phase(str, enum.Enum):
    BEFORE = "Before"
    AFTER = "After"


@dataclass(frozen=True)
class EngineCounts:
    once: int
    twice: int
    multiform: int

    @property
    def total(self) -> int:
        return self.once + self.twice + self.multiform

    @property
    def counts(self) -> tuple[int, int, int]:
        return (self.once, self.twice, self.multiform)

    def fractions(self) -> tuple[Fraction, Fraction, Fraction]:
        t = self.total
        if t == 0:
            raise ValidationError("no sessions to compute ratios from")
        return tuple(Fraction(c, t) for c in self.counts)

    @property
    def ratios(self) -> tuple[float, float, float]:
        return tuple(float(f) for f in self.fractions())

    ratio_i = property(lambda self: self.ratios[0])
    ratio_ii = property(lambda self: self.ratios[1])
    ratio_iii = property(lambda self: self.ratios[2])


@dataclass
class RatioReport:
    phase: Phase
    engines: dict[EngineId, EngineCounts]

    @classmethod
    def from_counts(cls, counts: dict, phase: Phase | str = Phase.BEFORE) -> "RatioReport":
        eng = {}
        for e, c in counts.items():
            e = e if isinstance(e, EngineId) else EngineId(e)
            eng[e] = c if isinstance(c, EngineCounts) else EngineCounts(*c)
        return cls(Phase(phase), {e: eng[e] for e in sort_engines(eng)})


def evaluate_ratios(
    sessions: Sequence[SessionRecord],
    per_engine_total: int = 200,
    seed: int = 0,
    phase: Phase | str = Phase.BEFORE,
) -> RatioReport:
    """Drop Futile sessions, subsample ``per_engine_total`` per engine, count the rest."""
    by_engine: dict[EngineId, list[tuple[str, SessionLabel]]] = {}
    for s in sessions:
        by_engine.setdefault(s.engine, [])
        label = label_session(s)
        if label is not SessionLabel.FUTILE:
            by_engine[s.engine].append((s.session_id, label))
    counts = {}
    for engine in sort_engines(by_engine):
        pool = sorted(by_engine[engine])
        if len(pool) < per_engine_total:
            raise ValidationError(
                f"{engine}: {len(pool)} non-Futile sessions, need {per_engine_total} "
                f"(shortfall {per_engine_total - len(pool)})"
            )
        rng = _stream(seed, 31, engine.stream_key)
        chosen = rng.choice(len(pool), size=per_engine_total, replace=False)
        c = [0, 0, 0]
        for i in chosen:
            c[pool[i][1]] += 1
        counts[engine] = EngineCounts(*c)
    return RatioReport.from_counts(counts, phase)


# ---------------------------------------------------------------- report files

REPORT_CSV = "report.csv"
PLOTDATA_TSV = "plotdata.tsv"
DELTAS_TXT = "deltas.txt"
_ROWS = (
    ("One Search", "Ratio-I"),
    ("Twice Search", "Ratio-II"),
    ("Multiform Search", "Ratio-III"),
)
_CATEGORIES = ("OnceSearch", "TwiceSearch", "MultiformSearch")


def _pct(frac: Fraction) -> str:
    return f"{float(frac * 100):.10g}%"


def _points(frac: Fraction) -> str:
    return f"{float(frac * 100):+.10g}"


def format_table(reports: Sequence[RatioReport]) -> str:
    """CSV in the row layout of the published tables, one block per phase."""
    engines = list(reports[0].engines)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["Phase", "Platform", *(e.name for e in engines)])
    for rep in reports:
        if list(rep.engines) != engines:
            raise ValidationError("reports cover different engines")
        for k, (count_row, ratio_row) in enumerate(_ROWS):
            w.writerow([rep.phase.value, count_row, *(rep.engines[e].counts[k] for e in engines)])
            w.writerow([rep.phase.value, ratio_row, *(_pct(rep.engines[e].fractions()[k]) for e in engines)])
    return buf.getvalue()


def parse_table(text: str) -> list[RatioReport]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0][:2] != ["Phase", "Platform"]:
        raise ValidationError("not a ratio report table")
    engines = [EngineId(n) for n in rows[0][2:]]
    counts: dict[str, dict[EngineId, list[int]]] = {}
    order: list[str] = []
    ratio_text: dict[tuple[str, int], list[str]] = {}
    for rec in rows[1:]:
        phase, name, *vals = rec
        if phase not in counts:
            counts[phase] = {e: [0, 0, 0] for e in engines}
            order.append(phase)
        for k, (count_row, ratio_row) in enumerate(_ROWS):
            if name == count_row:
                for e, v in zip(engines, vals):
                    counts[phase][e][k] = int(v)
            elif name == ratio_row:
                ratio_text[(phase, k)] = vals
    reports = [RatioReport.from_counts(counts[p], p) for p in order]
    for rep in reports:
        for k in range(3):
            printed = ratio_text.get((rep.phase.value, k))
            expect = [_pct(rep.engines[e].fractions()[k]) for e in engines]
            if printed != expect:
                raise ValidationError(f"{rep.phase.value} ratio row {k + 1} does not match its counts")
    return reports


def format_plotdata(reports: Sequence[RatioReport]) -> str:
    lines = ["engine\tcategory\tphase\tratio"]
    for rep in reports:
        for e, c in rep.engines.items():
            for cat, r in zip(_CATEGORIES, c.ratios):
                lines.append(f"{e.name}\t{cat}\t{rep.phase.value}\t{r!r}")
    return "\n".join(lines) + "\n"


def format_deltas(before: RatioReport, after: RatioReport) -> str:
    lines = ["engine\tratio_i_before\tratio_i_after\tdelta_ratio_i_points\tdelta_ratio_ii_points\tdelta_ratio_iii_points"]
    for e in before.engines:
        fb, fa = before.engines[e].fractions(), after.engines[e].fractions()
        lines.append(
            "\t".join([e.name, _pct(fb[0]), _pct(fa[0]), *(_points(a - b) for a, b in zip(fa, fb))])
        )
    return "\n".join(lines) + "\n"


def ratio_i_deltas(before: RatioReport, after: RatioReport) -> dict[EngineId, Fraction]:
    """Ratio-I change per engine, in percentage points."""
    return {e: 100 * (after.engines[e].fractions()[0] - before.engines[e].fractions()[0]) for e in before.engines}


def report(before: RatioReport, after: RatioReport, out_dir: str | Path) -> dict[str, Path]:
    if list(before.engines) != list(after.engines):
        raise ValidationError(
            f"engine mismatch: before {[e.name for e in before.engines]}, after {[e.name for e in after.engines]}"
        )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "table": out / REPORT_CSV,
        "plotdata": out / PLOTDATA_TSV,
        "deltas": out / DELTAS_TXT,
    }
    paths["table"].write_text(format_table([before, after]), encoding="utf-8")
    paths["plotdata"].write_text(format_plotdata([before, after]), encoding="utf-8")
    paths["deltas"].write_text(format_deltas(before, after), encoding="utf-8")
    return paths


def write_ratio_report(path: str | Path, rep: RatioReport) -> None:
    Path(path).write_text(format_table([rep]), encoding="utf-8")


def read_ratio_report(path: str | Path) -> RatioReport:
    reports = parse_table(Path(path).read_text(encoding="utf-8"))
    if len(reports) != 1:
        raise ValidationError(f"{path}: expected exactly one phase block, found {len(reports)}")
    return reports[0]

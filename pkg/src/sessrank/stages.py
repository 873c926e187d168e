"""Batch stages. Each stage reads the files written by the previous one.

gen -> aggregate -> featurize -> train -> evaluate -> report, with
``pipeline`` running all of them in that order from a single RunConfig.
"""

from __future__ import annotations

import csv
import logging
from collections import Counter
from pathlib import Path

import numpy as np

from . import aggregate as agg
from .corpus import Corpus, generate_corpus, read_catalog, read_corpus, read_users, write_corpus
from .corpus import CATALOG_FILE, SESSIONS_FILE, USERS_FILE
from .errors import ValidationError
from .evaluation import (
    EnsembleRanker,
    Phase,
    cross_validate,
    evaluate_ratios,
    make_folds,
    report,
    rerank,
    simulate_post_rerank,
    write_ratio_report,
)
from .features import FeatureContext, featurize, read_dataset, write_dataset
from .models import FittedEnsemble, fit_ensemble
from .runconfig import RunConfig
from .session import SessionLabel, label_session, read_sessions, write_sessions

log = logging.getLogger("sessrank")

CV_REPORT = "cv_report.tsv"
FEATURE_SUMMARY = "feature_summary.tsv"
BEFORE_FILE = "ratios_before.csv"
AFTER_FILE = "ratios_after.csv"


def run_gen(cfg: RunConfig, out_dir: str | Path) -> Corpus:
    corpus = generate_corpus(cfg.gen)
    write_corpus(out_dir, corpus)
    log.info("gen: %d sessions, %d links, %d users -> %s",
             len(corpus.sessions), len(corpus.catalog), len(corpus.users), out_dir)
    return corpus


def run_aggregate(sessions_path: str | Path, shard_count: int, out_dir: str | Path):
    sessions = read_sessions(sessions_path)
    tally = Counter()
    link_stats, user_stats = agg.run_aggregation(sessions, shard_count, tally)
    if tally["skipped"]:
        log.warning("aggregate: skipped %d invalid sessions", tally["skipped"])
    agg.write_stats(out_dir, link_stats, user_stats)
    return link_stats, user_stats


def run_featurize(sessions_path, stats_dir, catalog_path, users_path, out_path):
    sessions = read_sessions(sessions_path)
    link_stats, user_stats = agg.read_stats(stats_dir)
    ds = featurize(sessions, link_stats, user_stats, read_catalog(catalog_path), read_users(users_path))
    write_dataset(out_path, ds)
    return ds


def format_feature_summary(ens: FittedEnsemble) -> str:
    lines = ["feature\tslope\tintercept\tr_squared"]
    lines += [f"{s.name}\t{s.slope:.10g}\t{s.intercept:.10g}\t{s.r_squared:.10g}" for s in ens.pipeline.ols]
    return "\n".join(lines) + "\n"


def run_train(dataset_path, cfg: RunConfig, model_path, cv_report_path=None) -> FittedEnsemble:
    ds = read_dataset(dataset_path)
    if cv_report_path is not None and cfg.cv_repeats > 0:
        plan = make_folds(ds.y, ds.engine, cfg.cv_folds, cfg.cv_repeats, cfg.seed)
        cv = cross_validate(ds, cfg.pipeline_config, cfg.model_config, plan)
        Path(cv_report_path).write_text(cv.format(), encoding="utf-8")
        log.info("train: cv accuracy %.4f +/- %.4f", cv.mean_accuracy, cv.std_accuracy)
    ens = fit_ensemble(ds.X, ds.y, ds.columns.names, cfg.pipeline_config, cfg.model_config)
    Path(model_path).write_text(ens.dumps(), encoding="utf-8")
    return ens


def load_model(path) -> FittedEnsemble:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read model {path}: {exc}") from None
    return FittedEnsemble.loads(text)


def run_predict(model_path, dataset_path, out_path) -> None:
    ens = load_model(model_path)
    ds = read_dataset(dataset_path)
    if ds.columns.names != ens.pipeline.input_names:
        raise ValidationError(
            f"dataset columns {ds.columns.names} do not match model inputs {ens.pipeline.input_names}"
        )
    pred, post = ens.predict(ds.X) if len(ds) else (np.zeros(0, int), np.zeros((0, 4)))
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["session_id", "predicted", *(f"p_{l.display}" for l in SessionLabel)])
        for sid, c, row in zip(ds.session_ids, pred, post):
            w.writerow([sid, SessionLabel(int(c)).display, *(repr(float(v)) for v in row)])


def run_rerank(model_path, candidates_path, out_path) -> None:
    """Candidates CSV: ``group,link_id,<model input columns>``; links ranked within each group."""
    ens = load_model(model_path)
    with open(candidates_path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["group", "link_id"]:
        raise ValidationError(f"{candidates_path}: header must start with group,link_id")
    if rows[0][2:] != ens.pipeline.input_names:
        raise ValidationError(f"{candidates_path}: feature columns do not match model inputs")
    groups: dict[str, list] = {}
    for rec in rows[1:]:
        groups.setdefault(rec[0], []).append((rec[1], [float(v) for v in rec[2:]]))
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", "rank", "link_id"])
        for g in groups:
            for r, link in enumerate(rerank(groups[g], ens), 1):
                w.writerow([g, r, link])


def write_report(before, after, out_dir) -> None:
    out = Path(out_dir)
    report(before, after, out)
    write_ratio_report(out / BEFORE_FILE, before)
    write_ratio_report(out / AFTER_FILE, after)


def aggregate_excluding(corpus_dir: Path, held_out_path, out_dir, shard_count: int = 4):
    """Aggregate the corpus sessions that are not in ``held_out_path``."""
    held = {s.session_id for s in read_sessions(held_out_path)}
    rest = [s for s in read_sessions(Path(corpus_dir) / SESSIONS_FILE) if s.session_id not in held]
    link_stats, user_stats = agg.run_aggregation(rest, shard_count)
    agg.write_stats(out_dir, link_stats, user_stats)
    return link_stats, user_stats


def run_evaluate(model_path, sessions_path, corpus_dir, stats_dir, out_dir, per_engine_total=200, seed=0):
    """Replay held-out sessions over lists re-ranked by one model and write the report."""
    ens = load_model(model_path)
    corpus = read_corpus(corpus_dir, sessions=False)
    sessions = read_sessions(sessions_path)
    link_stats, user_stats = agg.read_stats(stats_dir)
    ranker = EnsembleRanker(ens, FeatureContext(link_stats, user_stats, corpus.catalog, corpus.users))
    replayed = simulate_post_rerank(sessions, ranker, corpus)
    before = evaluate_ratios(sessions, per_engine_total, seed, Phase.BEFORE)
    after = evaluate_ratios(replayed, per_engine_total, seed, Phase.AFTER)
    write_report(before, after, out_dir)
    return before, after


def crossfit_replay(corpus: Corpus, cfg: RunConfig, work_dir: str | Path) -> list:
    """Replay every session with an ensemble that never saw it.

    Sessions are split into ``eval_folds`` stratified folds. For each fold,
    aggregates, features, preprocessing and models come from the other folds
    only; the fold's own sessions are then replayed over re-ranked lists.
    """
    work = Path(work_dir)
    sessions = corpus.sessions
    y = [int(label_session(s)) for s in sessions]
    plan = make_folds(y, [s.engine for s in sessions], cfg.eval_folds, 1, cfg.seed + 1)
    replayed = [None] * len(sessions)
    for f in range(cfg.eval_folds):
        fold_dir = work / f"fold{f}"
        fold_dir.mkdir(parents=True, exist_ok=True)
        train = [sessions[i] for i in plan.train_indices(0, f)]
        test_idx = plan.test_indices(0, f)
        write_sessions(fold_dir / "train_sessions.jsonl", train)
        write_sessions(fold_dir / "test_sessions.jsonl", [sessions[i] for i in test_idx])
        link_stats, user_stats = agg.run_aggregation(train, cfg.shard_count)
        agg.write_stats(fold_dir / "stats", link_stats, user_stats)
        ds = featurize(train, link_stats, user_stats, corpus.catalog, corpus.users)
        write_dataset(fold_dir / "train.csv", ds)
        ens = fit_ensemble(ds.X, ds.y, ds.columns.names, cfg.pipeline_config, cfg.model_config)
        (fold_dir / "model.json").write_text(ens.dumps(), encoding="utf-8")
        ranker = EnsembleRanker(ens, FeatureContext(link_stats, user_stats, corpus.catalog, corpus.users))
        for i, s in zip(test_idx, simulate_post_rerank([sessions[i] for i in test_idx], ranker, corpus)):
            replayed[i] = s
    write_sessions(work / "replayed_sessions.jsonl", replayed)
    return replayed


def run_pipeline(cfg: RunConfig, out_dir: str | Path) -> tuple:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus_dir = out / cfg.corpus_dir
    stats_dir = out / cfg.stats_dir
    report_dir = out / cfg.report_dir
    report_dir.mkdir(parents=True, exist_ok=True)

    run_gen(cfg, corpus_dir)
    run_aggregate(corpus_dir / SESSIONS_FILE, cfg.shard_count, stats_dir)
    run_featurize(
        corpus_dir / SESSIONS_FILE, stats_dir, corpus_dir / CATALOG_FILE, corpus_dir / USERS_FILE,
        out / cfg.dataset,
    )
    ens = run_train(out / cfg.dataset, cfg, out / cfg.model, report_dir / CV_REPORT)
    (report_dir / FEATURE_SUMMARY).write_text(format_feature_summary(ens), encoding="utf-8")

    corpus = read_corpus(corpus_dir)
    replayed = crossfit_replay(corpus, cfg, out / "crossfit")
    before = evaluate_ratios(corpus.sessions, cfg.per_engine_total, cfg.seed, Phase.BEFORE)
    after = evaluate_ratios(replayed, cfg.per_engine_total, cfg.seed, Phase.AFTER)
    write_report(before, after, report_dir)
    log.info("pipeline: report written to %s", report_dir)
    return before, after

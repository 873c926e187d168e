"""
Sessions, labels and a calibrated synthetic corpus
==================================================

A session is a time-ordered list of searches, query edits and clicks.
Its label depends only on how many searches it took and whether the
user clicked anything. The generator then builds a whole corpus whose
per-engine label counts hit the configured quotas exactly.
"""

from sessrank.corpus import GenConfig, generate_corpus, label_counts, mean_relevance_clicked_vs_unclicked
from sessrank.session import BAIDU, ActionEvent, SessionRecord, label_session


def session(*events):
    return SessionRecord("demo", "u1", BAIDU, tuple(events), ("L1", "L2", "L3"))


# one search and a click, two searches, an edit, and no click at all
examples = {
    "search, click": session(ActionEvent.search(0, "q"), ActionEvent.click(5, "L1")),
    "search, search, click": session(
        ActionEvent.search(0, "q"), ActionEvent.search(9, "q2"), ActionEvent.click(12, "L2")
    ),
    "search, edit, click": session(
        ActionEvent.search(0, "q"), ActionEvent.edit(4, "q more"), ActionEvent.click(8, "L3")
    ),
    "search only": session(ActionEvent.search(0, "q")),
}
for name, s in examples.items():
    print(f"{name:24s} -> {label_session(s).name}")

# the default configuration reproduces the published back-end counts
cfg = GenConfig()
corpus = generate_corpus(cfg)
print("\nlabel counts per engine (once, twice, multiform, futile):")
for engine, counts in label_counts(corpus.sessions).items():
    print(f"  {engine.name:7s} {counts}")

# the features carry signal: clicked links are more relevant than skipped ones
clicked, skipped = mean_relevance_clicked_vs_unclicked(corpus)
print(f"\nmean relevance clicked {clicked:.3f} vs shown but skipped {skipped:.3f}")

"""
Re-ranking and before/after search-time ratios
==============================================

The full pipeline generates the corpus, aggregates, trains and then
replays every session with a list re-ranked by the predicted probability
of a one-search success. The Before and After blocks compare how many of
the sampled successful sessions needed one, two or more searches.

The same run is available from the shell as

    sessrank pipeline --out run/
"""

import tempfile
from pathlib import Path

from sessrank.evaluation import format_deltas, format_table
from sessrank.runconfig import RunConfig
from sessrank.stages import run_pipeline

with tempfile.TemporaryDirectory() as tmp:
    before, after = run_pipeline(RunConfig(), tmp)
    print(format_table([before, after]))
    print(format_deltas(before, after))
    print("files written:", sorted(p.name for p in (Path(tmp) / "report").iterdir()))

"""
Map/reduce aggregation of click logs
====================================

Per-link impressions and clicks, and per-user engine usage, are counted
shard by shard and then merged. Because the merge is a plain sum over
integer counters, the result does not depend on the shard count or on the
order of the sessions.
"""

import numpy as np

from sessrank.aggregate import format_link_stats, format_user_stats, run_aggregation
from sessrank.corpus import GenConfig, generate_corpus

corpus = generate_corpus(GenConfig())
sessions = corpus.sessions


def fingerprint(sessions, shards):
    links, users = run_aggregation(sessions, shards)
    return format_link_stats(links) + format_user_stats(users)


reference = fingerprint(sessions, 1)
for shards in (2, 3, 8, 50):
    print(f"{shards:3d} shards identical to 1 shard: {fingerprint(sessions, shards) == reference}")

order = np.random.default_rng(0).permutation(len(sessions))
print("shuffled input identical:", fingerprint([sessions[i] for i in order], 4) == reference)

# the five links with the highest click-through rate among well-shown links
links, users = run_aggregation(sessions, 4)
popular = [s for s in links.values() if s.impressions >= 20]
for s in sorted(popular, key=lambda s: -s.ctr)[:5]:
    print(f"  {s.link_id:6s} {s.clicks:4d}/{s.impressions:<4d} ctr {s.ctr:.3f}")

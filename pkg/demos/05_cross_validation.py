"""
Repeated stratified cross-validation
====================================

Folds are stratified by (engine, label). For each fold the preprocessing
and all four models are fitted on the training part only, so the
held-out rows never leak into the fit.
"""

from sessrank.aggregate import run_aggregation
from sessrank.corpus import GenConfig, generate_corpus
from sessrank.evaluation import cross_validate, make_folds
from sessrank.features import featurize

corpus = generate_corpus(GenConfig())
links, users = run_aggregation(corpus.sessions)
ds = featurize(corpus.sessions, links, users, corpus.catalog, corpus.users)

plan = make_folds(ds.y, ds.engine, k=5, repeats=3, seed=0)
rep = cross_validate(ds, plan=plan)
print(f"ensemble accuracy {rep.mean_accuracy:.4f} +- {rep.std_accuracy:.4f} over {len(rep.folds)} folds")
print("(four balanced-ish classes, so chance is roughly 0.25 to 0.3)\n")
print(rep.format())

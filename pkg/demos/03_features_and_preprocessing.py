"""
Feature table and the preprocessing stack
=========================================

Every session becomes one row: link-side columns (historical CTR,
publisher popularity, media flags) and user-side columns (engine usage
frequency, personal settings). The preprocessing stack then drops
near-constant and highly correlated columns, standardizes, ranks the
survivors by single-predictor R^2 and projects onto principal components.
"""

import numpy as np

from sessrank.aggregate import run_aggregation
from sessrank.corpus import GenConfig, generate_corpus
from sessrank.features import featurize, split_train_test
from sessrank.preprocess import fit_pipeline

corpus = generate_corpus(GenConfig())
links, users = run_aggregation(corpus.sessions)
ds = featurize(corpus.sessions, links, users, corpus.catalog, corpus.users)
print(f"{len(ds)} rows, columns: {ds.columns.names}")

train, test = split_train_test(ds, 0.25, seed=0)
state = fit_pipeline(train.X, train.y, train.columns.names)

print("\nkept after filtering:", state.kept_names)
print("\nsingle-predictor OLS summary on the standardized training data:")
for s in state.ols:
    print(f"  {s.name:22s} slope {s.slope:+.3f}  R^2 {s.r_squared:.4f}")

ratio = np.cumsum(state.pca_eigenvalues) / state.total_variance
print(f"\n{state.output_dim} components keep {ratio[state.output_dim - 1]:.1%} of the variance")

# the fitted state replays on held-out rows without refitting
Zt = state.transform(test.X)
print("test rows transformed:", Zt.shape)

"""
Four classifiers and a majority vote
====================================

KNN, LDA, QDA and multinomial logistic regression are fitted on the same
data. Each returns a posterior over the four session labels and the
ensemble takes the majority vote, breaking ties by the logistic model.
"""

import numpy as np

from sessrank.models import ModelConfig, ensemble_predict, fit_models

rng = np.random.default_rng(1)
means = np.array([[0.0, 0.0], [3.0, 0.0], [0.0, 3.0], [3.0, 3.0]])
X = np.vstack([m + rng.standard_normal((60, 2)) for m in means])
y = np.repeat(np.arange(4), 60)
order = rng.permutation(len(y))
X, y = X[order], y[order]
train, test = slice(0, 180), slice(180, None)

# well separated blobs push unpenalized logistic weights towards infinity,
# so this demo uses a visible ridge penalty to let gradient descent settle
models = fit_models(X[train], y[train], ModelConfig(mlr_l2=1e-2))
for m in models:
    acc = np.mean(m.predict_proba(X[test]).argmax(axis=1) == y[test])
    print(f"{type(m).__name__:4s} held-out accuracy {acc:.3f}")

labels, proba = ensemble_predict(models, X[test])
print(f"vote held-out accuracy {np.mean(labels == y[test]):.3f}")
print("first posterior (mean of the four models):", np.round(proba[0], 3))

# MLR fits by gradient descent; the trace shows it converged
mlr = models[-1]
print(f"MLR converged {mlr.trace.converged} after {mlr.trace.iterations} iterations")

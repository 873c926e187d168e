"""KNN, LDA, QDA and multinomial logistic regression, plus the majority-vote ensemble.

All classifiers share one contract: ``fit(X, y)`` with integer class indices
in ``range(n_classes)`` and ``predict_proba(X)`` returning one posterior row
per query (non-negative, summing to one).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, NumericError, ValidationError
from .preprocess import PipelineState, fit_pipeline
from .session import N_CLASSES, SessionLabel

MODEL_FORMAT = "sessrank-ensemble"
MODEL_VERSION = 1
VOTE_RULE = "majority>mlr-posterior>lowest-class/v1"
RIDGE_SCALE = 1e-6


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _as_queries(X, dim: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != dim:
        raise ValidationError(f"model expects {dim} features, got {X.shape[1]}")
    return X


def _check_labels(y, n_classes: int) -> np.ndarray:
    y = np.asarray(y, dtype=int)
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise ValidationError(f"labels must lie in 0..{n_classes - 1}")
    return y


def _class_name(k: int, n_classes: int) -> str:
    return SessionLabel(k).display if n_classes == N_CLASSES else f"class {k}"


# ---------------------------------------------------------------- KNN


class KNN:
    kind = "KNN"

    def __init__(self, k: int = 5, n_classes: int = N_CLASSES):
        self.k = k
        self.n_classes = n_classes

    def fit(self, X, y) -> "KNN":
        X = np.asarray(X, dtype=float)
        y = _check_labels(y, self.n_classes)
        if not 1 <= self.k <= len(y):
            raise ConfigError(f"k = {self.k} is invalid for {len(y)} training rows")
        self.X_, self.y_ = X.copy(), y.copy()
        self.dim = X.shape[1]
        return self

    def neighbors(self, X) -> np.ndarray:
        """Indices of the k nearest training rows; equal distances go to the lower index."""
        Q = _as_queries(X, self.dim)
        out = np.empty((len(Q), self.k), dtype=int)
        chunk = 256
        for start in range(0, len(Q), chunk):
            q = Q[start : start + chunk]
            # accumulate one coordinate at a time: same summation order as a scalar loop
            d2 = np.zeros((len(q), len(self.X_)))
            for j in range(self.dim):
                diff = q[:, j, None] - self.X_[None, :, j]
                d2 += diff * diff
            out[start : start + len(q)] = np.argsort(d2, axis=1, kind="stable")[:, : self.k]
        return out

    def predict_proba(self, X) -> np.ndarray:
        nb = self.neighbors(X)
        votes = np.zeros((len(nb), self.n_classes))
        for c in range(self.n_classes):
            votes[:, c] = (self.y_[nb] == c).sum(axis=1)
        return votes / self.k

    def to_dict(self) -> dict:
        return {"kind": self.kind, "k": self.k, "n_classes": self.n_classes,
                "X": self.X_.tolist(), "y": self.y_.tolist(), "dim": self.dim}

    @classmethod
    def from_dict(cls, d: dict) -> "KNN":
        m = cls(d["k"], d["n_classes"])
        m.X_ = np.array(d["X"], dtype=float).reshape(-1, d["dim"])
        m.y_ = np.array(d["y"], dtype=int)
        m.dim = d["dim"]
        return m


# ---------------------------------------------------------------- LDA / QDA


def _ridge(cov: np.ndarray) -> np.ndarray:
    dim = cov.shape[0]
    lam = RIDGE_SCALE * np.trace(cov) / dim
    if not lam > 0:
        lam = RIDGE_SCALE
    return cov + lam * np.eye(dim)


def _sym_inverse(cov: np.ndarray) -> tuple[np.ndarray, float]:
    try:
        inv = np.linalg.inv(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"covariance not invertible ({exc}); cond {np.linalg.cond(cov):.3g}") from None
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0:
        raise NumericError("covariance is not positive definite")
    return 0.5 * (inv + inv.T), float(logdet)


class _Gaussian:
    n_classes: int

    def _class_stats(self, X, y):
        X = np.asarray(X, dtype=float)
        y = _check_labels(y, self.n_classes)
        counts = np.bincount(y, minlength=self.n_classes)
        for k, c in enumerate(counts):
            if c == 0:
                raise ValidationError(f"{_class_name(k, self.n_classes)} absent from training data")
        self.dim = X.shape[1]
        self.priors = counts / counts.sum()
        self.means = np.array([X[y == k].mean(axis=0) for k in range(self.n_classes)])
        scatter = [
            (X[y == k] - self.means[k]).T @ (X[y == k] - self.means[k]) for k in range(self.n_classes)
        ]
        dof = max(len(y) - self.n_classes, 1)
        pooled = sum(scatter) / dof
        return counts, scatter, pooled

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.discriminants(X))


class LDA(_Gaussian):
    kind = "LDA"

    def __init__(self, n_classes: int = N_CLASSES):
        self.n_classes = n_classes

    def fit(self, X, y) -> "LDA":
        _, _, pooled = self._class_stats(X, y)
        self.cov_inv, _ = _sym_inverse(_ridge(pooled))
        return self

    def discriminants(self, X) -> np.ndarray:
        Q = _as_queries(X, self.dim)
        proj = self.means @ self.cov_inv  # K x d
        const = -0.5 * np.einsum("kd,kd->k", proj, self.means) + np.log(self.priors)
        return Q @ proj.T + const

    def to_dict(self) -> dict:
        return {"kind": self.kind, "n_classes": self.n_classes, "dim": self.dim,
                "priors": self.priors.tolist(), "means": self.means.tolist(),
                "cov_inv": self.cov_inv.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "LDA":
        m = cls(d["n_classes"])
        m.dim = d["dim"]
        m.priors = np.array(d["priors"])
        m.means = np.array(d["means"]).reshape(m.n_classes, m.dim)
        m.cov_inv = np.array(d["cov_inv"]).reshape(m.dim, m.dim)
        return m


class QDA(_Gaussian):
    kind = "QDA"

    def __init__(self, n_classes: int = N_CLASSES):
        self.n_classes = n_classes

    def fit(self, X, y) -> "QDA":
        counts, scatter, pooled = self._class_stats(X, y)
        self.cov_invs = []
        self.logdets = []
        for k in range(self.n_classes):
            if counts[k] < self.dim + 1:
                warnings.warn(
                    f"{_class_name(k, self.n_classes)} has {counts[k]} rows for {self.dim} dims; "
                    "using the pooled covariance"
                )
                cov = pooled
            else:
                cov = scatter[k] / (counts[k] - 1)
            inv, logdet = _sym_inverse(_ridge(cov))
            self.cov_invs.append(inv)
            self.logdets.append(logdet)
        self.cov_invs = np.array(self.cov_invs)
        self.logdets = np.array(self.logdets)
        return self

    def discriminants(self, X) -> np.ndarray:
        Q = _as_queries(X, self.dim)
        out = np.empty((len(Q), self.n_classes))
        for k in range(self.n_classes):
            diff = Q - self.means[k]
            maha = np.einsum("nd,de,ne->n", diff, self.cov_invs[k], diff)
            out[:, k] = -0.5 * self.logdets[k] - 0.5 * maha + np.log(self.priors[k])
        return out

    def to_dict(self) -> dict:
        return {"kind": self.kind, "n_classes": self.n_classes, "dim": self.dim,
                "priors": self.priors.tolist(), "means": self.means.tolist(),
                "cov_invs": self.cov_invs.tolist(), "logdets": self.logdets.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "QDA":
        m = cls(d["n_classes"])
        m.dim = d["dim"]
        m.priors = np.array(d["priors"])
        m.means = np.array(d["means"]).reshape(m.n_classes, m.dim)
        m.cov_invs = np.array(d["cov_invs"]).reshape(m.n_classes, m.dim, m.dim)
        m.logdets = np.array(d["logdets"])
        return m


# ---------------------------------------------------------------- MLR


def _augment(X: np.ndarray) -> np.ndarray:
    return np.hstack([np.ones((len(X), 1)), X])


def mlr_loss_grad(W: np.ndarray, Xa: np.ndarray, Y: np.ndarray, l2: float) -> tuple[float, np.ndarray]:
    """Mean cross-entropy plus ``l2/2 * |W|^2`` (intercept row excluded) and its gradient.

    ``Xa`` carries the intercept in column 0; ``Y`` is one-hot. Column 0 of
    ``W`` is the reference class and gets zero gradient.
    """
    logits = Xa @ W
    logits = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(logits).sum(axis=1, keepdims=True))
    logp = logits - logsum
    n = len(Xa)
    penal = W[1:]
    loss = -float((Y * logp).sum()) / n + 0.5 * l2 * float((penal * penal).sum())
    grad = Xa.T @ (np.exp(logp) - Y) / n
    grad[1:] += l2 * W[1:]
    grad[:, 0] = 0.0
    return loss, grad


@dataclass
class MLRTrace:
    losses: list[float] = field(default_factory=list)
    steps: list[float] = field(default_factory=list)
    grad_norm: float = float("inf")
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.steps)


class MLR:
    kind = "MLR"

    def __init__(
        self,
        l2: float = 1e-4,
        tol: float = 1e-6,
        max_iter: int = 10_000,
        n_classes: int = N_CLASSES,
        armijo: float = 1e-4,
        shrink: float = 0.5,
        initial_step: float = 1.0,
    ):
        self.l2, self.tol, self.max_iter = l2, tol, max_iter
        self.n_classes = n_classes
        self.armijo, self.shrink, self.initial_step = armijo, shrink, initial_step

    def fit(self, X, y) -> "MLR":
        X = np.asarray(X, dtype=float)
        y = _check_labels(y, self.n_classes)
        self.dim = X.shape[1]
        Xa = _augment(X)
        Y = np.eye(self.n_classes)[y]
        W = np.zeros((self.dim + 1, self.n_classes))
        trace = MLRTrace()
        loss, grad = mlr_loss_grad(W, Xa, Y, self.l2)
        trace.losses.append(loss)
        for it in range(self.max_iter):
            gmax = float(np.abs(grad).max())
            trace.grad_norm = gmax
            if gmax < self.tol:
                trace.converged = True
                break
            g2 = float((grad * grad).sum())
            step = self.initial_step
            while True:
                W_new = W - step * grad
                new_loss, new_grad = mlr_loss_grad(W_new, Xa, Y, self.l2)
                if not np.isfinite(new_loss):
                    raise NumericError(f"non-finite MLR loss at iteration {it}, step {step:.3g}")
                if new_loss <= loss - self.armijo * step * g2:
                    break
                step *= self.shrink
                if step < 1e-20:
                    raise NumericError(f"line search stalled at iteration {it}")
            W, loss, grad = W_new, new_loss, new_grad
            trace.losses.append(loss)
            trace.steps.append(step)
        else:
            trace.grad_norm = float(np.abs(grad).max())
            trace.converged = trace.grad_norm < self.tol
        self.W = W
        self.trace = trace
        return self

    def predict_proba(self, X) -> np.ndarray:
        Q = _as_queries(X, self.dim)
        return softmax(_augment(Q) @ self.W)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "n_classes": self.n_classes, "dim": self.dim,
                "l2": self.l2, "tol": self.tol, "max_iter": self.max_iter, "W": self.W.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "MLR":
        m = cls(d["l2"], d["tol"], d["max_iter"], d["n_classes"])
        m.dim = d["dim"]
        m.W = np.array(d["W"]).reshape(m.dim + 1, m.n_classes)
        return m


MODEL_KINDS = {cls.kind: cls for cls in (KNN, LDA, QDA, MLR)}


def knn_fit(X, y, k: int = 5) -> KNN:
    return KNN(k).fit(X, y)


def lda_fit(X, y) -> LDA:
    return LDA().fit(X, y)


def qda_fit(X, y) -> QDA:
    return QDA().fit(X, y)


def mlr_fit(X, y, l2: float = 1e-4, tol: float = 1e-6, max_iter: int = 10_000) -> MLR:
    return MLR(l2, tol, max_iter).fit(X, y)


# ---------------------------------------------------------------- ensemble


def vote(posteriors: dict[str, np.ndarray]) -> np.ndarray:
    """Majority vote over per-model posteriors, keyed by model kind.

    Each model votes for its argmax class. Ties between modal classes are
    settled by the MLR posterior restricted to the tied classes, then by the
    lower class index.
    """
    kinds = sorted(posteriors)
    first = posteriors[kinds[0]]
    n, K = first.shape
    votes = np.zeros((n, K), dtype=int)
    for kind in kinds:
        votes[np.arange(n), posteriors[kind].argmax(axis=1)] += 1
    tied = votes == votes.max(axis=1, keepdims=True)
    if "MLR" in posteriors:
        tiebreak = np.where(tied, posteriors["MLR"], -np.inf)
    else:
        tiebreak = np.where(tied, 0.0, -np.inf)
    return tiebreak.argmax(axis=1)


def ensemble_predict(models: Sequence, X) -> tuple[np.ndarray, np.ndarray]:
    """Return (winning class per row, mean posterior per row)."""
    dims = {m.dim for m in models}
    if len(dims) != 1:
        raise ValidationError(f"models fitted on different feature dimensions: {sorted(dims)}")
    post = {}
    for m in models:
        if m.kind in post:
            raise ValidationError(f"duplicate model kind {m.kind}")
        post[m.kind] = m.predict_proba(X)
    mean = sum(post[k] for k in sorted(post)) / len(post)
    return vote(post), mean


@dataclass
class ModelConfig:
    knn_k: int = 5
    mlr_l2: float = 1e-4
    mlr_tol: float = 1e-6
    mlr_max_iter: int = 10_000


def fit_models(X, y, config: ModelConfig | None = None, n_classes: int = N_CLASSES) -> list:
    config = config or ModelConfig()
    return [
        KNN(config.knn_k, n_classes).fit(X, y),
        LDA(n_classes).fit(X, y),
        QDA(n_classes).fit(X, y),
        MLR(config.mlr_l2, config.mlr_tol, config.mlr_max_iter, n_classes).fit(X, y),
    ]


@dataclass
class FittedEnsemble:
    """Preprocessing state plus four fitted models; consumes raw feature rows."""

    pipeline: PipelineState
    models: list
    vote_rule: str = VOTE_RULE

    def predict(self, X_raw) -> tuple[np.ndarray, np.ndarray]:
        return ensemble_predict(self.models, self.pipeline.transform(np.atleast_2d(X_raw)))

    def predict_proba(self, X_raw) -> np.ndarray:
        return self.predict(X_raw)[1]

    def dumps(self) -> str:
        return json.dumps(
            {
                "format": MODEL_FORMAT,
                "version": MODEL_VERSION,
                "vote_rule": self.vote_rule,
                "pipeline": self.pipeline.dumps(),
                "models": [m.to_dict() for m in self.models],
            },
            indent=1,
        )

    @classmethod
    def loads(cls, text: str) -> "FittedEnsemble":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"model file is not valid JSON: {exc}") from None
        if d.get("format") != MODEL_FORMAT:
            raise ValidationError("not a sessrank model file")
        if d.get("version") != MODEL_VERSION:
            raise ValidationError(f"model format version {d.get('version')} unsupported (want {MODEL_VERSION})")
        if d.get("vote_rule") != VOTE_RULE:
            raise ValidationError(f"unknown vote rule {d.get('vote_rule')!r}")
        models = [MODEL_KINDS[m["kind"]].from_dict(m) for m in d["models"]]
        return cls(PipelineState.loads(d["pipeline"]), models, d["vote_rule"])


def fit_ensemble(X_raw, y, names, pipeline_config=None, model_config=None) -> FittedEnsemble:
    state = fit_pipeline(X_raw, y, names, pipeline_config)
    Z = state.transform(X_raw)
    return FittedEnsemble(state, fit_models(Z, y, model_config))

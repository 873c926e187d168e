import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sessrank.errors import ConfigError, ValidationError
from sessrank.models import (
    LDA,
    MLR,
    QDA,
    FittedEnsemble,
    ModelConfig,
    _augment,
    ensemble_predict,
    fit_ensemble,
    fit_models,
    knn_fit,
    lda_fit,
    mlr_fit,
    mlr_loss_grad,
    qda_fit,
    softmax,
    vote,
)

from oracles import fd_gradient, knn_oracle, shared_cov_data


def gaussian_blobs(rng, means, sigma, per_class):
    X = np.vstack([m + sigma * rng.standard_normal((per_class, len(m))) for m in means])
    y = np.repeat(np.arange(len(means)), per_class)
    return X, y


class Pinned:
    """Fixture model returning fixed posteriors."""

    def __init__(self, kind, post, dim=1):
        self.kind, self.post, self.dim = kind, np.atleast_2d(post), dim

    def predict_proba(self, X):
        return np.repeat(self.post, len(np.atleast_2d(X)), axis=0)


def _posterior_ok(P):
    assert np.all(P >= 0)
    assert np.abs(P.sum(axis=1) - 1).max() < 1e-9


# ---- KNN


def test_knn_identity_and_votes():
    X = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [5.0, 5.0]])
    y = np.array([0, 0, 1, 3])
    m = knn_fit(X, y, k=1)
    assert m.predict_proba([5.0, 5.0]).tolist() == [[0, 0, 0, 1]]
    post = knn_fit(X, y, k=3).predict_proba([0.1, 0.1])
    assert np.allclose(post, [[2 / 3, 1 / 3, 0, 0]])


def test_knn_tie_goes_to_lower_index():
    X = np.array([[1.0], [-1.0], [1.0]])
    m = knn_fit(X, [2, 1, 0], k=1)
    assert m.neighbors([0.0]).tolist() == [[0]]
    assert knn_fit(X, [2, 1, 0], k=2).neighbors([0.0]).tolist() == [[0, 1]]


def test_knn_k_too_large():
    with pytest.raises(ConfigError):
        knn_fit(np.zeros((3, 1)), [0, 1, 2], k=4)


def test_knn_matches_oracle_random_50(rng):
    X = rng.standard_normal((50, 3))
    y = rng.integers(0, 4, 50)
    m = knn_fit(X, y, k=5)
    Q = rng.standard_normal((40, 3))
    for q, nb in zip(Q, m.neighbors(Q)):
        assert nb.tolist() == knn_oracle(X.tolist(), q.tolist(), 5)


def test_knn_matches_oracle_with_ties(rng):
    X = rng.integers(-2, 3, (60, 2)).astype(float)
    m = knn_fit(X, rng.integers(0, 4, 60), k=7)
    Q = rng.integers(-2, 3, (30, 2)).astype(float)
    for q, nb in zip(Q, m.neighbors(Q)):
        assert nb.tolist() == knn_oracle(X.tolist(), q.tolist(), 7)


# ---- LDA / QDA


def test_lda_symmetric_boundary():
    mu = np.array([1.0, 2.0])
    s = math.sqrt(0.5)
    cloud = s * np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]], dtype=float) * math.sqrt(3 / 2)
    X = np.vstack([mu + cloud, -mu + cloud])
    y = np.array([0] * 4 + [1] * 4)
    m = LDA(2).fit(X, y)
    on_plane = np.array([[2.0, -1.0], [-4.0, 2.0]])  # x . mu = 0
    assert np.allclose(m.predict_proba(on_plane), 0.5, atol=1e-9)
    assert m.predict_proba(mu + 0.01).argmax() == 0


def test_lda_triangle_accuracy():
    rng = np.random.default_rng(0)
    means = np.array([[1.0, 0.0], [-0.5, math.sqrt(3) / 2], [-0.5, -math.sqrt(3) / 2]])
    X, y = gaussian_blobs(rng, means, 0.3, 100)
    m = LDA(3).fit(X, y)
    assert (m.predict_proba(X).argmax(axis=1) == y).mean() >= 0.9
    for k, mu in enumerate(means):
        assert m.predict_proba(mu).argmax() == k


def test_class_absent_named():
    X = np.random.default_rng(1).standard_normal((10, 2))
    with pytest.raises(ValidationError, match="MultiformSearch"):
        lda_fit(X, [0, 1, 3] * 3 + [0])
    with pytest.raises(ValidationError, match="absent"):
        qda_fit(X, [0] * 10)


def test_qda_matches_lda_on_shared_covariance(rng):
    X, y, means, L = shared_cov_data(rng, 400, 3, 4)
    Q = means[rng.integers(0, 4, 50)] + rng.standard_normal((50, 3)) @ L.T
    pl, pq = lda_fit(X, y).predict_proba(Q), qda_fit(X, y).predict_proba(Q)
    assert np.abs(pl - pq).max() < 1e-6
    assert np.array_equal(pl.argmax(axis=1), pq.argmax(axis=1))


def test_qda_mean_query(rng):
    X, y, means, _ = shared_cov_data(rng, 200, 2, 4, spread=3.0)
    m = qda_fit(X, y)
    assert m.predict_proba(means).argmax(axis=1).tolist() == [0, 1, 2, 3]


def test_qda_loose_class_wins_far_away():
    tight = np.array([-0.1, 0.0, 0.1])
    loose = np.array([-3.0, 0.0, 3.0])
    X = np.concatenate([tight, loose])[:, None]
    m = QDA(2).fit(X, [0, 0, 0, 1, 1, 1])
    # hand discriminants: var 0.01 vs 9, both means 0
    x = 1.0
    d0 = -0.5 * math.log(0.01) - 0.5 * x * x / 0.01
    d1 = -0.5 * math.log(9.0) - 0.5 * x * x / 9.0
    assert d1 > d0
    assert m.predict_proba([[x]]).argmax() == 1
    assert m.predict_proba([[0.0]]).argmax() == 0


def test_qda_small_class_falls_back(rng):
    X = rng.standard_normal((20, 3))
    y = np.array([0] * 8 + [1] * 8 + [2] * 2 + [3] * 2)
    with pytest.warns(UserWarning, match="pooled"):
        m = qda_fit(X, y)
    _posterior_ok(m.predict_proba(X))


def test_discriminant_shift_invariance(rng):
    X, y = gaussian_blobs(rng, rng.standard_normal((4, 3)), 0.8, 20)
    for model in (lda_fit(X, y), qda_fit(X, y)):
        delta = model.discriminants(X)
        assert np.abs(softmax(delta + 123.4) - softmax(delta)).max() < 1e-12


def test_duplicated_rows_same_argmax(rng):
    X, y = gaussian_blobs(rng, rng.standard_normal((4, 2)), 1.0, 15)
    Q = rng.standard_normal((30, 2))
    for fit in (lda_fit, qda_fit):
        a = fit(X, y).predict_proba(Q).argmax(axis=1)
        b = fit(np.vstack([X, X]), np.concatenate([y, y])).predict_proba(Q).argmax(axis=1)
        assert np.array_equal(a, b)


def test_inverses_symmetric_and_priors(rng):
    X, y = gaussian_blobs(rng, rng.standard_normal((4, 3)), 1.0, 10)
    lda, qda = lda_fit(X, y), qda_fit(X, y)
    assert abs(lda.priors.sum() - 1) < 1e-9
    assert np.abs(lda.cov_inv - lda.cov_inv.T).max() < 1e-8
    for inv in qda.cov_invs:
        assert np.abs(inv - inv.T).max() < 1e-8


def test_ridge_makes_degenerate_classes_invertible():
    # each class has two distinct rows in 3-D: singular without the ridge
    X = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 2, 0], [5, 5, 0], [6, 5, 0], [1, 1, 0], [1, 1, 1]], float)
    y = [0, 0, 1, 1, 2, 2, 3, 3]
    with pytest.warns(UserWarning):
        for m in (lda_fit(X, y), qda_fit(X, y)):
            _posterior_ok(m.predict_proba(X))


# ---- MLR


def test_mlr_zero_weights_uniform():
    m = MLR()
    m.dim, m.W = 2, np.zeros((3, 4))
    assert np.allclose(m.predict_proba(np.ones((2, 2))), 0.25)


def test_mlr_gradient_finite_difference(rng):
    X = rng.standard_normal((20, 3))
    Xa = _augment(X)
    Y = np.eye(4)[rng.integers(0, 4, 20)]
    W = rng.standard_normal((4, 4))
    W[:, 0] = 0.0  # reference class
    _, G = mlr_loss_grad(W, Xa, Y, 0.1)
    F = fd_gradient(W, Xa, Y, 0.1)
    rel = np.abs(G - F) / np.maximum(np.maximum(np.abs(G), np.abs(F)), 1e-12)
    assert rel[:, 1:].max() < 1e-4
    assert np.all(G[:, 0] == 0)


def test_mlr_separable_two_class(rng):
    X = np.vstack([rng.uniform(1, 2, (15, 2)), rng.uniform(-2, -1, (15, 2))])
    y = np.array([0] * 15 + [1] * 15)
    m = MLR(n_classes=2, l2=1e-3).fit(X, y)
    assert (m.predict_proba(X).argmax(axis=1) == y).mean() == 1.0
    assert np.all(np.isfinite(m.W)) and np.abs(m.W).max() < 100


def test_mlr_trace_monotone_and_converged(rng):
    X, y = gaussian_blobs(rng, rng.standard_normal((4, 2)), 1.0, 25)
    m = mlr_fit(X, y, l2=1e-2)
    losses = np.array(m.trace.losses)
    assert np.all(np.diff(losses) <= 1e-15)
    assert m.trace.converged and m.trace.grad_norm < 1e-6


def test_mlr_intercepts_unpenalized(rng):
    # a strong l2 shrinks the slopes towards 0; the intercepts still reach the class priors
    X = rng.standard_normal((40, 2))
    y = np.array([0] * 10 + [1] * 20 + [2] * 5 + [3] * 5)
    m = mlr_fit(X, y, l2=30.0)
    assert m.trace.converged
    assert np.abs(m.W[1:]).max() < 1e-2
    p = m.predict_proba(np.zeros((1, 2)))[0]
    assert np.allclose(p, [0.25, 0.5, 0.125, 0.125], atol=1e-3)


# ---- posteriors and the ensemble


def test_all_posteriors_sum_to_one(rng):
    X, y = gaussian_blobs(rng, rng.standard_normal((4, 3)), 1.0, 20)
    for m in fit_models(X, y):
        _posterior_ok(m.predict_proba(rng.standard_normal((25, 3))))


def _onehot(k):
    return np.eye(4)[k]


def test_vote_unanimous_and_modal():
    assert vote({k: _onehot(2)[None] for k in ("KNN", "LDA", "QDA", "MLR")}).tolist() == [2]
    votes = {"KNN": _onehot(3)[None], "LDA": _onehot(1)[None], "QDA": _onehot(1)[None], "MLR": _onehot(0)[None]}
    assert vote(votes).tolist() == [1]


def test_vote_tie_uses_mlr_then_index():
    mlr_post = np.array([[0.3, 0.35, 0.05, 0.3]])  # argmax 1, a tied class
    votes = {"KNN": _onehot(0)[None], "LDA": _onehot(0)[None], "QDA": _onehot(1)[None], "MLR": mlr_post}
    assert vote(votes).tolist() == [1]
    even = np.array([[0.25, 0.25, 0.25, 0.25]])
    votes = {"KNN": _onehot(2)[None], "LDA": _onehot(1)[None], "QDA": _onehot(2)[None], "MLR": even}
    # MLR's own vote goes to class 0: votes 0:1, 1:1, 2:2 -> 2 wins outright
    assert vote(votes).tolist() == [2]
    # MLR votes 1 (first maximum), so class 1 has two votes
    spread = {"KNN": _onehot(3)[None], "LDA": _onehot(1)[None], "QDA": _onehot(2)[None], "MLR": np.array([[0.1, 0.3, 0.3, 0.3]])}
    assert vote(spread).tolist() == [1]


def test_vote_ties_without_mlr_go_to_lower_index():
    assert vote({"KNN": _onehot(3)[None], "LDA": _onehot(1)[None]}).tolist() == [1]


def test_ensemble_order_invariant_and_mean():
    models = [
        Pinned("KNN", [0.6, 0.4, 0, 0]),
        Pinned("LDA", [0.2, 0.8, 0, 0]),
        Pinned("QDA", [0.9, 0.1, 0, 0]),
        Pinned("MLR", [0.45, 0.55, 0, 0]),
    ]
    cls, post = ensemble_predict(models, np.zeros((1, 1)))
    assert cls.tolist() == [1]  # 2 vs 2, MLR favours 1
    assert np.allclose(post, [[0.5375, 0.4625, 0, 0]])
    cls2, post2 = ensemble_predict(models[::-1], np.zeros((1, 1)))
    assert cls2.tolist() == cls.tolist() and np.array_equal(post2, post)


def test_ensemble_dimension_mismatch():
    with pytest.raises(ValidationError, match="dimensions"):
        ensemble_predict([Pinned("KNN", _onehot(0), dim=2), Pinned("MLR", _onehot(0), dim=3)], np.zeros((1, 2)))


@settings(max_examples=40)
@given(st.lists(st.integers(0, 3), min_size=4, max_size=4), st.permutations(range(4)))
def test_vote_is_multiset_semantic(classes, perm):
    kinds = ["KNN", "LDA", "QDA", "MLR"]
    posts = {k: _onehot(c)[None] * 0.7 + 0.075 for k, c in zip(kinds, classes)}
    shuffled = {kinds[i]: posts[kinds[i]] for i in perm}
    assert vote(posts).tolist() == vote(shuffled).tolist()
    winner = vote(posts)[0]
    counts = np.bincount(classes, minlength=4)
    assert counts[winner] == counts.max()


def test_fitted_ensemble_round_trip(rng):
    X = np.column_stack([rng.standard_normal(80), rng.uniform(0, 1, 80), rng.integers(0, 2, 80)])
    y = np.arange(80) % 4
    ens = fit_ensemble(X, y, ["a", "b", "c"], model_config=ModelConfig(knn_k=3))
    text = ens.dumps()
    back = FittedEnsemble.loads(text)
    assert back.dumps() == text
    c1, p1 = ens.predict(X)
    c2, p2 = back.predict(X)
    assert np.array_equal(c1, c2) and np.array_equal(p1, p2)
    bad = json.loads(text)
    bad["version"] = 99
    with pytest.raises(ValidationError, match="version"):
        FittedEnsemble.loads(json.dumps(bad))
    bad["version"], bad["vote_rule"] = 1, "plurality"
    with pytest.raises(ValidationError, match="vote rule"):
        FittedEnsemble.loads(json.dumps(bad))

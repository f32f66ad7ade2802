import itertools

import numpy as np
import pytest

from topoflow.detectors import BaseDetector, IForestDetector, LOFDetector, OCSVMDetector
from topoflow.ensemble import VotingEnsemble, fit_ensemble, majority_vote, minmax_normalize


class Stub(BaseDetector):
    """Detector whose score is a fixed column of X."""

    def __init__(self, column=0, threshold=0.5, contamination=0.1):
        self.column = column
        self.threshold = threshold
        self.contamination = contamination

    def _fit(self, X):
        pass

    def _score(self, X):
        return X[:, self.column].copy()

    def _threshold(self, scores):
        return self.threshold


@pytest.mark.parametrize("n_members", [1, 2, 3, 4, 5])
@pytest.mark.parametrize("tie_break", ["normal", "anomalous"])
def test_majority_truth_table(n_members, tie_break):
    combos = np.array(list(itertools.product([False, True], repeat=n_members))).T
    got = majority_vote(combos, tie_break)
    for col, verdict in zip(combos.T, got):
        yes = int(col.sum())
        if 2 * yes > n_members:
            assert verdict
        elif 2 * yes < n_members:
            assert not verdict
        else:
            assert verdict == (tie_break == "anomalous")


@pytest.mark.parametrize("n_members", [1, 2, 3, 4, 5])
def test_ensemble_truth_table_through_estimators(n_members):
    """Same table, with votes produced by fitted members."""
    combos = np.array(list(itertools.product([0.0, 1.0], repeat=n_members)))
    members = [(f"m{k}", Stub(column=k).fit(combos)) for k in range(n_members)]
    for tie_break in ("normal", "anomalous"):
        ens = fit_ensemble(members, combos, rule="majority_vote", tie_break=tie_break)
        yes = combos.sum(axis=1)
        want = (2 * yes > n_members) | ((2 * yes == n_members) & (tie_break == "anomalous"))
        assert np.array_equal(ens.predict(combos), want)
        assert np.array_equal(ens.labels_, want)


def test_single_member_identity():
    X = np.random.default_rng(0).normal(size=(100, 2))
    lof = LOFDetector(n_neighbors=5).fit(X)
    ens = fit_ensemble([lof], X)
    assert np.array_equal(ens.predict(X), lof.predict(X))


def test_vote_monotone():
    rng = np.random.default_rng(1)
    votes = rng.random((5, 200)) < 0.4
    base = majority_vote(votes)
    for m in range(5):
        more = votes.copy()
        more[m] = True
        assert np.all(majority_vote(more) >= base)


def test_constant_member_normalizes_to_half():
    assert minmax_normalize([3.0, 4.0], 2.0, 2.0).tolist() == [0.5, 0.5]
    X = np.column_stack([np.full(10, 7.0), np.linspace(0, 1, 10)])
    ens = fit_ensemble([Stub(column=0).fit(X)], X, rule="average_score")
    assert np.all(ens.decision_function(X) == 0.5)
    both = fit_ensemble([Stub(column=0).fit(X), Stub(column=1).fit(X)], X, rule="average_score")
    assert np.allclose(both.decision_function(X), (0.5 + X[:, 1]) / 2)


def test_normalized_scores_clipped():
    assert minmax_normalize([-1.0, 0.5, 3.0], 0.0, 1.0).tolist() == [0.0, 0.5, 1.0]


def test_unanimous_anomalous_any_rule():
    X = np.r_[np.random.default_rng(2).normal(size=(200, 2)), [[9.0, 9.0]]]
    members = [
        ("ocsvm", OCSVMDetector(nu=0.1).fit(X)),
        ("lof", LOFDetector().fit(X)),
        ("iforest", IForestDetector(random_state=0).fit(X)),
    ]
    assert all(m.labels_[-1] for _, m in members)
    for rule in ("majority_vote", "average_score"):
        assert fit_ensemble(members, X, rule=rule).labels_[-1]


def test_fit_clones_members():
    X = np.random.default_rng(3).normal(size=(80, 2))
    proto = IForestDetector(random_state=0)
    ens = VotingEnsemble([("a", proto), ("b", LOFDetector(n_neighbors=5))]).fit(X)
    assert not hasattr(proto, "trees_")
    assert ens.predict(X).shape == (80,)


def test_rejects_bad_config():
    X = np.zeros((4, 1))
    with pytest.raises(ValueError):
        VotingEnsemble([]).fit(X)
    with pytest.raises(ValueError):
        VotingEnsemble([("a", Stub())], rule="median").fit(X)
    with pytest.raises(ValueError):
        majority_vote([[True]], tie_break="coin")
    a = Stub().fit(np.zeros((4, 1)))
    b = Stub().fit(np.zeros((4, 2)))
    with pytest.raises(ValueError):
        fit_ensemble([a, b], np.zeros((4, 1)))

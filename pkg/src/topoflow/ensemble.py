"""Voting ensemble over fitted detectors."""

from __future__ import annotations

import numpy as np
from sklearn.base import clone
from sklearn.utils import check_array
from sklearn.utils.validation import check_is_fitted

from .detectors import BaseDetector

__all__ = ["VotingEnsemble", "fit_ensemble", "majority_vote", "minmax_normalize"]

RULES = ("majority_vote", "average_score")
TIE_BREAKS = ("normal", "anomalous")


def majority_vote(votes, tie_break="normal"):
    """Combine a (n_members, n_samples) boolean vote matrix.

    Anomalous iff strictly more than half of the members say so; an exact
    half goes to ``tie_break``.
    """
    votes = np.asarray(votes, dtype=bool)
    if votes.ndim == 1:
        votes = votes[:, None]
    m = votes.shape[0]
    yes = votes.sum(axis=0)
    out = 2 * yes > m
    if tie_break == "anomalous":
        out |= 2 * yes == m
    elif tie_break != "normal":
        raise ValueError(f"unknown tie_break {tie_break!r}")
    return out


def minmax_normalize(scores, lo, hi):
    """Map scores to [0, 1] with training min/max; constant members give 0.5."""
    scores = np.asarray(scores, dtype=float)
    if hi <= lo:
        return np.full(scores.shape, 0.5)
    return np.clip((scores - lo) / (hi - lo), 0.0, 1.0)


class VotingEnsemble(BaseDetector):
    """Ensemble of detectors combined by majority vote or mean normalized score.

    ``fit`` fits a clone of every member on the same data. To combine members
    that are already fitted use :func:`fit_ensemble`.

    Parameters
    ----------
    estimators : list of (name, detector)
    rule : {"majority_vote", "average_score"}, default="majority_vote"
    tie_break : {"normal", "anomalous"}, default="normal"
        Verdict when exactly half of the members vote anomalous.
    contamination : float, default=0.1
        Sets ``threshold_`` for the average_score rule.
    """

    _min_samples = 1

    def __init__(self, estimators=(), rule="majority_vote", tie_break="normal", contamination=0.1):
        self.estimators = estimators
        self.rule = rule
        self.tie_break = tie_break
        self.contamination = contamination

    def _check_params(self):
        if not self.estimators:
            raise ValueError("ensemble needs at least one member")
        if self.rule not in RULES:
            raise ValueError(f"unknown rule {self.rule!r}; known: {list(RULES)}")
        if self.tie_break not in TIE_BREAKS:
            raise ValueError(f"unknown tie_break {self.tie_break!r}")

    def fit(self, X, y=None):
        self._check_params()
        X = check_array(X, dtype=float)
        members = [(name, clone(est).fit(X)) for name, est in self.estimators]
        return self._combine(members, X)

    def _combine(self, members, X):
        self._check_params()
        dims = {est.n_features_in_ for _, est in members}
        if len(dims) != 1:
            raise ValueError(f"members were fitted on different dimensions: {sorted(dims)}")
        self.members_ = members
        self.n_features_in_ = dims.pop()
        if X.shape[1] != self.n_features_in_:
            raise ValueError("training data does not match member dimension")
        train = [est.decision_function(X) for _, est in members]
        self.score_min_ = np.array([s.min() if len(s) else 0.0 for s in train])
        self.score_max_ = np.array([s.max() if len(s) else 0.0 for s in train])
        self.decision_scores_ = self._average(train)
        if self.rule == "average_score":
            self.threshold_ = self._threshold(self.decision_scores_)
        else:
            self.threshold_ = 0.5
        self.labels_ = self._verdict([est.predict(X) for _, est in members], self.decision_scores_)
        return self

    def _average(self, member_scores):
        normed = [
            minmax_normalize(s, lo, hi)
            for s, lo, hi in zip(member_scores, self.score_min_, self.score_max_)
        ]
        return np.mean(normed, axis=0)

    def _verdict(self, member_votes, avg):
        if self.rule == "majority_vote":
            return majority_vote(np.vstack(member_votes), self.tie_break)
        return avg > self.threshold_

    def member_scores(self, X):
        X = self._validate(X)
        return [est.decision_function(X) for _, est in self.members_]

    def decision_function(self, X):
        """Mean of min-max normalized member scores, in [0, 1]."""
        X = self._validate(X)
        if X.shape[0] == 0:
            return np.zeros(0)
        return self._average([est.decision_function(X) for _, est in self.members_])

    def predict(self, X):
        check_is_fitted(self, "members_")
        X = self._validate(X)
        if X.shape[0] == 0:
            return np.zeros(0, dtype=bool)
        if self.rule == "majority_vote":
            return majority_vote(np.vstack([est.predict(X) for _, est in self.members_]), self.tie_break)
        return self.decision_function(X) > self.threshold_


def fit_ensemble(members, X, rule="majority_vote", contamination=0.1, tie_break="normal"):
    """Ensemble over already fitted ``members`` (a list of detectors or
    ``(name, detector)`` pairs); ``X`` is their training data."""
    pairs = [
        m if isinstance(m, tuple) else (f"{type(m).__name__.lower()}_{k}", m)
        for k, m in enumerate(members)
    ]
    if not pairs:
        raise ValueError("ensemble needs at least one member")
    for name, est in pairs:
        check_is_fitted(est, "threshold_")
    ens = VotingEnsemble(estimators=pairs, rule=rule, tie_break=tie_break, contamination=contamination)
    return ens._combine(pairs, check_array(X, dtype=float))

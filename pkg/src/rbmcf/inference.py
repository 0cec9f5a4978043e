"""Rating prediction from a trained RBM, RMSE, and evaluation reports."""

from dataclasses import dataclass
import math

import numpy as np
from scipy.special import softmax

from .model import visible_input
from .svd import svd_fit


def _check_target(vobs, item, p):
    if not 0 <= item < p.m:
        raise IndexError(f"item {item} out of range 0..{p.m - 1}")
    pos = np.searchsorted(vobs.items, item)
    if pos < len(vobs) and vobs.items[pos] == item:
        raise ValueError(f"item {item} is already observed for this user")


def rbm_scores(vobs, item, p):
    """log S(k; item, vobs) for every level k = 1..K.

    ``log S = b_i^k + sum_j log(1 + exp(g_j + W_ij^k + c_j))`` where ``g`` is
    the drive from the observed ratings.
    """
    _check_target(vobs, item, p)
    g = visible_input(vobs, p) + p.c
    return p.b[item] + np.logaddexp(0.0, g[:, None] + p.W[item]).sum(axis=0)


def rbm_score(vobs, item, level, p):
    if not 1 <= level <= p.K:
        raise ValueError(f"level must be in 1..{p.K}")
    return float(rbm_scores(vobs, item, p)[level - 1])


def rbm_predict(vobs, item, p):
    """Argmax level; ties go to the lower level."""
    return int(np.argmax(rbm_scores(vobs, item, p))) + 1


def rbm_expected(vobs, item, p):
    probs = softmax(rbm_scores(vobs, item, p))
    return float(probs @ np.arange(1, p.K + 1))


def _batch_scores(vobs, items, p):
    g = visible_input(vobs, p) + p.c
    return p.b[items] + np.logaddexp(0.0, g[None, :, None] + p.W[items]).sum(axis=1)


def rmse(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ValueError("rmse of empty input")
    return math.sqrt(float(np.mean((pred - truth) ** 2)))


@dataclass
class PredictionResult:
    """Per-pair predictions with external ids, plus the aggregate RMSE."""

    users: np.ndarray
    items: np.ndarray
    truth: np.ndarray
    prediction: np.ndarray

    @property
    def rmse(self):
        return rmse(self.prediction, self.truth)

    def __len__(self):
        return self.truth.size

    def to_csv(self, fh):
        fh.write("userId,movieId,truth,prediction\n")
        for u, i, t, y in zip(self.users, self.items, self.truth, self.prediction):
            fh.write(f"{int(u)},{int(i)},{int(t)},{float(y)!r}\n")
        fh.write(f"RMSE,{self.rmse!r}\n")


def _test_pairs(split):
    test = split.test
    if test.n_ratings == 0:
        raise ValueError("test set is empty")
    return test.user_of_rows(), test.items, test.levels


def evaluate_rbm(p, split, mode="argmax"):
    """Predict every held-out rating from the user's training ratings."""
    if mode not in ("argmax", "expected"):
        raise ValueError(f"unknown prediction mode {mode!r}")
    users, items, truth = _test_pairs(split)
    pred = np.empty(truth.size)
    levels = np.arange(1, p.K + 1)
    test = split.test
    for u in np.unique(users):
        lo, hi = test.indptr[u], test.indptr[u + 1]
        scores = _batch_scores(split.train.user(u), test.items[lo:hi], p)
        if mode == "argmax":
            pred[lo:hi] = np.argmax(scores, axis=1) + 1
        else:
            pred[lo:hi] = softmax(scores, axis=1) @ levels
    return PredictionResult(test.user_ids[users], test.item_ids[items], truth.astype(np.int64), pred)


def evaluate_svd(model, split, round_predictions=False):
    users, items, truth = _test_pairs(split)
    pred = model.predict(users, items)
    if round_predictions:
        pred = np.clip(np.rint(pred), 1, split.test.K)
    return PredictionResult(split.test.user_ids[users], split.test.item_ids[items], truth.astype(np.int64), pred)


def q_sweep(split, qs, round_predictions=False, seed=0):
    """RMSE on the held-out ratings for each rank in ``qs`` (input order kept).

    One fit at ``max(qs)`` on the zero-filled training matrix, truncated per q.
    """
    qs = [int(q) for q in qs]
    if not qs:
        raise ValueError("qs must be non-empty")
    model = svd_fit(split.train.to_sparse(), max(qs), seed=seed)
    return [(q, evaluate_svd(model.truncate(q), split, round_predictions).rmse) for q in qs]

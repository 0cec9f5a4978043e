"""Gibbs transitions and contrastive-divergence statistics."""

import numpy as np
from scipy.special import expit, softmax

from .errors import NumericOverflowError, ShapeError
from .model import Gradients, HiddenState, VisibleState, _check_visible, hidden_conditional, visible_input
from .rng import RngStream, as_generator

# Per-user contributions are rounded onto this dyadic grid. Sums of grid values
# stay exact (well below 2**53 ulps), so the batch total is independent of
# summation order and of how the batch is sharded across workers.
GRID_BITS = 32
_GRID = float(2 ** GRID_BITS)


def quantize(x):
    return np.rint(np.asarray(x) * _GRID) / _GRID


def _bernoulli(prob, gen):
    u = gen.random(prob.shape[0])
    return (u < prob).astype(np.float64)


def sample_hidden(v, p, rng):
    """Draw a binary hidden state from p(h | v), one uniform per unit in order."""
    gen = as_generator(rng)
    return HiddenState(_bernoulli(hidden_conditional(v, p), gen), binary=True)


def _visible_probs(h_values, p, items):
    with np.errstate(over="ignore", invalid="ignore"):
        logits = p.b[items] + np.einsum("f,nfk->nk", h_values, p.W[items])
    if not np.isfinite(logits).all():
        raise NumericOverflowError("non-finite visible logits; parameters have diverged")
    return softmax(logits, axis=1)


def _categorical(probs, gen):
    # Inverse-CDF draw per row; one uniform per row in row order.
    u = gen.random(probs.shape[0])
    cdf = np.cumsum(probs, axis=1)
    idx = (cdf <= u[:, None]).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1) + 1


def sample_visible(h, p, mask, rng):
    """Draw a level for every masked item (ascending item order) from p(v_i | h)."""
    if not h.binary:
        raise ShapeError("sample_visible requires a binary hidden state")
    gen = as_generator(rng)
    items = np.array(sorted(mask), dtype=np.int64) if not isinstance(mask, np.ndarray) else np.sort(mask)
    if items.size == 0:
        return VisibleState.empty()
    if items.min() < 0 or items.max() >= p.m:
        raise IndexError("mask contains item outside 0..m-1")
    return VisibleState(items, _categorical(_visible_probs(h.values, p, items), gen))


def gibbs_chain(v0, p, T, rng):
    """Run T alternating steps from ``v0``.

    Returns ``(h0_prob, vT, hT_prob)``; binary samples drive the chain while
    probability-tagged hidden states are returned for statistics.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    _check_visible(v0, p)
    gen = as_generator(rng)
    items = v0.items
    h0_prob = expit(p.c + visible_input(v0, p))
    h_prob = h0_prob
    v = v0
    for _ in range(T):
        h_sample = _bernoulli(h_prob, gen)
        if items.size:
            v = VisibleState(items, _categorical(_visible_probs(h_sample, p, items), gen))
        h_prob = expit(p.c + visible_input(v, p))
    return HiddenState(h0_prob, binary=False), v, HiddenState(h_prob, binary=False)


def reconstruction_error(v, p, h_prob=None):
    """Fraction of masked items whose mean-field reconstruction argmax differs from the data."""
    if not len(v):
        return 0.0
    if h_prob is None:
        h_prob = hidden_conditional(v, p)
    recon = np.argmax(_visible_probs(h_prob, p, v.items), axis=1) + 1
    return float(np.mean(recon != v.levels))


def accumulate_user(acc, v0, p, T, stream):
    """Add one user's quantized CD contribution into ``acc`` (a Gradients of sums).

    Returns the user's reconstruction error.
    """
    h0, vT, hT = gibbs_chain(v0, p, T, stream)
    if len(v0):
        q0 = quantize(h0.values)
        qT = quantize(hT.values)
        # items are unique within a user, so fancy-index += is safe
        acc.dW[v0.items, :, v0.levels - 1] += q0
        acc.dW[vT.items, :, vT.levels - 1] -= qT
        acc.db[v0.items, v0.levels - 1] += 1.0
        acc.db[vT.items, vT.levels - 1] -= 1.0
        acc.dc += q0 - qT
    return reconstruction_error(v0, p, h0.values)


def cd_sums(batch, p, T, rng, user_ids=None, epoch=0):
    """Summed CD statistics over a batch, plus the summed reconstruction error.

    Each user draws from its own stream ``rng.for_user(user_id, epoch)``, so the
    result for a user does not depend on which batch or shard it sits in.
    """
    if user_ids is None:
        user_ids = range(len(batch))
    if len(user_ids) != len(batch):
        raise ValueError("user_ids and batch differ in length")
    acc = Gradients.zeros_like(p)
    recon = 0.0
    for uid, v0 in zip(user_ids, batch):
        recon += quantize(accumulate_user(acc, v0, p, T, rng.for_user(int(uid), epoch)))
    return acc, float(recon)


def cd_statistics(batch, p, T, rng, user_ids=None, epoch=0):
    """Mean CD-T statistics over a batch (ascent direction).

    ``dW_ij^k = mean_users(v0_i^k h0_j - vT_i^k hT_j)``, ``db = mean(v0 - vT)``,
    ``dc = mean(h0 - hT)``, with hidden probabilities in the statistics.
    """
    if not len(batch):
        raise ValueError("cd_statistics needs a non-empty batch")
    if not isinstance(rng, RngStream):
        raise TypeError("cd_statistics needs an RngStream to derive per-user streams")
    acc, _ = cd_sums(batch, p, T, rng, user_ids, epoch)
    n = float(len(batch))
    return Gradients(acc.dW / n, acc.db / n, acc.dc / n)

"""Softmax-visible RBM: parameters, conditionals and exact enumeration oracles.

Levels are 1-based (1..K) everywhere in the public API. Items that a user has
not rated are excluded from every sum: each user owns an RBM over their rated
items only, with weights shared across users.
"""

from dataclasses import dataclass
import itertools

import numpy as np
from scipy.special import expit, logsumexp, softmax

from .errors import CapacityError, ShapeError

MAX_ENUM_HIDDEN = 20
MAX_ENUM_VISIBLE = 4096


@dataclass(frozen=True)
class RbmParams:
    """Model parameters.

    W has shape ``(m, F, K)`` (item, hidden, level), b has shape ``(m, K)``
    and c has shape ``(F,)``.
    """

    W: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        W = np.ascontiguousarray(self.W, dtype=np.float64)
        b = np.ascontiguousarray(self.b, dtype=np.float64)
        c = np.ascontiguousarray(self.c, dtype=np.float64)
        if W.ndim != 3:
            raise ShapeError(f"W must be 3-d (m, F, K), got shape {W.shape}")
        m, F, K = W.shape
        if min(m, F, K) < 1:
            raise ShapeError(f"all dimensions must be positive, got {W.shape}")
        if b.shape != (m, K):
            raise ShapeError(f"b has shape {b.shape}, expected {(m, K)}")
        if c.shape != (F,):
            raise ShapeError(f"c has shape {c.shape}, expected {(F,)}")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)

    @property
    def m(self):
        return self.W.shape[0]

    @property
    def F(self):
        return self.W.shape[1]

    @property
    def K(self):
        return self.W.shape[2]

    @classmethod
    def zeros(cls, m, F, K):
        return cls(np.zeros((m, F, K)), np.zeros((m, K)), np.zeros(F))

    def copy(self):
        return RbmParams(self.W.copy(), self.b.copy(), self.c.copy())

    def is_finite(self):
        return bool(
            np.isfinite(self.W).all()
            and np.isfinite(self.b).all()
            and np.isfinite(self.c).all()
        )

    def to_flat(self):
        return np.concatenate([self.W.ravel(), self.b.ravel(), self.c])

    def tobytes(self):
        return b"".join(
            a.astype("<f8", copy=False).tobytes() for a in (self.W, self.b, self.c)
        )


@dataclass(frozen=True)
class VisibleState:
    """One-hot level assignments over a mask of rated items.

    ``items`` is sorted ascending and unique; ``levels[n]`` is the level
    (1..K) of ``items[n]``.
    """

    items: np.ndarray
    levels: np.ndarray

    def __post_init__(self):
        items = np.asarray(self.items, dtype=np.int64).reshape(-1)
        levels = np.asarray(self.levels, dtype=np.int64).reshape(-1)
        if items.shape != levels.shape:
            raise ShapeError("items and levels must have equal length")
        if items.size > 1 and not (np.diff(items) > 0).all():
            order = np.argsort(items, kind="stable")
            items, levels = items[order], levels[order]
            if not (np.diff(items) > 0).all():
                raise ShapeError("duplicate item in visible state")
        if items.size and (items.min() < 0 or levels.min() < 1):
            raise ShapeError("negative item index or level below 1")
        object.__setattr__(self, "items", items)
        object.__setattr__(self, "levels", levels)

    @classmethod
    def from_dict(cls, ratings):
        """Build from an ``{item: level}`` mapping."""
        items = sorted(ratings)
        return cls(np.array(items, dtype=np.int64), np.array([ratings[i] for i in items], dtype=np.int64))

    @classmethod
    def empty(cls):
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))

    def __len__(self):
        return self.items.size

    @property
    def mask(self):
        return frozenset(int(i) for i in self.items)

    def as_dict(self):
        return {int(i): int(k) for i, k in zip(self.items, self.levels)}

    def one_hot(self, m, K):
        """Dense ``(m, K)`` array with zeros on unmasked items."""
        out = np.zeros((m, K))
        out[self.items, self.levels - 1] = 1.0
        return out


@dataclass(frozen=True)
class HiddenState:
    values: np.ndarray
    binary: bool

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if values.size and (values.min() < 0.0 or values.max() > 1.0):
            raise ShapeError("hidden values must lie in [0, 1]")
        if self.binary and not np.isin(values, (0.0, 1.0)).all():
            raise ShapeError("binary hidden state contains non-binary entries")
        object.__setattr__(self, "values", values)


@dataclass
class Gradients:
    """Parameter-shaped accumulator (ascent direction)."""

    dW: np.ndarray
    db: np.ndarray
    dc: np.ndarray

    @classmethod
    def zeros_like(cls, p):
        return cls(np.zeros_like(p.W), np.zeros_like(p.b), np.zeros_like(p.c))

    @classmethod
    def zeros(cls, m, F, K):
        return cls(np.zeros((m, F, K)), np.zeros((m, K)), np.zeros(F))

    @property
    def size(self):
        return self.dW.size + self.db.size + self.dc.size

    def to_flat(self):
        return np.concatenate([self.dW.ravel(), self.db.ravel(), self.dc])

    @classmethod
    def from_flat(cls, flat, m, F, K):
        flat = np.asarray(flat, dtype=np.float64)
        nW, nb = m * F * K, m * K
        if flat.size != nW + nb + F:
            raise ShapeError(f"flat buffer has {flat.size} entries, expected {nW + nb + F}")
        return cls(
            flat[:nW].reshape(m, F, K).copy(),
            flat[nW:nW + nb].reshape(m, K).copy(),
            flat[nW + nb:].copy(),
        )

    def check_compatible(self, p):
        if self.dW.shape != p.W.shape or self.db.shape != p.b.shape or self.dc.shape != p.c.shape:
            raise ShapeError("gradient shapes do not match parameters")


def _check_visible(v, p):
    if len(v) and (v.items.max() >= p.m or v.levels.max() > p.K):
        raise ShapeError(f"visible state out of range for m={p.m}, K={p.K}")


def _check_hidden(h, p):
    if h.values.shape != (p.F,):
        raise ShapeError(f"hidden state has {h.values.size} entries, expected {p.F}")


def visible_input(v, p):
    """Per-hidden-unit drive from the masked items, ``sum_i sum_k v_i^k W_ij^k``."""
    if not len(v):
        return np.zeros(p.F)
    return p.W[v.items, :, v.levels - 1].sum(axis=0)


def energy(v, h, p):
    _check_visible(v, p)
    _check_hidden(h, p)
    if not h.binary:
        raise ShapeError("energy requires a binary hidden state")
    vb = p.b[v.items, v.levels - 1].sum() if len(v) else 0.0
    return float(-(h.values @ visible_input(v, p)) - vb - h.values @ p.c)


def visible_logits(h, p, i):
    if not 0 <= i < p.m:
        raise IndexError(f"item {i} out of range 0..{p.m - 1}")
    _check_hidden(h, p)
    return p.b[i] + h.values @ p.W[i]


def visible_conditional(h, p, i):
    """p(v_i^k = 1 | h) over k, as a length-K vector."""
    return softmax(visible_logits(h, p, i))


def hidden_conditional(v, p):
    """p(h_j = 1 | v) over j, as a length-F vector."""
    _check_visible(v, p)
    return expit(p.c + visible_input(v, p))


def _hidden_configs(F):
    if F > MAX_ENUM_HIDDEN:
        raise CapacityError(f"hidden enumeration limited to F <= {MAX_ENUM_HIDDEN}, got {F}")
    codes = np.arange(2 ** F, dtype=np.int64)
    return ((codes[:, None] >> np.arange(F)) & 1).astype(np.float64)


def log_f_exact(v, p):
    """log of the hidden-marginalised weight, by enumerating all 2^F hidden states."""
    _check_visible(v, p)
    H = _hidden_configs(p.F)
    vb = p.b[v.items, v.levels - 1].sum() if len(v) else 0.0
    neg_energy = H @ (visible_input(v, p) + p.c) + vb
    return float(logsumexp(neg_energy))


def log_f_factorized(v, p):
    """Same quantity as ``log_f_exact`` using the per-unit product form."""
    _check_visible(v, p)
    vb = p.b[v.items, v.levels - 1].sum() if len(v) else 0.0
    return float(vb + np.logaddexp(0.0, p.c + visible_input(v, p)).sum())


def log_f_gradient_exact(v, p):
    """Exact gradient of ``log_f`` with respect to every parameter."""
    if p.F > MAX_ENUM_HIDDEN:
        raise CapacityError(f"exact gradient limited to F <= {MAX_ENUM_HIDDEN}, got {p.F}")
    ph = hidden_conditional(v, p)
    g = Gradients.zeros_like(p)
    g.dW[v.items, :, v.levels - 1] = ph
    g.db[v.items, v.levels - 1] = 1.0
    g.dc[:] = ph
    return g


def all_visible_states(m, K):
    """Every full-mask visible configuration, K^m of them."""
    if K ** m > MAX_ENUM_VISIBLE:
        raise CapacityError(f"visible enumeration limited to K^m <= {MAX_ENUM_VISIBLE}, got {K ** m}")
    items = np.arange(m, dtype=np.int64)
    return [VisibleState(items, np.array(levels, dtype=np.int64))
            for levels in itertools.product(range(1, K + 1), repeat=m)]


def log_partition(p):
    states = all_visible_states(p.m, p.K)
    return float(logsumexp([log_f_exact(v, p) for v in states]))


def model_distribution(p):
    """(states, probabilities) of the full-mask visible marginal, by enumeration."""
    states = all_visible_states(p.m, p.K)
    logf = np.array([log_f_exact(v, p) for v in states])
    return states, np.exp(logf - logsumexp(logf))


def exact_nll(data, p):
    """Average negative log-likelihood, ``log Z - mean(log f(V_n))``."""
    if not data:
        raise ShapeError("exact_nll needs at least one data point")
    for v in data:
        if len(v) != p.m:
            raise ShapeError("exact_nll requires full-mask visible states")
    log_z = log_partition(p)
    return log_z - float(np.mean([log_f_exact(v, p) for v in data]))

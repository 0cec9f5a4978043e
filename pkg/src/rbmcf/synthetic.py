"""Planted-RBM data generators for tests, demos and benchmarks."""

import numpy as np

from .data import from_records
from .model import RbmParams, model_distribution
from .sampling import _visible_probs, _categorical


def planted_params(m, F, K, scale=1.0, seed=0):
    gen = np.random.default_rng(seed)
    return RbmParams(
        gen.normal(0.0, scale, size=(m, F, K)),
        gen.normal(0.0, scale, size=(m, K)),
        gen.normal(0.0, scale, size=F),
    )


def sample_full_mask_users(p, n, seed=0):
    """Exact draws from the model's visible marginal (tiny models only)."""
    states, probs = model_distribution(p)
    gen = np.random.default_rng(seed)
    return [states[i] for i in gen.choice(len(states), size=n, p=probs)]


def full_mask_dataset(visible_states, K):
    m = len(visible_states[0])
    users = np.repeat(np.arange(len(visible_states)), m)
    items = np.concatenate([v.items for v in visible_states])
    levels = np.concatenate([v.levels for v in visible_states])
    return from_records(users, items, levels, np.zeros(users.size, dtype=np.int64), K)


def movielens_like(n_users, n_items, n_factors=8, K=5, min_per_user=20, max_per_user=200,
                   scale=1.5, seed=0):
    """Sparse ratings where each user has a latent binary profile.

    Items are chosen with a Zipf-like popularity skew; each rating is drawn
    from a planted model's visible conditional given the user's profile.
    """
    gen = np.random.default_rng(seed)
    p = planted_params(n_items, n_factors, K, scale=scale, seed=seed + 1)
    popularity = 1.0 / np.arange(1, n_items + 1) ** 0.8
    popularity /= popularity.sum()
    users, items, levels, stamps = [], [], [], []
    for u in range(n_users):
        n = int(min(gen.integers(min_per_user, max_per_user + 1), n_items))
        chosen = np.sort(gen.choice(n_items, size=n, replace=False, p=popularity))
        h = (gen.random(n_factors) < 0.5).astype(np.float64)
        lv = _categorical(_visible_probs(h, p, chosen), gen)
        users.append(np.full(n, u + 1))
        items.append(chosen + 1)
        levels.append(lv)
        stamps.append(gen.integers(10 ** 9, 2 * 10 ** 9, size=n))
    return from_records(np.concatenate(users), np.concatenate(items),
                        np.concatenate(levels), np.concatenate(stamps), K)

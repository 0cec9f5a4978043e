"""Truncated SVD baseline by block power (subspace) iteration."""

from dataclasses import dataclass
import logging

import numpy as np

from .errors import ConvergenceError

log = logging.getLogger(__name__)

RESIDUAL_LIMIT = 1e-6


@dataclass
class SvdModel:
    """Rank-q factorization ``U diag(s) V^T``; ``s`` is descending."""

    U: np.ndarray
    s: np.ndarray
    V: np.ndarray

    @property
    def q(self):
        return self.s.size

    def truncate(self, q):
        if not 1 <= q <= self.q:
            raise ValueError(f"q must be in 1..{self.q}, got {q}")
        return SvdModel(self.U[:, :q], self.s[:q], self.V[:, :q])

    def reconstruct(self):
        return (self.U * self.s) @ self.V.T

    def predict(self, users, items):
        users = np.asarray(users)
        items = np.asarray(items)
        return np.einsum("nt,t,nt->n", self.U[users], self.s, self.V[items])


def _matvecs(R):
    return (lambda X: np.asarray(R @ X)), (lambda Y: np.asarray(R.T @ Y))


def svd_fit(R, q, oversample=10, tol=1e-12, max_iter=3000, seed=0):
    """Top-q singular triplets of ``R`` (dense array or scipy sparse).

    Iterates ``Q = orth(R V)``, ``P = orth(R^T Q)`` and a Rayleigh-Ritz step on
    the small core ``Q^T R P`` until every kept triplet satisfies
    ``||R v - s u|| <= tol * s_1``. Raises ConvergenceError if the residual is
    still above ``1e-6 * s_1`` at the iteration cap.
    """
    N, M = R.shape
    if not 1 <= q <= min(N, M):
        raise ValueError(f"q must be in 1..{min(N, M)}, got {q}")
    k = min(q + oversample, min(N, M))
    mul, tmul = _matvecs(R)
    gen = np.random.default_rng(seed)
    V = np.linalg.qr(gen.standard_normal((M, k)))[0]
    best = np.inf
    stalled = 0
    for it in range(1, max_iter + 1):
        Q = np.linalg.qr(mul(V))[0]
        P = np.linalg.qr(tmul(Q))[0]
        core = Q.T @ mul(P)
        Uc, s, Vct = np.linalg.svd(core)
        U = Q @ Uc
        V = P @ Vct.T
        scale = s[0] if s[0] > 0 else 1.0
        resid = np.linalg.norm(mul(V[:, :q]) - U[:, :q] * s[:q], axis=0).max() / scale
        if resid <= tol or k == min(N, M) and it >= 2:
            break
        if resid < 0.5 * best:
            best, stalled = resid, 0
        else:
            stalled += 1
            if stalled >= 50 and resid <= RESIDUAL_LIMIT:
                break
    log.debug("svd_fit q=%d: %d iterations, relative residual %.2e", q, it, resid)
    if resid > RESIDUAL_LIMIT:
        raise ConvergenceError(f"block power iteration did not converge: relative residual {resid:.3e}",
                               residual=resid)
    return SvdModel(U[:, :q].copy(), s[:q].copy(), V[:, :q].copy())


def svd_predict(model, user, item):
    return float(model.U[user] @ (model.s * model.V[item]))


def frobenius_error(R, model):
    R = R.toarray() if hasattr(R, "toarray") else np.asarray(R)
    return float(np.linalg.norm(R - model.reconstruct()))

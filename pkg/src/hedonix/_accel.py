"""Hot numeric kernels, compiled with numba when available.

Two kernels dominate training time: the full-softmax context-window
gradient used by the word-embedding trainer, and the masked, quantity
weighted price loss (plus its smoothness penalty) used by the network
trainer.  Each kernel exists twice: a loop formulation compiled with
``numba.njit`` and a vectorised pure-numpy formulation.  Set
``HEDONIC_NUMBA=0`` in the environment to force the numpy path; the
default is numba with a silent fallback when numba cannot be imported.

Matrix products inside the network trunk stay on numpy/BLAS in both
modes; numba brings nothing there.

``benchmarks/bench_kernels.py`` times the two paths against each other.
"""

from __future__ import annotations

import os

import numpy as np


def _resolve_backend() -> str:
    flag = os.environ.get("HEDONIC_NUMBA", "1").strip().lower()
    if flag in ("0", "off", "false", "no"):
        return "numpy"
    try:
        import numba  # noqa: F401
    except ImportError:
        return "numpy"
    return "numba"


_BACKEND = _resolve_backend()


def backend() -> str:
    """Name of the active kernel backend ('numba' or 'numpy')."""
    return _BACKEND


def set_backend(name: str) -> None:
    """Override the backend at runtime; used by tests and benchmarks."""
    global _BACKEND
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and _NUMBA_CBOW is None:
        raise RuntimeError("numba backend requested but numba is not importable")
    _BACKEND = name


# ---------------------------------------------------------------------------
# Kernel 1: CBOW window loss/gradient (full softmax, tied input/output rows)
#
# emb:     (d, r) float64, row j = embedding of token j
# ctx:     (n, K) int64, context token indices per window
# centers: (n,)   int64, center token index per window
# returns: (total negative log-likelihood, gradient d(total)/d(emb))
# ---------------------------------------------------------------------------


def _cbow_loss_grad_loops(emb, ctx, centers):
    n, K = ctx.shape
    d, r = emb.shape
    grad = np.zeros((d, r))
    total = 0.0
    ubar = np.empty(r)
    gin = np.empty(r)
    inv_k = 1.0 / K
    for i in range(n):
        for a in range(r):
            ubar[a] = 0.0
        for k in range(K):
            row = ctx[i, k]
            for a in range(r):
                ubar[a] += emb[row, a]
        for a in range(r):
            ubar[a] *= inv_k
        p = np.dot(emb, ubar)
        mx = p[0]
        for j in range(1, d):
            if p[j] > mx:
                mx = p[j]
        ssum = 0.0
        for j in range(d):
            p[j] = np.exp(p[j] - mx)
            ssum += p[j]
        c = centers[i]
        total -= np.log(p[c] / ssum)
        inv_s = 1.0 / ssum
        for j in range(d):
            p[j] *= inv_s
        p[c] -= 1.0
        # rank-1 update: output-side gradient for every vocabulary row
        for j in range(d):
            coef = p[j]
            for a in range(r):
                grad[j, a] += coef * ubar[a]
        p[c] += 1.0
        g = np.dot(p, emb)
        for a in range(r):
            gin[a] = (g[a] - emb[c, a]) * inv_k
        for k in range(K):
            row = ctx[i, k]
            for a in range(r):
                grad[row, a] += gin[a]
    return total, grad


def _cbow_loss_grad_numpy(emb, ctx, centers, chunk=4096):
    d, r = emb.shape
    n, K = ctx.shape
    grad = np.zeros((d, r))
    total = 0.0
    for lo in range(0, n, chunk):
        cw = ctx[lo : lo + chunk]
        cc = centers[lo : lo + chunk]
        m = cw.shape[0]
        rows = np.arange(m)
        U = emb[cw].mean(axis=1)  # (m, r)
        Z = U @ emb.T  # (m, d)
        zmax = Z.max(axis=1)
        E = np.exp(Z - zmax[:, None])
        S = E.sum(axis=1)
        total += float(np.sum(np.log(S) + zmax - Z[rows, cc]))
        P = E / S[:, None]
        P[rows, cc] -= 1.0
        grad += P.T @ U
        P[rows, cc] += 1.0
        gin = (P @ emb - emb[cc]) / K  # (m, r)
        np.add.at(grad, cw.ravel(), np.repeat(gin, K, axis=0))
    return total, grad


# ---------------------------------------------------------------------------
# Kernel 2: masked quantity-weighted squared loss with L1 smoothness penalty
#
# H, P, Q: (n, T) float64; M: (n, T) bool marks observed price cells
# lam:     penalty weight on |H[i, t+1] - H[i, t]| summed over all i, t
# returns: (loss, dloss/dH); sign(0) treated as 0 at exact ties
# ---------------------------------------------------------------------------


def _price_loss_grad_loops(H, P, Q, M, lam):
    n, T = H.shape
    loss = 0.0
    G = np.zeros((n, T))
    for i in range(n):
        for t in range(T):
            if M[i, t]:
                resid = P[i, t] - H[i, t]
                loss += resid * resid * Q[i, t]
                G[i, t] = -2.0 * resid * Q[i, t]
        if lam > 0.0:
            for t in range(T - 1):
                diff = H[i, t + 1] - H[i, t]
                if diff > 0.0:
                    loss += lam * diff
                    G[i, t + 1] += lam
                    G[i, t] -= lam
                elif diff < 0.0:
                    loss -= lam * diff
                    G[i, t + 1] -= lam
                    G[i, t] += lam
    return loss, G


def _price_loss_grad_numpy(H, P, Q, M, lam):
    resid = np.where(M, P - H, 0.0)
    wr = resid * Q
    loss = float(np.sum(wr * resid))
    G = -2.0 * np.where(M, wr, 0.0)
    if lam > 0.0:
        diff = np.diff(H, axis=1)
        loss += lam * float(np.sum(np.abs(diff)))
        s = lam * np.sign(diff)
        G[:, 1:] += s
        G[:, :-1] -= s
    return loss, G


# ---------------------------------------------------------------------------
# Backend wiring
# ---------------------------------------------------------------------------

_NUMBA_CBOW = None
_NUMBA_PRICE = None

if _BACKEND == "numba":
    from numba import njit

    _NUMBA_CBOW = njit(cache=True)(_cbow_loss_grad_loops)
    _NUMBA_PRICE = njit(cache=True)(_price_loss_grad_loops)


def cbow_loss_grad(emb: np.ndarray, ctx: np.ndarray, centers: np.ndarray):
    """Total negative log-likelihood and gradient over a batch of windows."""
    if _BACKEND == "numba":
        return _NUMBA_CBOW(emb, ctx, centers)
    return _cbow_loss_grad_numpy(emb, ctx, centers)


def price_loss_grad(H, P, Q, M, lam: float):
    """Masked weighted squared loss plus smoothness penalty, and d/dH."""
    if _BACKEND == "numba":
        return _NUMBA_PRICE(H, P, Q, M, lam)
    return _price_loss_grad_numpy(H, P, Q, M, lam)

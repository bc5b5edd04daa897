"""Pure numpy implementation of the per-group matching kernel.

This is both the fallback backend and the reference the compiled kernel is
tested against. The linear algebra shared by both backends (logits and their
gradients) lives in :mod:`maxmatch.kernels`; this module covers what happens
between the logits and the loss. Shapes, per group of ``K`` objects:

* ``L``  (K, C)  pair logits ``f(x_k) . g(y_c)``, true target at column ``t``
* ``E``  (K, d)  source embeddings ``f(x_k)``
* ``H``  (K, e)  group-weighting features; ``E`` or clamped ``softmax(L)``
"""
from __future__ import annotations

import numpy as np

PROB_FLOOR = 1e-12

# loss variant codes, shared with the compiled kernel
MAX_MATCHING, PAIRWISE, MATCHING, MAXIMIZING = 0, 1, 2, 3
SIM_DOT, SIM_NEG_KL = 0, 1


def _log_sigmoid(u):
    # -softplus(-u), stable for both signs
    return -(np.maximum(-u, 0.0) + np.log1p(np.exp(-np.abs(u))))


def _sigmoid(u):
    e = np.exp(-np.abs(u))
    return np.where(u >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _argmax(v) -> int:
    # np.argmax already returns the first maximal index
    return int(np.argmax(v))


def _sim_matrix(A, B, sim, logB=None, selfterm=None):
    """``M[k, l] = S(A[k], B[l])``."""
    if sim == SIM_DOT:
        return A @ B.T
    # -KL(a||b) = -sum a log a + sum a log b
    return -selfterm[:, None] + A @ logB.T


def group_forward(L, E, t, sim, prob, lam):
    """Forward pass for one group; returns a cache holding every intermediate."""
    K = L.shape[0]
    m = L.max(axis=1, keepdims=True)
    X = np.exp(L - m)
    Z = X.sum(axis=1, keepdims=True)
    logP = L - (m + np.log(Z))
    P = X / Z
    pair = logP[:, t].copy()
    cache = {"K": K, "t": t, "sim": sim, "prob": prob, "lam": lam,
             "P": P, "pair": pair}
    if prob:
        Pc = np.maximum(P, PROB_FLOOR)
        S = Pc.sum(axis=1, keepdims=True)
        H = Pc / S
        cache.update(S=S, Q=H)
    else:
        H = E
    cache["H"] = H

    if K == 1:
        glw = np.zeros(1)
        cache.update(M=np.zeros((1, 0)), ST=np.zeros((1, 0)), C=np.zeros_like(H), u=None)
    else:
        if sim == SIM_NEG_KL:
            logH = np.log(H)
            selfH = (H * logH).sum(axis=1)
            cache.update(logH=logH, selfH=selfH)
            M = _sim_matrix(H, H, sim, logH, selfH)
        else:
            M = _sim_matrix(H, H, sim)
        off = ~np.eye(K, dtype=bool)
        Mm = np.where(off, M, -np.inf)
        Ms = Mm - Mm.max(axis=1, keepdims=True)
        Es = np.where(off, np.exp(Ms), 0.0)
        ST = Es / Es.sum(axis=1, keepdims=True)
        C = ST @ H
        if sim == SIM_NEG_KL:
            logC = np.log(C)
            u = -(C * (logC - cache["logH"])).sum(axis=1)
            cache["logC"] = logC
        else:
            u = (C * H).sum(axis=1)
        glw = _log_sigmoid(u)
        cache.update(M=M, ST=ST, C=C, u=u)
    cache["glw"] = glw
    cache["scores"] = pair + lam * glw
    return cache


def upstream(cache, variant):
    """Loss value, selected index and d(loss)/d(pair), d(loss)/d(glw)."""
    K = cache["K"]
    pair, scores, lam = cache["pair"], cache["scores"], cache["lam"]
    a = np.zeros(K)
    b = np.zeros(K)
    if variant == MAX_MATCHING:
        k = _argmax(scores)
        loss = -scores[k]
        a[k] = -1.0
        b[k] = -lam
    elif variant == PAIRWISE:
        k = _argmax(pair)
        loss = -pair.sum()
        a[:] = -1.0
    elif variant == MATCHING:
        k = _argmax(scores)
        loss = -scores.sum()
        a[:] = -1.0
        b[:] = -lam
    elif variant == MAXIMIZING:
        k = _argmax(pair)
        loss = -pair[k]
        a[k] = -1.0
    else:
        raise ValueError(f"unknown loss variant code {variant}")
    return float(loss), k, a, b


def group_backward(cache, a, b):
    """Return ``(dL, dE)`` given upstream gradients on pair and glw terms.

    ``dE`` only carries the group-weighting path; it is zero with prob features.
    """
    K, t = cache["K"], cache["t"]
    P, H, sim, prob = cache["P"], cache["H"], cache["sim"], cache["prob"]
    dL = -a[:, None] * P
    dL[:, t] += a
    dH = np.zeros_like(H)

    if K > 1 and np.any(b != 0.0):
        u, C, ST = cache["u"], cache["C"], cache["ST"]
        du = b * _sigmoid(-u)
        if sim == SIM_NEG_KL:
            logH, logC = cache["logH"], cache["logC"]
            dC = du[:, None] * (-(logC - logH) - 1.0)
            dH += du[:, None] * (C / H)
        else:
            dC = du[:, None] * H
            dH += du[:, None] * C
        # context vector C = ST @ H
        dST = dC @ H.T
        dH += ST.T @ dC
        # row softmax over the off-diagonal similarities
        dM = ST * (dST - (ST * dST).sum(axis=1, keepdims=True))
        if sim == SIM_NEG_KL:
            dH += -dM.sum(axis=1)[:, None] * (logH + 1.0) + dM @ logH
            dH += (dM.T @ H) / H
        else:
            dH += dM @ H + dM.T @ H

    if prob:
        Q, S = cache["Q"], cache["S"]
        dPc = (dH - (dH * Q).sum(axis=1, keepdims=True)) / S
        dP = np.where(P > PROB_FLOOR, dPc, 0.0)
        dL += P * (dP - (P * dP).sum(axis=1, keepdims=True))
        return dL, None
    return dL, dH


def group_terms(L, E, offsets, true_pos, variant, sim, prob, lam, want_grad=True):
    """Losses, selections and logit/embedding gradients for a batch of groups.

    Rows ``offsets[i]:offsets[i + 1]`` of ``L`` and ``E`` belong to group ``i``.
    Returns ``(losses, selected, dL, dE)``; the gradients are ``None`` when
    ``want_grad`` is false.
    """
    B = offsets.shape[0] - 1
    losses = np.empty(B)
    selected = np.empty(B, dtype=np.int64)
    dL = np.zeros_like(L) if want_grad else None
    dE = np.zeros_like(E) if want_grad else None
    for i in range(B):
        lo, hi = offsets[i], offsets[i + 1]
        cache = group_forward(L[lo:hi], E[lo:hi], int(true_pos[i]), sim, prob, lam)
        losses[i], selected[i], a, b = upstream(cache, variant)
        if want_grad:
            gL, gE = group_backward(cache, a, b)
            dL[lo:hi] = gL
            if gE is not None:
                dE[lo:hi] = gE
    return losses, selected, dL, dE

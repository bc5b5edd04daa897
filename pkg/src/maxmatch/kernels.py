"""Backend selection and the linear algebra shared by both backends.

Logits and their gradients are matrix products handed to BLAS. The
per-group nonlinear part (softmax, group weighting, selection) comes from the
compiled extension when it imports, else from the numpy implementation.
Setting ``MAXMATCH_PURE=1`` forces the numpy implementation.
"""
import os
from functools import partial

import numpy as np

from . import _pykernel
from ._pykernel import (  # noqa: F401
    MATCHING,
    MAX_MATCHING,
    MAXIMIZING,
    PAIRWISE,
    SIM_DOT,
    SIM_NEG_KL,
)

try:
    if os.environ.get("MAXMATCH_PURE", "") not in ("", "0"):
        raise ImportError("pure backend requested")
    from . import _ckernel as _impl

    BACKEND = "cython"
except ImportError:
    _impl = _pykernel
    BACKEND = "python"


def _group_rows(offsets: np.ndarray) -> np.ndarray:
    return np.repeat(np.arange(offsets.shape[0] - 1), np.diff(offsets))


def batch_loss_grad(F, offsets, G, cand, true_pos, variant, sim, prob, lam,
                    scale, dF, dG, want_grad=True, terms=None):
    """Loss and gradients for a batch of groups.

    ``F`` holds the source embeddings of every object, group ``i`` owning rows
    ``offsets[i]:offsets[i + 1]``. ``cand`` is ``(B, C)`` or ``(1, C)`` (one
    set shared by every group) and indexes rows of ``G``; the true target sits
    at column ``true_pos[i]``. ``dF``/``dG`` are accumulated in place,
    multiplied by ``scale``. Returns ``(losses, selected)``.
    """
    terms = terms or _impl.group_terms
    shared = cand.shape[0] == 1
    if shared:
        Gc = G[cand[0]]
        L = F @ Gc.T
    else:
        grp = _group_rows(offsets)
        Gc = G[cand][grp]  # (N, C, d)
        L = np.matmul(Gc, F[:, :, None])[:, :, 0]
    L = np.ascontiguousarray(L)
    losses, selected, dL, dE = terms(L, F, offsets, true_pos, variant, sim, prob,
                                     lam, want_grad)
    if not want_grad:
        return losses, selected
    if shared:
        gF = dL @ Gc
        np.add.at(dG, cand[0], scale * (dL.T @ F))
    else:
        gF = np.matmul(dL[:, None, :], Gc)[:, 0, :]
        d = F.shape[1]
        np.add.at(dG, cand[grp].ravel(),
                  (scale * dL[:, :, None] * F[:, None, :]).reshape(-1, d))
    if not prob:
        gF += dE
    dF += scale * gF
    return losses, selected


def available_backends() -> dict:
    """Map backend name to a ``batch_loss_grad`` using it, for every importable backend."""
    found = {"python": partial(batch_loss_grad, terms=_pykernel.group_terms)}
    try:
        from . import _ckernel
    except ImportError:
        pass
    else:
        found["cython"] = partial(batch_loss_grad, terms=_ckernel.group_terms)
    return found

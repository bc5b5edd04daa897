# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-group terms; same contract as ``_pykernel.group_terms``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log1p

ctypedef cnp.int64_t i64

cdef double PROB_FLOOR = 1e-12
cdef int MAX_MATCHING = 0, PAIRWISE = 1, MATCHING = 2, MAXIMIZING = 3
cdef int SIM_NEG_KL = 1


cdef inline double _log_sigmoid(double u) noexcept nogil:
    if u >= 0.0:
        return -log1p(exp(-u))
    return u - log1p(exp(u))


cdef inline double _sigmoid_neg(double u) noexcept nogil:
    # sigmoid(-u)
    cdef double e
    if u >= 0.0:
        e = exp(-u)
        return e / (1.0 + e)
    return 1.0 / (1.0 + exp(u))


def group_terms(const double[:, ::1] L, const double[:, ::1] F,
                const i64[::1] offsets, const i64[::1] true_pos, int variant,
                int sim, int prob, double lam, bint want_grad=True):
    cdef Py_ssize_t B = offsets.shape[0] - 1
    cdef Py_ssize_t C = L.shape[1]
    cdef Py_ssize_t d = F.shape[1]
    cdef Py_ssize_t e = C if prob else d
    cdef Py_ssize_t Kmax = 1, i
    for i in range(B):
        if offsets[i + 1] - offsets[i] > Kmax:
            Kmax = offsets[i + 1] - offsets[i]
    if variant < 0 or variant > 3:
        raise ValueError(f"unknown loss variant code {variant}")

    losses_arr = np.empty(B)
    selected_arr = np.empty(B, dtype=np.int64)
    cdef double[::1] losses = losses_arr
    cdef i64[::1] selected = selected_arr

    N = offsets[B]
    dL_arr = np.zeros((N, C)) if want_grad else None
    dE_arr = np.zeros((N, d)) if want_grad else None
    cdef double[:, ::1] dLo = dL_arr if want_grad else np.zeros((0, C))
    cdef double[:, ::1] dEo = dE_arr if want_grad else np.zeros((0, d))
    cdef double[:, ::1] P = np.empty((Kmax, C))
    cdef double[:, ::1] dL = np.empty((Kmax, C))
    cdef double[:, ::1] H = np.empty((Kmax, e))
    cdef double[:, ::1] logH = np.empty((Kmax, e))
    cdef double[:, ::1] Cx = np.empty((Kmax, e))
    cdef double[:, ::1] logC = np.empty((Kmax, e))
    cdef double[:, ::1] dH = np.empty((Kmax, e))
    cdef double[:, ::1] dC = np.empty((Kmax, e))
    cdef double[:, ::1] ST = np.empty((Kmax, Kmax))
    cdef double[:, ::1] dST = np.empty((Kmax, Kmax))
    cdef double[:, ::1] dM = np.empty((Kmax, Kmax))
    cdef double[::1] Srow = np.empty(Kmax)
    cdef double[::1] selfH = np.empty(Kmax)
    cdef double[::1] u = np.empty(Kmax)
    cdef double[::1] pair = np.empty(Kmax)
    cdef double[::1] glw = np.empty(Kmax)
    cdef double[::1] scores = np.empty(Kmax)
    cdef double[::1] a = np.empty(Kmax)
    cdef double[::1] bw = np.empty(Kmax)

    cdef bint need_w = variant == MAX_MATCHING or variant == MATCHING
    cdef bint negkl = sim == SIM_NEG_KL
    cdef bint any_b
    cdef Py_ssize_t lo, K, k, l, j, q, t, best
    cdef double m, z, lz, acc, acc2, best_v, loss, dl, s_val, dp_dot

    with nogil:
        for i in range(B):
            lo = offsets[i]
            K = offsets[i + 1] - lo
            t = true_pos[i]

            # pair matching: log-softmax over the candidate set
            for k in range(K):
                m = -1e308
                for j in range(C):
                    if L[lo + k, j] > m:
                        m = L[lo + k, j]
                z = 0.0
                for j in range(C):
                    P[k, j] = exp(L[lo + k, j] - m)
                    z = z + P[k, j]
                lz = m + log(z)
                for j in range(C):
                    P[k, j] = P[k, j] / z
                pair[k] = L[lo + k, t] - lz
                glw[k] = 0.0

            # group weighting
            if need_w and K > 1:
                for k in range(K):
                    if prob:
                        acc = 0.0
                        for j in range(C):
                            H[k, j] = P[k, j] if P[k, j] > PROB_FLOOR else PROB_FLOOR
                            acc = acc + H[k, j]
                        Srow[k] = acc
                        for j in range(C):
                            H[k, j] = H[k, j] / acc
                    else:
                        for q in range(d):
                            H[k, q] = F[lo + k, q]
                    if negkl:
                        acc = 0.0
                        for q in range(e):
                            logH[k, q] = log(H[k, q])
                            acc = acc + H[k, q] * logH[k, q]
                        selfH[k] = acc
                for k in range(K):
                    # similarities to the other members, softmax-normalized
                    m = -1e308
                    for l in range(K):
                        if l == k:
                            continue
                        acc = 0.0
                        if negkl:
                            for q in range(e):
                                acc = acc + H[k, q] * logH[l, q]
                            acc = acc - selfH[k]
                        else:
                            for q in range(e):
                                acc = acc + H[k, q] * H[l, q]
                        ST[k, l] = acc
                        if acc > m:
                            m = acc
                    z = 0.0
                    for l in range(K):
                        if l == k:
                            ST[k, l] = 0.0
                        else:
                            ST[k, l] = exp(ST[k, l] - m)
                            z = z + ST[k, l]
                    for l in range(K):
                        ST[k, l] = ST[k, l] / z
                    # context vector and its similarity to the object
                    for q in range(e):
                        acc = 0.0
                        for l in range(K):
                            acc = acc + ST[k, l] * H[l, q]
                        Cx[k, q] = acc
                    acc = 0.0
                    if negkl:
                        for q in range(e):
                            logC[k, q] = log(Cx[k, q])
                            acc = acc - Cx[k, q] * (logC[k, q] - logH[k, q])
                    else:
                        for q in range(e):
                            acc = acc + Cx[k, q] * H[k, q]
                    u[k] = acc
                    glw[k] = _log_sigmoid(acc)

            for k in range(K):
                scores[k] = pair[k] + lam * glw[k]
                a[k] = 0.0
                bw[k] = 0.0

            # selection and upstream gradients
            best = 0
            if variant == MAX_MATCHING or variant == MATCHING:
                best_v = scores[0]
                for k in range(1, K):
                    if scores[k] > best_v:
                        best_v = scores[k]
                        best = k
            else:
                best_v = pair[0]
                for k in range(1, K):
                    if pair[k] > best_v:
                        best_v = pair[k]
                        best = k
            if variant == MAX_MATCHING:
                loss = -scores[best]
                a[best] = -1.0
                bw[best] = -lam
            elif variant == PAIRWISE:
                loss = 0.0
                for k in range(K):
                    loss = loss + pair[k]
                    a[k] = -1.0
                loss = -loss
            elif variant == MATCHING:
                loss = 0.0
                for k in range(K):
                    loss = loss + scores[k]
                    a[k] = -1.0
                    bw[k] = -lam
                loss = -loss
            else:
                loss = -pair[best]
                a[best] = -1.0
            losses[i] = loss
            selected[i] = best

            if not want_grad:
                continue

            for k in range(K):
                for j in range(C):
                    dL[k, j] = -a[k] * P[k, j]
                dL[k, t] = dL[k, t] + a[k]
                for q in range(e):
                    dH[k, q] = 0.0

            any_b = False
            for k in range(K):
                if bw[k] != 0.0:
                    any_b = True
            if need_w and K > 1 and any_b:
                for k in range(K):
                    dl = bw[k] * _sigmoid_neg(u[k])
                    for q in range(e):
                        if negkl:
                            dC[k, q] = dl * (-(logC[k, q] - logH[k, q]) - 1.0)
                            dH[k, q] = dH[k, q] + dl * (Cx[k, q] / H[k, q])
                        else:
                            dC[k, q] = dl * H[k, q]
                            dH[k, q] = dH[k, q] + dl * Cx[k, q]
                for k in range(K):
                    for l in range(K):
                        acc = 0.0
                        for q in range(e):
                            acc = acc + dC[k, q] * H[l, q]
                        dST[k, l] = acc
                for l in range(K):
                    for q in range(e):
                        acc = 0.0
                        for k in range(K):
                            acc = acc + ST[k, l] * dC[k, q]
                        dH[l, q] = dH[l, q] + acc
                for k in range(K):
                    acc = 0.0
                    for l in range(K):
                        acc = acc + ST[k, l] * dST[k, l]
                    for l in range(K):
                        dM[k, l] = ST[k, l] * (dST[k, l] - acc)
                for k in range(K):
                    s_val = 0.0
                    for l in range(K):
                        s_val = s_val + dM[k, l]
                    for q in range(e):
                        acc = 0.0
                        acc2 = 0.0
                        for l in range(K):
                            if negkl:
                                acc = acc + dM[k, l] * logH[l, q]
                                acc2 = acc2 + dM[l, k] * H[l, q]
                            else:
                                acc = acc + dM[k, l] * H[l, q]
                                acc2 = acc2 + dM[l, k] * H[l, q]
                        if negkl:
                            dH[k, q] = dH[k, q] - s_val * (logH[k, q] + 1.0) + acc + acc2 / H[k, q]
                        else:
                            dH[k, q] = dH[k, q] + acc + acc2

                if prob:
                    # back through the clamp/renormalization and the softmax
                    for k in range(K):
                        acc = 0.0
                        for j in range(C):
                            acc = acc + dH[k, j] * H[k, j]
                        for j in range(C):
                            if P[k, j] > PROB_FLOOR:
                                dC[k, j] = (dH[k, j] - acc) / Srow[k]
                            else:
                                dC[k, j] = 0.0
                        dp_dot = 0.0
                        for j in range(C):
                            dp_dot = dp_dot + P[k, j] * dC[k, j]
                        for j in range(C):
                            dL[k, j] = dL[k, j] + P[k, j] * (dC[k, j] - dp_dot)

            for k in range(K):
                for j in range(C):
                    dLo[lo + k, j] = dL[k, j]
                if not prob:
                    for q in range(d):
                        dEo[lo + k, q] = dH[k, q]

    return losses_arr, selected_arr, dL_arr, dE_arr

"""Slow, literal reference computations used as test oracles.

Nothing here imports the package: every quantity is recomputed from its
definition with plain loops so a shared bug cannot hide on both sides.
"""
import itertools
import math


def dot(a, b):
    return sum(x * y for x, y in zip(a, b))


def neg_kl(p, q, floor=1e-12):
    p = [max(x, floor) for x in p]
    q = [max(x, floor) for x in q]
    sp, sq = sum(p), sum(q)
    p = [x / sp for x in p]
    q = [x / sq for x in q]
    return -sum(a * math.log(a / b) for a, b in zip(p, q))


def log_sigmoid(t):
    if t >= 0:
        return -math.log1p(math.exp(-t))
    return t - math.log1p(math.exp(t))


def log_pair_prob(fx, targets, true_row):
    """``log softmax`` of ``fx . g`` over ``targets``, read at ``true_row``."""
    logits = [dot(fx, g) for g in targets]
    m = max(logits)
    return logits[true_row] - (m + math.log(sum(math.exp(z - m) for z in logits)))


def group_weights(H, sim):
    """Literal similarity -> softmax -> context -> sigmoid steps for every object.

    Returns ``(sims, norm_sims, contexts, log_weights)``; ``sims[k]`` lists the
    similarities of object ``k`` to the others in group order.
    """
    S = dot if sim == "dot" else neg_kl
    K = len(H)
    if K == 1:
        return [[]], [[]], [[0.0] * len(H[0])], [0.0]
    sims, norms, contexts, logw = [], [], [], []
    for k in range(K):
        others = [H[l] for l in range(K) if l != k]
        s = [S(H[k], o) for o in others]
        m = max(s)
        e = [math.exp(v - m) for v in s]
        z = sum(e)
        w = [v / z for v in e]
        c = [sum(w[j] * others[j][q] for j in range(K - 1)) for q in range(len(H[k]))]
        sims.append(s)
        norms.append(w)
        contexts.append(c)
        logw.append(log_sigmoid(S(c, H[k])))
    return sims, norms, contexts, logw


def softmax(z):
    m = max(z)
    e = [math.exp(v - m) for v in z]
    s = sum(e)
    return [v / s for v in e]


def scores(F, targets, true_row, H, sim, lam=1.0):
    pair = [log_pair_prob(fx, targets, true_row) for fx in F]
    logw = group_weights(H, sim)[3]
    return [p + lam * w for p, w in zip(pair, logw)], pair, logw


def max_matching_loss(F, targets, true_row, H, sim, lam=1.0):
    """Exhaustive over ``k``: the smallest negated score."""
    sc, _, _ = scores(F, targets, true_row, H, sim, lam)
    return min(-s for s in sc)


def rank_scan(ranked, truth):
    """1-based position of ``truth`` found by scanning; 0 when absent."""
    for pos, item in enumerate(ranked, 1):
        if item == truth:
            return pos
    return 0


def hit(ranked, truth, k):
    r = rank_scan(ranked, truth)
    return 1 if 1 <= r <= k else 0


def ndcg(ranked, truth, k):
    r = rank_scan(ranked, truth)
    return 1.0 / math.log2(1 + r) if 1 <= r <= k else 0.0


def all_rankings(n):
    return itertools.permutations(range(n))


def rs_plus_ranking(f_table, g_table, group, k):
    """Max over group items of ``log P(y | x)``; group excluded; ties by id."""
    n_items = len(g_table)
    best = {}
    for y in range(n_items):
        if y in group:
            continue
        best[y] = max(log_pair_prob(f_table[x], g_table, y) for x in group)
    order = sorted(best, key=lambda y: (-best[y], y))
    return order[:k]

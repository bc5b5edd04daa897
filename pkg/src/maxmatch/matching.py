"""Max-Matching loss: pair matching, group weighting and max selection.

Targets live in a *target universe*: the ``g`` vocabulary for categorical
targets, or the rows of a feature ``pool`` for feature-valued targets (the
PLL case, where every training instance is a candidate target). A target is
always referenced by its row in that universe.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _pykernel, kernels
from .core_math import logsumexp
from .model import GradBuffer, ModelParams, apply_map, l2_normalize

VARIANTS = {
    "max-matching": kernels.MAX_MATCHING,
    "pairwise": kernels.PAIRWISE,
    "matching": kernels.MATCHING,
    "maximizing": kernels.MAXIMIZING,
}
SIMILARITIES = {"dot": kernels.SIM_DOT, "neg_kl": kernels.SIM_NEG_KL}
FEATURE_MODES = ("embed", "prob")
FULL_VOCAB_LIMIT = 10_000


class ContractError(ValueError):
    """Raised when a documented precondition is violated."""


@dataclass(frozen=True)
class MatchConfig:
    sim: str = "dot"
    features: str = "embed"
    lam: float = 1.0
    variant: str = "max-matching"
    negatives: int = 100
    full_vocab_limit: int = FULL_VOCAB_LIMIT

    def __post_init__(self):
        if self.sim not in SIMILARITIES:
            raise ValueError(f"unknown similarity {self.sim!r}")
        if self.features not in FEATURE_MODES:
            raise ValueError(f"unknown feature mode {self.features!r}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown loss variant {self.variant!r}")
        if self.sim == "neg_kl" and self.features != "prob":
            raise ValueError("neg_kl similarity needs probabilistic features")
        if self.negatives < 1:
            raise ValueError("negatives must be >= 1")

    def with_variant(self, variant: str) -> "MatchConfig":
        return MatchConfig(self.sim, self.features, self.lam, variant,
                           self.negatives, self.full_vocab_limit)


@dataclass(frozen=True)
class GroupSample:
    """One coarse relation: ``K`` source objects collectively tied to a target.

    ``group`` is an int id array ``(K,)`` or a feature matrix ``(K, n)``.
    ``target`` is an id, or a feature vector with ``target_index`` giving its
    row in the target pool.
    """

    group: np.ndarray
    target: object
    target_index: Optional[int] = None

    def __post_init__(self):
        g = np.asarray(self.group)
        if g.ndim == 1 and not np.issubdtype(g.dtype, np.integer):
            g = g[None, :]
        if g.shape[0] < 1:
            raise ContractError("a group needs at least one object")
        object.__setattr__(self, "group", g)

    @property
    def K(self) -> int:
        return int(self.group.shape[0])


@dataclass(frozen=True)
class NegativeSet:
    """Candidate target rows for the pair-matching softmax denominator."""

    ids: np.ndarray
    true_pos: int

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64)
        if ids.ndim != 1 or not 0 <= self.true_pos < ids.size:
            raise ContractError("true target must be inside the negative set")
        if np.unique(ids).size != ids.size:
            raise ContractError("negative set has duplicates")
        object.__setattr__(self, "ids", ids)

    @property
    def target(self) -> int:
        return int(self.ids[self.true_pos])

    @classmethod
    def full(cls, size: int, target: int) -> "NegativeSet":
        if not 0 <= target < size:
            raise ContractError(f"target {target} outside universe of size {size}")
        return cls(np.arange(size, dtype=np.int64), int(target))

    @classmethod
    def sample(cls, size: int, target: int, m: int, rng) -> "NegativeSet":
        """``m`` distinct non-target rows drawn uniformly, plus the target."""
        if not 0 <= target < size:
            raise ContractError(f"target {target} outside universe of size {size}")
        m = min(m, size - 1)
        others = rng.choice(size - 1, size=m, replace=False)
        others = others + (others >= target)
        ids = np.sort(np.append(others, target))
        return cls(ids, int(np.searchsorted(ids, target)))

    @classmethod
    def for_target(cls, size, target, cfg: MatchConfig, rng=None) -> "NegativeSet":
        if size <= cfg.full_vocab_limit:
            return cls.full(size, target)
        if rng is None:
            raise ValueError("sampled negatives need a random generator")
        return cls.sample(size, target, cfg.negatives, rng)


@dataclass
class MatchBreakdown:
    pair_log_probs: np.ndarray
    similarities: np.ndarray
    norm_similarities: np.ndarray
    context_vectors: np.ndarray
    group_log_weights: np.ndarray
    scores: np.ndarray
    selected: int
    lam: float = 1.0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "K": int(self.pair_log_probs.size),
            "pair_log_probs": self.pair_log_probs.tolist(),
            "group_log_weights": self.group_log_weights.tolist(),
            "group_weights": np.exp(self.group_log_weights).tolist(),
            "scores": self.scores.tolist(),
            "selected": int(self.selected),
            "similarities": self.similarities.tolist(),
            "norm_similarities": self.norm_similarities.tolist(),
            "context_vectors": self.context_vectors.tolist(),
            "lam": float(self.lam),
            **self.extra,
        }


BREAKDOWN_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "MatchBreakdown",
    "type": "object",
    "required": ["K", "pair_log_probs", "group_log_weights", "group_weights",
                 "scores", "selected", "similarities", "norm_similarities",
                 "context_vectors", "lam"],
    "properties": {
        "K": {"type": "integer", "minimum": 1},
        "pair_log_probs": {"type": "array", "items": {"type": "number", "maximum": 0}},
        "group_log_weights": {"type": "array", "items": {"type": "number", "maximum": 0}},
        "group_weights": {"type": "array",
                          "items": {"type": "number", "minimum": 0, "maximum": 1}},
        "scores": {"type": "array", "items": {"type": "number"}},
        "selected": {"type": "integer", "minimum": 0},
        "similarities": {"type": "array", "items": {"type": "array"}},
        "norm_similarities": {"type": "array", "items": {"type": "array"}},
        "context_vectors": {"type": "array", "items": {"type": "array"}},
        "lam": {"type": "number"},
        "group_index": {"type": "integer", "minimum": 0},
        "target": {},
    },
}


# -- target universe -----------------------------------------------------------

def universe_size(params: ModelParams, pool=None) -> int:
    if params.spec_g.categorical:
        return params.spec_g.in_dim
    if pool is None:
        raise ValueError("feature-valued targets need a target pool")
    return int(np.asarray(pool).shape[0])


def _resolve(params: ModelParams, sample: GroupSample, pool):
    """Return ``(pool, target_row)`` for one sample, appending ad-hoc targets."""
    if params.spec_g.categorical:
        return None, int(sample.target)
    if sample.target_index is not None:
        if pool is None:
            raise ValueError("target_index given without a target pool")
        return pool, int(sample.target_index)
    row = np.asarray(sample.target, dtype=np.float64)[None, :]
    pool = row if pool is None else np.vstack([np.asarray(pool, dtype=np.float64), row])
    return pool, pool.shape[0] - 1


def _forward_cache(params, sample, cfg, pool=None, negs=None):
    pool, row = _resolve(params, sample, pool)
    size = universe_size(params, pool)
    if negs is None:
        negs = NegativeSet.for_target(size, row, cfg,
                                      rng=np.random.default_rng(0))
    elif negs.target != row:
        raise ContractError("negative set does not contain the sample's target")
    F = apply_map(params.spec_f, params.f, sample.group)
    Gc = apply_map(params.spec_g, params.g, negs.ids if pool is None else pool[negs.ids])
    cache = _pykernel.group_forward(
        np.asarray(F) @ np.asarray(Gc).T, np.asarray(F), negs.true_pos,
        SIMILARITIES[cfg.sim], cfg.features == "prob", cfg.lam,
    )
    return cache


def _off_diagonal(M: np.ndarray) -> np.ndarray:
    K = M.shape[0]
    if K == 1:
        return np.zeros((1, 0))
    return M[~np.eye(K, dtype=bool)].reshape(K, K - 1)


def _breakdown(cache, variant: str) -> tuple[float, MatchBreakdown]:
    loss, k, _, _ = _pykernel.upstream(cache, VARIANTS[variant])
    bd = MatchBreakdown(
        pair_log_probs=cache["pair"],
        similarities=_off_diagonal(cache["M"]),
        norm_similarities=_off_diagonal(cache["ST"]),
        context_vectors=cache["C"],
        group_log_weights=cache["glw"],
        scores=cache["scores"],
        selected=k,
        lam=cache["lam"],
    )
    return loss, bd


# -- per-sample API ----------------------------------------------------------

def pair_match_log_prob(params: ModelParams, x, y: int, negs: NegativeSet,
                        pool=None) -> float:
    """``log P(y | x)`` with the softmax taken over ``negs``."""
    hits = np.flatnonzero(negs.ids == y)
    if hits.size == 0:
        raise ContractError(f"target {y} is not in the negative set")
    fx = apply_map(params.spec_f, params.f, x)
    rows = negs.ids if pool is None else np.asarray(pool)[negs.ids]
    logits = apply_map(params.spec_g, params.g, rows) @ fx
    return float(logits[hits[0]] - logsumexp(logits))


def group_weights(params: ModelParams, sample: GroupSample, sim: str = "dot",
                  mode: str = "embed", pool=None, negs=None):
    """Similarities, normalized similarities, context vectors and log weights."""
    cfg = MatchConfig(sim=sim, features=mode)
    cache = _forward_cache(params, sample, cfg, pool, negs)
    return (_off_diagonal(cache["M"]), _off_diagonal(cache["ST"]),
            cache["C"], cache["glw"])


def max_matching_loss(params: ModelParams, sample: GroupSample, cfg: MatchConfig,
                      pool=None, negs=None) -> tuple[float, MatchBreakdown]:
    cache = _forward_cache(params, sample, cfg, pool, negs)
    return _breakdown(cache, "max-matching")


def total_probability_objective(params: ModelParams, sample: GroupSample,
                                cfg: MatchConfig, pool=None, negs=None) -> float:
    """``log sum_k P(y|x_k) P(x_k|X)``, an upper bound on the max-matching score."""
    cache = _forward_cache(params, sample, cfg, pool, negs)
    return logsumexp(cache["scores"])


def ablation_loss(params: ModelParams, sample: GroupSample, variant: str,
                  cfg: MatchConfig, pool=None, negs=None) -> float:
    if variant not in ("pairwise", "matching", "maximizing"):
        raise ValueError(f"unknown ablation variant {variant!r}")
    cache = _forward_cache(params, sample, cfg, pool, negs)
    return _breakdown(cache, variant)[0]


def loss_backward(params: ModelParams, sample: GroupSample, cfg: MatchConfig,
                  buffer: GradBuffer, pool=None, negs=None) -> float:
    """Accumulate ``d loss / d params`` for ``cfg.variant`` into ``buffer``."""
    pool, row = _resolve(params, sample, pool)
    packed = PackedGroups.build(params, [sample], pool=pool, targets=[row])
    negs_list = None if negs is None else [negs]
    losses, _ = packed.loss_grad(params, np.array([0]), cfg, buffer,
                                 rng=np.random.default_rng(0), negs=negs_list)
    return float(losses[0])


# -- batched path --------------------------------------------------------------

class PackedGroups:
    """A dataset of groups flattened for the batch kernel.

    Linear-map inputs are L2-normalized once here, so per-batch work is a
    gather and a matrix product.
    """

    def __init__(self, spec_f, spec_g, objects, offsets, targets, pool):
        self.spec_f = spec_f
        self.spec_g = spec_g
        self.objects = objects
        self.offsets = offsets
        self.targets = targets
        self.pool = pool
        self.sizes = np.diff(offsets)

    def __len__(self) -> int:
        return self.targets.size

    @classmethod
    def build(cls, params: ModelParams, samples: Sequence[GroupSample], pool=None,
              targets=None) -> "PackedGroups":
        if len(samples) == 0:
            raise ValueError("empty dataset")
        spec_f, spec_g = params.spec_f, params.spec_g
        sizes = [s.K for s in samples]
        offsets = np.zeros(len(samples) + 1, dtype=np.int64)
        np.cumsum(sizes, out=offsets[1:])
        if spec_f.categorical:
            objects = np.concatenate([np.asarray(s.group, dtype=np.int64) for s in samples])
            if objects.min() < 0 or objects.max() >= spec_f.in_dim:
                raise ValueError("group object id outside the f vocabulary")
        else:
            objects = np.concatenate([np.asarray(s.group, dtype=np.float64) for s in samples])
            if spec_f.kind == "linear":
                objects = l2_normalize(objects)
        if targets is None:
            if spec_g.categorical:
                targets = [int(s.target) for s in samples]
            else:
                if any(s.target_index is None for s in samples):
                    raise ValueError("feature-valued targets need target_index rows")
                targets = [int(s.target_index) for s in samples]
        targets = np.asarray(targets, dtype=np.int64)
        if not spec_g.categorical:
            pool = np.asarray(pool, dtype=np.float64)
            if spec_g.kind == "linear":
                pool = l2_normalize(pool)
        size = spec_g.in_dim if spec_g.categorical else pool.shape[0]
        if targets.min() < 0 or targets.max() >= size:
            raise ValueError("target outside the target universe")
        return cls(spec_f, spec_g, objects, offsets, targets, pool)

    @property
    def universe(self) -> int:
        return self.spec_g.in_dim if self.spec_g.categorical else self.pool.shape[0]

    def _gather(self, idx: np.ndarray):
        starts = self.offsets[idx]
        sizes = self.sizes[idx]
        offsets = np.zeros(idx.size + 1, dtype=np.int64)
        np.cumsum(sizes, out=offsets[1:])
        # object positions of every group in idx, concatenated
        rows = np.repeat(starts - offsets[:-1], sizes) + np.arange(offsets[-1])
        return self.objects[rows], offsets

    def _embed_f(self, params, obj):
        if self.spec_f.kind == "embedding":
            return params.f[obj]
        if self.spec_f.kind == "linear":
            return obj @ params.f.T
        return obj

    def target_embeddings(self, params) -> np.ndarray:
        if self.spec_g.kind == "embedding":
            return params.g
        if self.spec_g.kind == "linear":
            return self.pool @ params.g.T
        return self.pool

    def candidates(self, idx, cfg: MatchConfig, rng, negs=None):
        """``(cand, true_pos)`` arrays for the kernel."""
        V = self.universe
        if negs is not None:
            cand = np.stack([n.ids for n in negs])
            pos = np.array([n.true_pos for n in negs], dtype=np.int64)
            if np.any(cand[np.arange(len(negs)), pos] != self.targets[idx]):
                raise ContractError("negative set does not contain the sample's target")
            return np.ascontiguousarray(cand), pos
        if V <= cfg.full_vocab_limit:
            return np.arange(V, dtype=np.int64)[None, :], self.targets[idx].copy()
        sets = [NegativeSet.sample(V, int(t), cfg.negatives, rng) for t in self.targets[idx]]
        return (np.stack([s.ids for s in sets]),
                np.array([s.true_pos for s in sets], dtype=np.int64))

    def loss_grad(self, params: ModelParams, idx, cfg: MatchConfig,
                  grad: Optional[GradBuffer] = None, rng=None, scale: float = 1.0,
                  negs=None, backend=None):
        """Per-sample losses and selections; adds ``scale * d loss`` into ``grad``."""
        idx = np.asarray(idx, dtype=np.int64)
        obj, offsets = self._gather(idx)
        F = np.ascontiguousarray(self._embed_f(params, obj), dtype=np.float64)
        G = np.ascontiguousarray(self.target_embeddings(params), dtype=np.float64)
        cand, pos = self.candidates(idx, cfg, rng, negs)
        dF = np.zeros_like(F)
        dG = np.zeros_like(G)
        kernel = backend or kernels.batch_loss_grad
        losses, selected = kernel(
            F, offsets, G, cand, pos, VARIANTS[cfg.variant], SIMILARITIES[cfg.sim],
            int(cfg.features == "prob"), float(cfg.lam), float(scale), dF, dG,
            grad is not None,
        )
        if grad is not None:
            if self.spec_f.kind == "embedding":
                np.add.at(grad.f, obj, dF)
            elif self.spec_f.kind == "linear":
                grad.f += dF.T @ obj
            if self.spec_g.kind == "embedding":
                grad.g += dG
            elif self.spec_g.kind == "linear":
                grad.g += dG.T @ self.pool
        return losses, selected

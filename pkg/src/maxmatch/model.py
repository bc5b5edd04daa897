"""Parameterized mapping functions ``f`` (sources) and ``g`` (targets).

Each map is one of three kinds:

``identity``
    passes a dense feature vector through unchanged (no parameters).
``linear``
    ``W @ normalize(x)`` with ``W`` of shape ``(out_dim, in_dim)``.
``embedding``
    row lookup in a ``(vocab, out_dim)`` table; ``in_dim`` is the vocabulary size.

The group-weighting input ``h`` has no parameters of its own: it is either
``f`` itself or the pair-matching distribution computed from ``f`` and ``g``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import core_math
from .core_math import DimensionError

KINDS = ("identity", "linear", "embedding")
CHECKPOINT_VERSION = 1


class VocabularyError(LookupError):
    """Raised for a categorical id outside the embedding vocabulary."""


@dataclass(frozen=True)
class MappingSpec:
    kind: str
    in_dim: int
    out_dim: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown mapping kind {self.kind!r}")
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError("in_dim and out_dim must be positive")
        if self.kind == "identity" and self.in_dim != self.out_dim:
            raise ValueError("identity mapping requires in_dim == out_dim")

    @property
    def categorical(self) -> bool:
        return self.kind == "embedding"

    @property
    def shape(self) -> Optional[tuple[int, int]]:
        if self.kind == "embedding":
            return (self.in_dim, self.out_dim)
        if self.kind == "linear":
            return (self.out_dim, self.in_dim)
        return None

    def to_dict(self) -> dict:
        return {"kind": self.kind, "in_dim": self.in_dim, "out_dim": self.out_dim}


@dataclass
class ModelParams:
    spec_f: MappingSpec
    spec_g: MappingSpec
    f: Optional[np.ndarray] = None
    g: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.spec_f.out_dim != self.spec_g.out_dim:
            raise DimensionError("f and g must embed into the same dimension")
        for name, spec in (("f", self.spec_f), ("g", self.spec_g)):
            arr = getattr(self, name)
            if spec.shape is None:
                setattr(self, name, None)
                continue
            if arr is None:
                arr = np.zeros(spec.shape)
            arr = np.ascontiguousarray(arr, dtype=np.float64)
            if arr.shape != spec.shape:
                raise DimensionError(f"{name} has shape {arr.shape}, spec wants {spec.shape}")
            setattr(self, name, arr)

    @property
    def d(self) -> int:
        return self.spec_f.out_dim

    def blocks(self):
        """Yield ``(name, array)`` for every trainable block."""
        for name in ("f", "g"):
            arr = getattr(self, name)
            if arr is not None:
                yield name, arr

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.spec_f,
            self.spec_g,
            None if self.f is None else self.f.copy(),
            None if self.g is None else self.g.copy(),
        )


@dataclass
class GradBuffer:
    """Accumulated partial derivatives, congruent with a :class:`ModelParams`."""

    f: Optional[np.ndarray] = None
    g: Optional[np.ndarray] = None

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "GradBuffer":
        return cls(
            None if params.f is None else np.zeros_like(params.f),
            None if params.g is None else np.zeros_like(params.g),
        )

    def blocks(self):
        for name in ("f", "g"):
            arr = getattr(self, name)
            if arr is not None:
                yield name, arr

    def zero(self) -> None:
        for _, arr in self.blocks():
            arr.fill(0.0)

    def scale(self, alpha: float) -> None:
        for _, arr in self.blocks():
            arr *= alpha


def accumulate_grad(buffer: GradBuffer, path: str, contribution, rows=None) -> None:
    """Add ``contribution`` into block ``path`` ("f" or "g").

    With ``rows`` given, ``contribution[i]`` is added to row ``rows[i]``
    (repeated rows sum).
    """
    target = getattr(buffer, path)
    if target is None:
        raise DimensionError(f"block {path!r} has no parameters")
    contribution = np.asarray(contribution, dtype=np.float64)
    if rows is None:
        if contribution.shape != target.shape:
            raise DimensionError(
                f"contribution shape {contribution.shape} != block shape {target.shape}"
            )
        target += contribution
        return
    rows = np.asarray(rows, dtype=np.int64)
    if contribution.shape != (rows.size, target.shape[1]):
        raise DimensionError(f"row contribution shape {contribution.shape} mismatched")
    np.add.at(target, rows, contribution)


def init_params(spec_f: MappingSpec, spec_g: MappingSpec, seed) -> ModelParams:
    """Uniform ``[-1/sqrt(d), 1/sqrt(d)]`` initialization, deterministic per seed."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(spec_f.out_dim)
    blocks = {}
    for name, spec in (("f", spec_f), ("g", spec_g)):
        blocks[name] = None if spec.shape is None else rng.uniform(-bound, bound, size=spec.shape)
    return ModelParams(spec_f, spec_g, blocks["f"], blocks["g"])


def l2_normalize(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / np.where(norm > 0.0, norm, 1.0)


def _check_ids(ids: np.ndarray, vocab: int) -> None:
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        bad = ids[(ids < 0) | (ids >= vocab)][0]
        raise VocabularyError(f"id {int(bad)} outside vocabulary of size {vocab}")


def apply_map(spec: MappingSpec, weights: Optional[np.ndarray], x) -> np.ndarray:
    """Vectorized forward: ``x`` is an id array (embedding) or a feature matrix.

    Returns an array of shape ``x.shape[:-1] + (out_dim,)`` for features, or
    ``x.shape + (out_dim,)`` for ids.
    """
    if spec.kind == "embedding":
        ids = np.asarray(x)
        if not np.issubdtype(ids.dtype, np.integer):
            raise DimensionError("embedding map expects integer ids")
        _check_ids(ids, spec.in_dim)
        return weights[ids]
    feats = np.asarray(x, dtype=np.float64)
    if feats.shape[-1] != spec.in_dim:
        raise DimensionError(f"feature dim {feats.shape[-1]} != in_dim {spec.in_dim}")
    if spec.kind == "identity":
        return feats
    return l2_normalize(feats) @ weights.T


def forward_f(params: ModelParams, x) -> np.ndarray:
    return apply_map(params.spec_f, params.f, x)


def forward_g(params: ModelParams, y) -> np.ndarray:
    return apply_map(params.spec_g, params.g, y)


def target_table(params: ModelParams, pool=None) -> np.ndarray:
    """Embeddings of every candidate target, shape ``(|Y|, d)``.

    Categorical targets use the whole ``g`` table; feature-valued targets
    need the ``pool`` of target feature rows.
    """
    if params.spec_g.categorical:
        return params.g
    if pool is None:
        raise ValueError("feature-valued targets need a target pool")
    return apply_map(params.spec_g, params.g, pool)


def forward_h(params: ModelParams, x, mode: str = "embed", pool=None) -> np.ndarray:
    """Group-weighting features of one object.

    ``embed`` returns ``f(x)``; ``prob`` returns the pair-matching distribution
    over all targets, clamped to the probability floor.
    """
    fx = forward_f(params, x)
    if mode == "embed":
        return fx
    if mode != "prob":
        raise ValueError(f"unknown feature mode {mode!r}")
    logits = target_table(params, pool) @ fx
    return core_math.clamp_prob(core_math.softmax(logits))


# -- checkpoints -------------------------------------------------------------

def _encode(arr: Optional[np.ndarray]):
    if arr is None:
        return None
    return {"shape": list(arr.shape), "data": [repr(float(v)) for v in arr.ravel()]}


def _decode(blob) -> Optional[np.ndarray]:
    if blob is None:
        return None
    data = np.array([float(s) for s in blob["data"]], dtype=np.float64)
    return data.reshape(blob["shape"])


def params_to_dict(params: ModelParams) -> dict:
    return {
        "version": CHECKPOINT_VERSION,
        "spec_f": params.spec_f.to_dict(),
        "spec_g": params.spec_g.to_dict(),
        "f": _encode(params.f),
        "g": _encode(params.g),
    }


def params_from_dict(blob: dict) -> ModelParams:
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {blob.get('version')!r}")
    return ModelParams(
        MappingSpec(**blob["spec_f"]),
        MappingSpec(**blob["spec_g"]),
        _decode(blob["f"]),
        _decode(blob["g"]),
    )


def save_checkpoint(path, params: ModelParams, extra: Optional[dict] = None) -> None:
    blob = params_to_dict(params)
    if extra:
        blob["meta"] = extra
    Path(path).write_text(json.dumps(blob, indent=1) + "\n", encoding="utf-8")


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    blob = json.loads(Path(path).read_text(encoding="utf-8"))
    return params_from_dict(blob), blob.get("meta", {})

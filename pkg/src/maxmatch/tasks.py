"""The three group-noise settings: MIL, PLL and next-item recommendation.

============  =========  =========  ===========  ===========  ============
setting       sources    target     f            g            weighting
============  =========  =========  ===========  ===========  ============
MIL           instances  label      identity     embedding    prob, neg_kl
PLL           labels     instance   embedding    linear       embed, dot
RS            items      item       embedding    embedding    embed, dot
============  =========  =========  ===========  ===========  ============
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .matching import GroupSample, MatchConfig
from .model import MappingSpec, ModelParams, apply_map, l2_normalize

TASK_KINDS = ("mil", "pll", "rs", "custom")
RS_WINDOW = 6


@dataclass(frozen=True)
class TaskSpec:
    kind: str
    spec_f: MappingSpec
    spec_g: MappingSpec
    sim: str
    features: str

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}")
        expected = {
            "mil": ("identity", "embedding", "neg_kl", "prob"),
            "pll": ("embedding", "linear", "dot", "embed"),
            "rs": ("embedding", "embedding", "dot", "embed"),
        }.get(self.kind)
        actual = (self.spec_f.kind, self.spec_g.kind, self.sim, self.features)
        if expected is not None and actual != expected:
            raise ValueError(f"{self.kind} task must be {expected}, got {actual}")
        self.match_config()

    @classmethod
    def mil(cls, n_features: int, n_classes: int) -> "TaskSpec":
        return cls("mil", MappingSpec("identity", n_features, n_features),
                   MappingSpec("embedding", n_classes, n_features), "neg_kl", "prob")

    @classmethod
    def pll(cls, n_classes: int, n_features: int, dim: int) -> "TaskSpec":
        return cls("pll", MappingSpec("embedding", n_classes, dim),
                   MappingSpec("linear", n_features, dim), "dot", "embed")

    @classmethod
    def rs(cls, n_items: int, dim: int) -> "TaskSpec":
        return cls("rs", MappingSpec("embedding", n_items, dim),
                   MappingSpec("embedding", n_items, dim), "dot", "embed")

    def match_config(self, **kw) -> MatchConfig:
        return MatchConfig(sim=self.sim, features=self.features, **kw)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "spec_f": self.spec_f.to_dict(),
                "spec_g": self.spec_g.to_dict(), "sim": self.sim,
                "features": self.features}

    @classmethod
    def from_dict(cls, blob: dict) -> "TaskSpec":
        return cls(blob["kind"], MappingSpec(**blob["spec_f"]),
                   MappingSpec(**blob["spec_g"]), blob["sim"], blob["features"])


@dataclass
class MilBag:
    instances: np.ndarray
    bag_label: int
    instance_labels: Optional[np.ndarray] = None  # evaluation only
    bag_id: Optional[str] = None


@dataclass
class PllRecord:
    features: np.ndarray
    candidates: tuple
    true_label: Optional[int] = None  # evaluation only

    def __post_init__(self):
        self.candidates = tuple(sorted(set(int(c) for c in self.candidates)))
        if not self.candidates:
            raise ValueError("a PLL record needs at least one candidate label")
        if self.true_label is not None and self.true_label not in self.candidates:
            raise ValueError("true label must be one of the candidates")


@dataclass
class ClickSequence:
    user: int
    items: list = field(default_factory=list)


# -- adapters ------------------------------------------------------------------

def mil_to_groups(bags: Sequence[MilBag]) -> list[GroupSample]:
    if len(bags) == 0:
        raise ValueError("no bags")
    out = []
    for bag in bags:
        inst = np.asarray(bag.instances, dtype=np.float64)
        if inst.ndim != 2 or inst.shape[0] == 0:
            raise ValueError(f"bag {bag.bag_id!r} is empty")
        out.append(GroupSample(l2_normalize(inst), int(bag.bag_label)))
    return out


def pll_pool(records: Sequence[PllRecord]) -> np.ndarray:
    """Instance features of every record; the target universe for PLL."""
    return l2_normalize(np.stack([np.asarray(r.features, dtype=np.float64) for r in records]))


def pll_to_groups(records: Sequence[PllRecord]) -> list[GroupSample]:
    """Group = candidate labels, target = the instance (row ``i`` of the pool)."""
    out = []
    for i, rec in enumerate(records):
        if not rec.candidates:
            raise ValueError(f"record {i} has no candidates")
        out.append(GroupSample(np.array(rec.candidates, dtype=np.int64),
                               l2_normalize(np.asarray(rec.features, dtype=np.float64)),
                               target_index=i))
    return out


def rs_windows(items: Sequence[int], size: int = RS_WINDOW) -> list[list[int]]:
    """Consecutive windows of ``size`` items; a trailing window shorter than 2 is dropped."""
    items = list(items)
    windows = [items[i:i + size] for i in range(0, len(items), size)]
    return [w for w in windows if len(w) >= 2]


def rs_to_groups(sequences: Sequence[ClickSequence], size: int = RS_WINDOW) -> list[GroupSample]:
    out = []
    for seq in sequences:
        if len(seq.items) < 2:
            raise ValueError(f"sequence of user {seq.user} is shorter than 2")
        for w in rs_windows(seq.items, size):
            out.append(GroupSample(np.array(w[:-1], dtype=np.int64), int(w[-1])))
    return out


def to_groups(kind: str, records) -> list[GroupSample]:
    return {"mil": mil_to_groups, "pll": pll_to_groups, "rs": rs_to_groups}[kind](records)


# -- splits --------------------------------------------------------------------

def split_811(n: int, rng) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Random 8:1:1 train/validation/test index split."""
    order = rng.permutation(n)
    n_val = max(1, n // 10)
    n_test = max(1, n // 10)
    n_train = n - n_val - n_test
    if n_train < 1:
        raise ValueError("too few records to split 8:1:1")
    return (np.sort(order[:n_train]), np.sort(order[n_train:n_train + n_val]),
            np.sort(order[n_train + n_val:]))


def rs_holdout(sequences: Sequence[ClickSequence], rng=None, size: int = RS_WINDOW):
    """Per-user split into (train sequences, validation windows, test windows).

    By default the last two windows of every user with at least three windows
    are held out; with ``rng`` two windows are drawn at random instead.
    Held-out windows come back as :class:`ClickSequence` of at most ``size`` items.
    """
    train, val, test = [], [], []
    for seq in sequences:
        windows = rs_windows(seq.items, size)
        if len(windows) < 3:
            train.append(ClickSequence(seq.user, list(seq.items)))
            continue
        if rng is None:
            v, t = len(windows) - 2, len(windows) - 1
        else:
            v, t = (int(x) for x in rng.choice(len(windows), size=2, replace=False))
        val.append(ClickSequence(seq.user, windows[v]))
        test.append(ClickSequence(seq.user, windows[t]))
        kept = [w for j, w in enumerate(windows) if j not in (v, t)]
        train.append(ClickSequence(seq.user, [x for w in kept for x in w]))
    return train, val, test


def adjacent_class_pairs(bags: Sequence[MilBag], n_classes: int):
    """Binary MIL datasets built from consecutive class ids ``(c, c+1)``.

    Bag labels are remapped to 0/1; instance labels outside the pair become -1.
    """
    out = []
    for c in range(n_classes - 1):
        remap = {c: 0, c + 1: 1}
        subset = []
        for bag in bags:
            if bag.bag_label not in remap:
                continue
            inst_labels = None
            if bag.instance_labels is not None:
                inst_labels = np.array([remap.get(int(v), -1) for v in bag.instance_labels])
            subset.append(MilBag(bag.instances, remap[bag.bag_label], inst_labels, bag.bag_id))
        out.append(((c, c + 1), subset))
    return out


# -- prediction ----------------------------------------------------------------

def _ranked(scores: np.ndarray, exclude: Iterable[int], k: int) -> list[int]:
    scores = np.array(scores, dtype=np.float64)
    excluded = np.zeros(scores.size, dtype=bool)
    excluded[list(exclude)] = True
    order = np.argsort(-scores, kind="stable")  # ties: ascending item id
    order = order[~excluded[order]]
    return order[:k].tolist()


def class_scores(params: ModelParams, X) -> np.ndarray:
    """Pair logits ``f(x) . g(y)`` of instances against every class label (MIL)."""
    return apply_map(params.spec_f, params.f, X) @ params.g.T


def label_scores(params: ModelParams, X) -> np.ndarray:
    """Logits ``f(label) . g(x)`` of instances against every label (PLL)."""
    return apply_map(params.spec_g, params.g, X) @ params.f.T


def predict(params: ModelParams, task: TaskSpec, query, k: int = 10, candidates=None):
    """Class (MIL), label (PLL) or top-``k`` item list (RS) for one query."""
    if task.kind == "mil":
        return int(np.argmax(class_scores(params, l2_normalize(np.atleast_2d(query)))[0]))
    if task.kind == "pll":
        scores = label_scores(params, np.atleast_2d(query))[0]
        if candidates is not None:
            cand = np.array(sorted(candidates), dtype=np.int64)
            return int(cand[np.argmax(scores[cand])])
        return int(np.argmax(scores))
    if task.kind == "rs":
        item = int(query)
        scores = apply_map(params.spec_f, params.f, np.array([item]))[0] @ params.g.T
        return _ranked(scores, [item], k)
    raise ValueError(f"predict does not support task kind {task.kind!r}")


def rs_item_scores(params: ModelParams, items) -> np.ndarray:
    """``log P(y | x)`` over the whole catalog for each item ``x``, shape (n, |Y|)."""
    logits = params.f[np.asarray(items, dtype=np.int64)] @ params.g.T
    m = logits.max(axis=1, keepdims=True)
    return logits - (m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True)))


def predict_rs_plus(params: ModelParams, group, k: int = 10) -> list[int]:
    """Rank items by their best match to any item in ``group`` (group items excluded)."""
    group = sorted(set(int(x) for x in group))
    if not group:
        raise ValueError("empty group")
    scores = rs_item_scores(params, group).max(axis=0)
    return _ranked(scores, group, k)


# -- ingestion -----------------------------------------------------------------

def record_to_json(rec) -> dict:
    if isinstance(rec, MilBag):
        blob = {"bag_id": rec.bag_id, "label": int(rec.bag_label),
                "instances": np.asarray(rec.instances).tolist()}
        if rec.instance_labels is not None:
            blob["instance_labels"] = [int(v) for v in rec.instance_labels]
        return blob
    if isinstance(rec, PllRecord):
        blob = {"features": np.asarray(rec.features).tolist(),
                "candidates": list(rec.candidates)}
        if rec.true_label is not None:
            blob["true_label"] = int(rec.true_label)
        return blob
    if isinstance(rec, ClickSequence):
        return {"user": int(rec.user), "items": [int(i) for i in rec.items]}
    raise TypeError(f"unsupported record type {type(rec).__name__}")


def record_from_json(kind: str, blob: dict):
    if kind == "mil":
        labels = blob.get("instance_labels")
        return MilBag(np.asarray(blob["instances"], dtype=np.float64), int(blob["label"]),
                      None if labels is None else np.asarray(labels, dtype=np.int64),
                      blob.get("bag_id"))
    if kind == "pll":
        return PllRecord(np.asarray(blob["features"], dtype=np.float64),
                         tuple(blob["candidates"]), blob.get("true_label"))
    if kind == "rs":
        return ClickSequence(int(blob["user"]), [int(i) for i in blob["items"]])
    raise ValueError(f"unknown task kind {kind!r}")


def write_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(record_to_json(rec), separators=(",", ":")) + "\n")


def read_jsonl(path, kind: str) -> list:
    out = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(record_from_json(kind, json.loads(line)))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"{path}:{n}: bad {kind} record ({exc})") from exc
    return out

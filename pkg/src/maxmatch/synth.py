"""Seeded synthetic datasets with controllable group noise.

Every generated group keeps at least one object that truly matches its target.
Ground truth needed for evaluation (instance labels, true labels, item
clusters) is produced alongside the records and never enters a
:class:`~maxmatch.matching.GroupSample`.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from ._seeding import substream
from .tasks import ClickSequence, MilBag, PllRecord

NOISE_MODES = ("uniform", "shifted")


@dataclass(frozen=True)
class SynthConfig:
    n_classes: int = 5
    feature_dim: int = 10
    cluster_spread: float = 0.3
    n_groups: int = 500
    group_size: int = 5
    noise_rate: float = 0.4
    # "uniform": noise objects from any other class; "shifted": from class y+1
    noise_mode: str = "uniform"
    epsilon: float = 0.5
    tau: int = 4
    n_items: int = 200
    n_clusters: int = 20
    seq_len: int = 30
    concentration: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.noise_rate < 1.0:
            raise ValueError("noise_rate must lie in [0, 1)")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.tau < 1 or self.tau > self.n_classes:
            raise ValueError("tau must lie in [1, n_classes]")
        if self.n_classes < 2 or self.feature_dim < 1 or self.n_groups < 1:
            raise ValueError("need n_classes >= 2, feature_dim >= 1, n_groups >= 1")
        if self.group_size < 1:
            raise ValueError("group_size must be >= 1")
        if self.noise_mode not in NOISE_MODES:
            raise ValueError(f"noise_mode must be one of {NOISE_MODES}")
        if self.n_clusters < 1 or self.n_items < 2 * self.n_clusters:
            raise ValueError("need at least two items per cluster")
        if self.seq_len < 2:
            raise ValueError("seq_len must be >= 2")

    @classmethod
    def from_dict(cls, blob: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(blob) - known
        if unknown:
            raise ValueError(f"unknown synth keys: {sorted(unknown)}")
        return cls(**blob)

    def to_dict(self) -> dict:
        return asdict(self)


def n_noisy(rho: float, K: int) -> int:
    """Mismatched objects per group: ``ceil(rho * K)`` capped at ``K - 1``."""
    return min(math.ceil(rho * K - 1e-12), K - 1)


def _prototypes(cfg: SynthConfig) -> np.ndarray:
    rng = substream(cfg.seed, "synth-prototypes")
    protos = rng.normal(size=(cfg.n_classes, cfg.feature_dim))
    return protos / np.linalg.norm(protos, axis=1, keepdims=True)


def _draw(protos, labels, spread, rng) -> np.ndarray:
    return protos[labels] + rng.normal(scale=spread, size=(len(labels), protos.shape[1]))


def gen_mil(cfg: SynthConfig) -> list[MilBag]:
    protos = _prototypes(cfg)
    C, K = cfg.n_classes, cfg.group_size
    bags = []
    for i in range(cfg.n_groups):
        rng = substream(cfg.seed, "synth", i)
        y = int(rng.integers(C))
        n_bad = n_noisy(cfg.noise_rate, K)
        if cfg.noise_mode == "shifted":
            noise = np.full(n_bad, (y + 1) % C)
        else:
            noise = rng.integers(C - 1, size=n_bad)
            noise = noise + (noise >= y)
        labels = np.concatenate([np.full(K - n_bad, y), noise]).astype(np.int64)
        labels = labels[rng.permutation(K)]
        bags.append(MilBag(_draw(protos, labels, cfg.cluster_spread, rng), y, labels,
                           bag_id=f"bag{i}"))
    return bags


def gen_pll(cfg: SynthConfig) -> list[PllRecord]:
    """A fraction ``epsilon`` of records gets 2..tau candidates, the rest one."""
    protos = _prototypes(cfg)
    C, n = cfg.n_classes, cfg.n_groups
    pick = substream(cfg.seed, "synth-partial")
    partial = np.zeros(n, dtype=bool)
    partial[pick.permutation(n)[:int(round(cfg.epsilon * n))]] = True
    records = []
    for i in range(n):
        rng = substream(cfg.seed, "synth", i)
        y = int(rng.integers(C))
        x = _draw(protos, [y], cfg.cluster_spread, rng)[0]
        cands = [y]
        if partial[i] and cfg.tau >= 2:
            size = int(rng.integers(2, cfg.tau + 1))
            others = np.array([c for c in range(C) if c != y])
            cands += rng.choice(others, size=size - 1, replace=False).tolist()
        records.append(PllRecord(x, tuple(cands), y))
    return records


def rs_clusters(cfg: SynthConfig) -> np.ndarray:
    """Cluster id of every item; balanced sizes, seeded assignment."""
    rng = substream(cfg.seed, "synth-clusters")
    return (np.arange(cfg.n_items) % cfg.n_clusters)[rng.permutation(cfg.n_items)]


def _transitions(cfg: SynthConfig, clusters: np.ndarray):
    """Per-item successor distributions inside its own cluster."""
    rng = substream(cfg.seed, "synth-transitions")
    members = [np.flatnonzero(clusters == c) for c in range(cfg.n_clusters)]
    table = []
    for item in range(cfg.n_items):
        peers = members[clusters[item]]
        peers = peers[peers != item]
        table.append((peers, rng.dirichlet(np.full(peers.size, cfg.concentration))))
    return members, table


def gen_rs(cfg: SynthConfig) -> list[ClickSequence]:
    """Within-cluster random walks that teleport with probability ``noise_rate``.

    A teleport picks a cluster uniformly (its own included) and then an item
    of that cluster other than the current one.
    """
    clusters = rs_clusters(cfg)
    members, table = _transitions(cfg, clusters)
    seqs = []
    for u in range(cfg.n_groups):
        rng = substream(cfg.seed, "synth", u)
        cur = int(rng.integers(cfg.n_items))
        items = [cur]
        for _ in range(cfg.seq_len - 1):
            if rng.random() < cfg.noise_rate:
                pool = members[int(rng.integers(cfg.n_clusters))]
                pool = pool[pool != cur]
                cur = int(pool[rng.integers(pool.size)])
            else:
                peers, probs = table[cur]
                cur = int(peers[rng.choice(peers.size, p=probs)])
            items.append(cur)
        seqs.append(ClickSequence(u, items))
    return seqs


def generate(kind: str, cfg: SynthConfig):
    return {"mil": gen_mil, "pll": gen_pll, "rs": gen_rs}[kind](cfg)


def truth_sidecar(kind: str, records, cfg: SynthConfig) -> dict:
    """Hidden ground truth, written next to the dataset and never trained on."""
    if kind == "mil":
        return {"kind": kind, "instance_labels": [r.instance_labels.tolist() for r in records]}
    if kind == "pll":
        return {"kind": kind, "true_labels": [int(r.true_label) for r in records]}
    if kind == "rs":
        return {"kind": kind, "item_clusters": rs_clusters(cfg).tolist()}
    raise ValueError(f"unknown task kind {kind!r}")

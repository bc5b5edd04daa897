"""End-to-end trials: generate, split, train and score one configuration."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

import numpy as np

from ._seeding import substream
from .matching import PackedGroups
from .model import ModelParams, init_params, l2_normalize
from .optim import TrainConfig, select_lr, train
from .synth import SynthConfig, generate
from .tasks import (
    TaskSpec,
    class_scores,
    label_scores,
    mil_to_groups,
    pll_pool,
    pll_to_groups,
    rs_holdout,
    rs_item_scores,
    rs_to_groups,
    rs_windows,
    split_811,
)

TOP_K = 10


@dataclass
class ExperimentConfig:
    task: str = "mil"
    seed: int = 0
    dim: int = 16
    lr_grid: bool = False
    rs_split: str = "last"  # or "random"
    rs_mode: str = "mm"     # or "mm+"
    synth: SynthConfig = field(default_factory=SynthConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.task not in ("mil", "pll", "rs"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.rs_split not in ("last", "random"):
            raise ValueError("rs_split must be 'last' or 'random'")
        if self.rs_mode not in ("mm", "mm+"):
            raise ValueError("rs_mode must be 'mm' or 'mm+'")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")

    @classmethod
    def from_dict(cls, blob: dict) -> "ExperimentConfig":
        blob = dict(blob)
        known = {f.name for f in fields(cls)}
        unknown = set(blob) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        synth = SynthConfig.from_dict(blob.pop("synth", {}))
        train_blob = blob.pop("train", {})
        unknown = set(train_blob) - {f.name for f in fields(TrainConfig)}
        if unknown:
            raise ValueError(f"unknown train keys: {sorted(unknown)}")
        return cls(synth=synth, train=TrainConfig(**train_blob), **blob)

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["synth"] = self.synth.to_dict()
        out["train"] = asdict(self.train)
        return out

    def reseeded(self, seed: int) -> "ExperimentConfig":
        """Same experiment with data, split and training all driven by ``seed``."""
        return replace(self, seed=seed, synth=replace(self.synth, seed=seed),
                       train=replace(self.train, seed=seed))


def task_spec(cfg: ExperimentConfig) -> TaskSpec:
    s = cfg.synth
    if cfg.task == "mil":
        return TaskSpec.mil(s.feature_dim, s.n_classes)
    if cfg.task == "pll":
        return TaskSpec.pll(s.n_classes, s.feature_dim, cfg.dim)
    return TaskSpec.rs(s.n_items, cfg.dim)


@dataclass
class Splits:
    train: list
    val: list
    test: list


def split_records(cfg: ExperimentConfig, records) -> Splits:
    if cfg.task == "rs":
        rng = substream(cfg.seed, "split") if cfg.rs_split == "random" else None
        return Splits(*rs_holdout(records, rng=rng))
    tr, va, te = split_811(len(records), substream(cfg.seed, "split"))
    return Splits([records[i] for i in tr], [records[i] for i in va],
                  [records[i] for i in te])


# -- evaluation ------------------------------------------------------------------

def mil_instance_accuracy(params: ModelParams, bags) -> float:
    X = np.concatenate([np.asarray(b.instances, dtype=np.float64) for b in bags])
    truth = np.concatenate([np.asarray(b.instance_labels) for b in bags])
    keep = truth >= 0
    pred = np.argmax(class_scores(params, l2_normalize(X)), axis=1)
    return float(np.mean(pred[keep] == truth[keep]))


def pll_accuracy(params: ModelParams, records, restrict: bool = False) -> float:
    X = np.stack([np.asarray(r.features, dtype=np.float64) for r in records])
    scores = label_scores(params, X)
    if restrict:
        mask = np.full(scores.shape, -np.inf)
        for i, r in enumerate(records):
            mask[i, list(r.candidates)] = 0.0
        scores = scores + mask
    truth = np.array([r.true_label for r in records])
    return float(np.mean(np.argmax(scores, axis=1) == truth))


def target_ranks(scores: np.ndarray, excluded: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """1-based rank of each target under descending score, ties by ascending id.

    Excluded items are removed from the ranking; an excluded target gets rank 0.
    """
    n, V = scores.shape
    s_t = scores[np.arange(n), targets][:, None]
    ids = np.arange(V)[None, :]
    ahead = (scores > s_t) | ((scores == s_t) & (ids < targets[:, None]))
    ranks = 1 + np.sum(ahead & ~excluded, axis=1)
    ranks[excluded[np.arange(n), targets]] = 0
    return ranks


def rs_ranking_metrics(params: ModelParams, windows, mode: str = "mm", k: int = TOP_K) -> dict:
    """HIT@k and NDCG@k over held-out windows (group = all but the last item)."""
    groups = [list(w.items[:-1]) for w in windows]
    targets = np.array([w.items[-1] for w in windows], dtype=np.int64)
    V = params.spec_g.in_dim
    excluded = np.zeros((len(windows), V), dtype=bool)
    if mode == "mm":
        queries = np.array([g[-1] for g in groups], dtype=np.int64)
        scores = rs_item_scores(params, queries)
        excluded[np.arange(len(windows)), queries] = True
    elif mode == "mm+":
        scores = np.empty((len(windows), V))
        for i, g in enumerate(groups):
            scores[i] = rs_item_scores(params, sorted(set(g))).max(axis=0)
            excluded[i, g] = True
    else:
        raise ValueError(f"unknown ranking mode {mode!r}")
    ranks = target_ranks(scores, excluded, targets)
    hit = (ranks >= 1) & (ranks <= k)
    ndcg = np.where(hit, 1.0 / np.log2(1.0 + np.maximum(ranks, 1)), 0.0)
    return {f"hit@{k}": float(hit.mean()), f"ndcg@{k}": float(ndcg.mean())}


def evaluate(cfg: ExperimentConfig, params: ModelParams, records, mode: Optional[str] = None) -> dict:
    if cfg.task == "mil":
        return {"accuracy": mil_instance_accuracy(params, records)}
    if cfg.task == "pll":
        return {"accuracy": pll_accuracy(params, records)}
    return rs_ranking_metrics(params, records, mode or cfg.rs_mode)


def primary_metric(task: str) -> str:
    return "accuracy" if task in ("mil", "pll") else f"hit@{TOP_K}"


# -- training ------------------------------------------------------------------

def training_problem(cfg: ExperimentConfig, spec: TaskSpec, params, train_records):
    if cfg.task == "mil":
        return PackedGroups.build(params, mil_to_groups(train_records))
    if cfg.task == "pll":
        return PackedGroups.build(params, pll_to_groups(train_records),
                                  pool=pll_pool(train_records))
    return PackedGroups.build(params, rs_to_groups(train_records))


def fit(cfg: ExperimentConfig, splits: Splits, track_val: bool = True):
    """Train on ``splits.train``; returns ``(params, history, chosen_lr)``."""
    spec = task_spec(cfg)
    init = init_params(spec.spec_f, spec.spec_g, substream(cfg.train.seed, "init"))
    packed = training_problem(cfg, spec, init, splits.train)
    metric = primary_metric(cfg.task)
    has_val = len(splits.val) > 0

    def val_metric(p):
        return evaluate(cfg, p, splits.val)[metric] if has_val else float("nan")

    match = spec.match_config()
    if cfg.lr_grid:
        if not has_val:
            raise ValueError("learning-rate selection needs a validation split")
        lr, params, hist, _ = select_lr(packed, cfg.train, init, match, val_metric)
        return params, hist, lr
    params, hist = train(packed, cfg.train, init, match,
                         evaluate=val_metric if track_val else None)
    return params, hist, cfg.train.lr


def run_trial(cfg: ExperimentConfig, seed: Optional[int] = None, variant: Optional[str] = None,
              records=None) -> dict:
    """Synthesize (unless ``records`` given), train one loss variant, score the test split."""
    if seed is not None:
        cfg = cfg.reseeded(seed)
    if variant is not None:
        cfg = replace(cfg, train=replace(cfg.train, loss=variant))
    if records is None:
        records = generate(cfg.task, cfg.synth)
    splits = split_records(cfg, records)
    params, _, _ = fit(cfg, splits, track_val=cfg.lr_grid)
    return evaluate(cfg, params, splits.test)


def rs_window_count(sequences) -> int:
    return sum(len(rs_windows(s.items)) for s in sequences)

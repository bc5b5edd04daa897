"""Adam and the mini-batch training loop."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from ._seeding import substream
from .matching import VARIANTS, GroupSample, MatchConfig, PackedGroups
from .model import GradBuffer, ModelParams
from .core_math import DimensionError

LR_GRID = (1e-1, 1e-2, 1e-3, 1e-4)


class NumericalError(FloatingPointError):
    """Training produced a non-finite loss; ``info`` describes where."""

    def __init__(self, message: str, info: dict):
        super().__init__(message)
        self.info = info


@dataclass
class AdamState:
    m: dict
    v: dict
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0

    @classmethod
    def like(cls, params: ModelParams, lr: float, **kw) -> "AdamState":
        if lr < 0:
            raise ValueError("learning rate must be non-negative")
        m = {name: np.zeros_like(arr) for name, arr in params.blocks()}
        v = {name: np.zeros_like(arr) for name, arr in params.blocks()}
        return cls(m, v, lr, **kw)


def adam_step(params: ModelParams, grads: GradBuffer, state: AdamState) -> None:
    """One bias-corrected Adam update, in place."""
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, theta in params.blocks():
        g = getattr(grads, name)
        if g is None or g.shape != theta.shape:
            raise DimensionError(f"gradient for {name!r} does not match parameters")
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        theta -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    lr: float = 1e-2
    lam: float = 1.0
    loss: str = "max-matching"
    seed: int = 0
    negatives: int = 100

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.loss not in VARIANTS:
            raise ValueError(f"unknown loss variant {self.loss!r}")

    def match_config(self, base: MatchConfig) -> MatchConfig:
        return replace(base, lam=self.lam, variant=self.loss, negatives=self.negatives)


@dataclass
class History:
    rows: list = field(default_factory=list)

    def append(self, epoch: int, loss: float, metric: float) -> None:
        self.rows.append((epoch, loss, metric))

    @property
    def losses(self) -> list:
        return [r[1] for r in self.rows]

    @property
    def metrics(self) -> list:
        return [r[2] for r in self.rows]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "loss", "metric"])
            for epoch, loss, metric in self.rows:
                w.writerow([epoch, repr(float(loss)), repr(float(metric))])


def train(dataset: Sequence[GroupSample], cfg: TrainConfig, params: ModelParams,
          match: MatchConfig, pool=None,
          evaluate: Optional[Callable[[ModelParams], float]] = None,
          backend=None) -> tuple[ModelParams, History]:
    """Train a copy of ``params``; deterministic given (dataset, cfg, params)."""
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    packed = dataset if isinstance(dataset, PackedGroups) else \
        PackedGroups.build(params, dataset, pool=pool)
    match = cfg.match_config(match)
    params = params.copy()
    state = AdamState.like(params, cfg.lr)
    grad = GradBuffer.zeros_like(params)
    shuffle_rng = substream(cfg.seed, "shuffle")
    neg_rng = substream(cfg.seed, "negatives")
    history = History()
    n = len(packed)
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            grad.zero()
            losses, _ = packed.loss_grad(params, idx, match, grad, rng=neg_rng,
                                         scale=1.0 / idx.size, backend=backend)
            batch_loss = float(losses.sum())
            if not math.isfinite(batch_loss):
                bad = int(idx[np.flatnonzero(~np.isfinite(losses))[0]])
                raise NumericalError(
                    f"non-finite loss in epoch {epoch}",
                    {"epoch": epoch, "batch_start": start, "sample": bad,
                     "step": state.step_count, "lr": cfg.lr, "loss": cfg.loss},
                )
            total += batch_loss
            adam_step(params, grad, state)
        metric = evaluate(params) if evaluate is not None else float("nan")
        history.append(epoch, total / n, metric)
    return params, history


def select_lr(dataset, cfg: TrainConfig, params: ModelParams, match: MatchConfig,
              evaluate: Callable[[ModelParams], float], pool=None,
              grid: Sequence[float] = LR_GRID):
    """Train once per learning rate; keep the best final validation metric.

    Ties go to the earlier grid entry. Returns ``(lr, params, history, scores)``.
    """
    best = None
    scores = {}
    packed = dataset if isinstance(dataset, PackedGroups) else \
        PackedGroups.build(params, dataset, pool=pool)
    for lr in grid:
        trained, hist = train(packed, replace(cfg, lr=lr), params, match)
        scores[lr] = float(evaluate(trained))
        epoch, loss, _ = hist.rows[-1]
        hist.rows[-1] = (epoch, loss, scores[lr])
        if best is None or scores[lr] > scores[best[0]]:
            best = (lr, trained, hist)
    return best + (scores,)

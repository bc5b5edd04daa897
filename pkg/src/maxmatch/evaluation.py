"""Accuracy and single-relevant-item ranking metrics."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np


class ContractViolation(ValueError):
    pass


def accuracy(preds: Sequence, truth: Sequence) -> float:
    if len(preds) != len(truth):
        raise ValueError(f"length mismatch: {len(preds)} predictions, {len(truth)} labels")
    if len(preds) == 0:
        raise ValueError("accuracy of an empty list")
    return float(np.mean(np.asarray(preds) == np.asarray(truth)))


def _rank_of(ranked: Sequence, truth) -> int:
    """1-based rank of ``truth`` in ``ranked``; 0 when absent."""
    ranked = list(ranked)
    if len(set(ranked)) != len(ranked):
        raise ContractViolation("ranked list contains duplicates")
    try:
        return ranked.index(truth) + 1
    except ValueError:
        return 0


def hit_at_k(ranked: Sequence, truth, k: int) -> int:
    if k < 1:
        raise ValueError("k must be >= 1")
    r = _rank_of(ranked, truth)
    return int(0 < r <= k)


def ndcg_at_k(ranked: Sequence, truth, k: int) -> float:
    """``1 / log2(1 + rank)`` if the item is in the top ``k``; ideal DCG is 1."""
    if k < 1:
        raise ValueError("k must be >= 1")
    r = _rank_of(ranked, truth)
    if 0 < r <= k:
        return 1.0 / math.log2(1 + r)
    return 0.0


@dataclass
class MetricReport:
    """Mean and population standard deviation of one metric over trials."""

    metric: str
    mean: float
    std: float
    values: list
    seeds: list

    @classmethod
    def from_values(cls, metric: str, values, seeds) -> "MetricReport":
        vals = np.asarray(values, dtype=np.float64)
        return cls(metric, float(vals.mean()), float(vals.std()),
                   [float(v) for v in vals], [int(s) for s in seeds])

    def to_dict(self) -> dict:
        return asdict(self)


CSV_HEADER = ["metric", "mean", "std_population", "n_trials", "values", "seeds"]


def write_reports_csv(path, reports: Sequence[MetricReport]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in reports:
            w.writerow([r.metric, repr(r.mean), repr(r.std), len(r.values),
                        " ".join(repr(v) for v in r.values),
                        " ".join(str(s) for s in r.seeds)])


def write_reports_json(path, reports: Sequence[MetricReport]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"std": "population", "reports": [r.to_dict() for r in reports]},
                  fh, indent=1, sort_keys=True)
        fh.write("\n")


def multi_trial(run: Callable[[int], dict], n_trials: int = 5, base_seed: int = 0,
                executor=None) -> dict[str, MetricReport]:
    """Run ``run(seed)`` for consecutive seeds and aggregate each returned metric.

    ``run`` returns ``{metric_name: value}``. With an ``executor`` (anything
    with a ``map`` method) trials run concurrently; aggregation order is fixed.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    seeds = list(range(base_seed, base_seed + n_trials))
    mapper = executor.map if executor is not None else map
    results = list(mapper(run, seeds))
    names = sorted(results[0])
    return {name: MetricReport.from_values(name, [res[name] for res in results], seeds)
            for name in names}

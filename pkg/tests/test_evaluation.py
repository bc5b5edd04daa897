import csv
import json
import math

import numpy as np
import pytest

import oracles
from maxmatch.evaluation import (
    ContractViolation,
    MetricReport,
    accuracy,
    hit_at_k,
    multi_trial,
    ndcg_at_k,
    write_reports_csv,
    write_reports_json,
)


def test_accuracy_examples():
    assert accuracy([1, 2, 3], [1, 2, 3]) == 1.0
    assert accuracy([1, 2], [3, 4]) == 0.0
    assert accuracy([0, 1, 1, 2], [0, 1, 1, 0]) == 0.75
    with pytest.raises(ValueError):
        accuracy([1], [1, 2])
    with pytest.raises(ValueError):
        accuracy([], [])


def test_ranking_examples():
    ranked = list(range(20))
    assert hit_at_k(ranked, 0, 10) == 1
    assert hit_at_k(ranked, 10, 10) == 0
    assert hit_at_k(ranked, 99, 10) == 0
    assert ndcg_at_k(ranked, 0, 10) == 1.0
    # frozen from the direct formula 1 / log2(3)
    assert ndcg_at_k(ranked, 1, 10) == pytest.approx(0.6309297535714575, abs=1e-15)
    assert ndcg_at_k(ranked, 12, 10) == 0.0


def test_duplicates_are_contract_violations():
    with pytest.raises(ContractViolation):
        hit_at_k([1, 2, 1], 2, 3)
    with pytest.raises(ContractViolation):
        ndcg_at_k([4, 4], 4, 1)
    with pytest.raises(ValueError):
        hit_at_k([1], 1, 0)


def test_ranking_metrics_match_oracle_exhaustively():
    for n in range(1, 9):
        for perm in oracles.all_rankings(n):
            for truth in (0, n - 1, n):  # first, last and absent items
                for k in (1, 3, 10):
                    assert hit_at_k(perm, truth, k) == oracles.hit(perm, truth, k)
                    assert ndcg_at_k(perm, truth, k) == oracles.ndcg(perm, truth, k)
                    assert ndcg_at_k(perm, truth, k) <= hit_at_k(perm, truth, k)


def test_metrics_ignore_order_below_k(rng):
    head = [5, 3, 9]
    tail = [0, 1, 2, 4, 6, 7, 8]
    base = ndcg_at_k(head + tail, 9, 3)
    for _ in range(5):
        assert ndcg_at_k(head + rng.permutation(tail).tolist(), 9, 3) == base


def test_multi_trial_examples():
    two = multi_trial(lambda s: {"acc": float(s)}, n_trials=2)
    assert two["acc"].mean == 0.5 and two["acc"].std == 0.5
    assert two["acc"].seeds == [0, 1]
    one = multi_trial(lambda s: {"acc": 0.7}, n_trials=1, base_seed=9)
    assert one["acc"].mean == 0.7 and one["acc"].std == 0.0 and one["acc"].seeds == [9]
    const = multi_trial(lambda s: {"acc": 0.3, "hit": 1.0}, n_trials=5)
    assert const["acc"].std == 0.0 and sorted(const) == ["acc", "hit"]
    with pytest.raises(ValueError):
        multi_trial(lambda s: {}, n_trials=0)


def test_report_bounds(rng):
    vals = rng.uniform(size=7)
    r = MetricReport.from_values("m", vals, range(7))
    assert min(vals) <= r.mean <= max(vals)
    assert r.std == pytest.approx(math.sqrt(np.mean((vals - vals.mean()) ** 2)))


def test_report_writers(tmp_path):
    reports = [MetricReport.from_values("acc", [0.5, 1.0], [0, 1])]
    write_reports_csv(tmp_path / "m.csv", reports)
    rows = list(csv.reader(open(tmp_path / "m.csv")))
    assert rows[0][2] == "std_population"
    assert rows[1][:4] == ["acc", "0.75", "0.25", "2"]
    write_reports_json(tmp_path / "m.json", reports)
    blob = json.loads((tmp_path / "m.json").read_text())
    assert blob["std"] == "population"
    assert blob["reports"][0]["values"] == [0.5, 1.0]

import numpy as np
import pytest

import oracles
from maxmatch.model import MappingSpec, ModelParams, init_params
from maxmatch.tasks import (
    ClickSequence,
    MilBag,
    PllRecord,
    TaskSpec,
    adjacent_class_pairs,
    mil_to_groups,
    pll_pool,
    pll_to_groups,
    predict,
    predict_rs_plus,
    read_jsonl,
    rs_holdout,
    rs_to_groups,
    rs_windows,
    split_811,
    write_jsonl,
)


def test_task_spec_rows():
    assert TaskSpec.mil(4, 3).features == "prob"
    assert TaskSpec.pll(5, 4, 3).spec_g.kind == "linear"
    assert TaskSpec.rs(10, 4).sim == "dot"
    with pytest.raises(ValueError):
        TaskSpec("rs", MappingSpec("embedding", 5, 2), MappingSpec("embedding", 5, 2),
                 "neg_kl", "prob")
    with pytest.raises(ValueError):
        TaskSpec("video", MappingSpec("embedding", 5, 2), MappingSpec("embedding", 5, 2),
                 "dot", "embed")
    custom = TaskSpec("custom", MappingSpec("embedding", 5, 2), MappingSpec("embedding", 5, 2),
                      "neg_kl", "prob")
    assert TaskSpec.from_dict(custom.to_dict()) == custom


def test_mil_adapter(rng):
    bags = [MilBag(rng.normal(size=(3, 4)), 2), MilBag(rng.normal(size=(1, 4)), 0)]
    groups = mil_to_groups(bags)
    assert [g.K for g in groups] == [3, 1]
    assert [g.target for g in groups] == [2, 0]
    np.testing.assert_allclose(np.linalg.norm(groups[0].group, axis=1), 1.0)
    many = mil_to_groups([MilBag(rng.normal(size=(2, 4)), i % 3) for i in range(10)])
    assert [g.target for g in many] == [i % 3 for i in range(10)]
    with pytest.raises(ValueError):
        mil_to_groups([MilBag(np.zeros((0, 4)), 1)])
    with pytest.raises(ValueError):
        mil_to_groups([])


def test_pll_adapter(rng):
    recs = [PllRecord(rng.normal(size=3), {7, 1, 4}, 4), PllRecord(rng.normal(size=3), [2])]
    groups = pll_to_groups(recs)
    assert groups[0].group.tolist() == [1, 4, 7]
    assert groups[1].K == 1
    assert [g.target_index for g in groups] == [0, 1]
    np.testing.assert_allclose(groups[0].target, pll_pool(recs)[0])
    with pytest.raises(ValueError):
        PllRecord(np.zeros(3), [])
    with pytest.raises(ValueError):
        PllRecord(np.zeros(3), [1, 2], true_label=5)


def test_rs_windows_examples():
    assert rs_windows(range(1, 14)) == [list(range(1, 7)), list(range(7, 13))]
    groups = rs_to_groups([ClickSequence(0, list(range(6)))])
    assert len(groups) == 1 and groups[0].K == 5 and groups[0].target == 5
    pair = rs_to_groups([ClickSequence(0, [3, 9])])
    assert pair[0].group.tolist() == [3] and pair[0].target == 9
    assert len(rs_to_groups([ClickSequence(0, list(range(13)))])) == 2
    with pytest.raises(ValueError):
        rs_to_groups([ClickSequence(0, [1])])


def test_rs_window_count_formula(rng):
    seqs = [ClickSequence(u, rng.integers(50, size=int(rng.integers(2, 40))).tolist())
            for u in range(60)]
    want = sum(len(s.items) // 6 + (1 if len(s.items) % 6 >= 2 else 0) for s in seqs)
    groups = rs_to_groups(seqs)
    assert len(groups) == want
    for g in groups:
        assert 1 <= g.K <= 5


def test_rs_holdout_last_two_windows():
    seq = ClickSequence(7, list(range(20)))  # windows 0-5, 6-11, 12-17, 18-19
    train, val, test = rs_holdout([seq, ClickSequence(8, list(range(9)))])
    assert val[0].items == list(range(12, 18))
    assert test[0].items == [18, 19]
    assert train[0].items == list(range(12))
    assert train[1].items == list(range(9))  # too short to hold out
    assert len(val) == len(test) == 1


def test_rs_holdout_seeded_variant(rng):
    seq = ClickSequence(0, list(range(30)))
    train, val, test = rs_holdout([seq], rng=rng)
    held = set(val[0].items) | set(test[0].items)
    assert held.isdisjoint(train[0].items)
    assert len(train[0].items) + len(held) == 30


def test_split_811(rng):
    a, b, c = split_811(100, rng)
    assert (a.size, b.size, c.size) == (80, 10, 10)
    assert np.union1d(np.union1d(a, b), c).tolist() == list(range(100))
    with pytest.raises(ValueError):
        split_811(2, rng)


def test_adjacent_class_pairs(rng):
    bags = [MilBag(rng.normal(size=(2, 3)), y, np.array([y, 0])) for y in (0, 1, 2, 1)]
    pairs = adjacent_class_pairs(bags, 3)
    assert [p for p, _ in pairs] == [(0, 1), (1, 2)]
    (_, first), (_, second) = pairs
    assert [b.bag_label for b in first] == [0, 1, 1]
    assert [b.bag_label for b in second] == [0, 1, 0]
    assert second[1].instance_labels.tolist() == [1, -1]


def test_predict_examples():
    spec = TaskSpec.mil(2, 2)
    params = ModelParams(spec.spec_f, spec.spec_g, None, np.array([[0.9, 0.0], [0.1, 0.0]]))
    assert predict(params, spec, [1.0, 0.0]) == 0

    pll = TaskSpec.pll(5, 3, 3)
    f = np.zeros((5, 3))
    f[3] = [1.0, 0.0, 0.0]
    f[1] = [0.0, 1.0, 0.0]
    p = ModelParams(pll.spec_f, pll.spec_g, f, np.eye(3))
    assert predict(p, pll, [2.0, 0.5, 0.0]) == 3
    assert predict(p, pll, [2.0, 0.5, 0.0], candidates=[1, 4]) == 1

    rs = TaskSpec.rs(6, 2)
    q = init_params(rs.spec_f, rs.spec_g, 0)
    ranked = predict(q, rs, 2, k=10)
    assert sorted(ranked) == [0, 1, 3, 4, 5]


def test_predict_rs_plus_examples(rng):
    rs = TaskSpec.rs(8, 3)
    params = ModelParams(rs.spec_f, rs.spec_g, rng.normal(size=(8, 3)), rng.normal(size=(8, 3)))
    assert predict_rs_plus(params, [4], k=7) == predict(params, rs, 4, k=7)
    assert predict_rs_plus(params, [1, 5, 1, 5], 4) == predict_rs_plus(params, [5, 1], 4)
    with pytest.raises(ValueError):
        predict_rs_plus(params, [], 3)


def test_predict_rs_plus_against_oracle(rng):
    for _ in range(100):
        n = int(rng.integers(2, 11))
        params = ModelParams(MappingSpec("embedding", n, 2), MappingSpec("embedding", n, 2),
                             rng.normal(size=(n, 2)), rng.normal(size=(n, 2)))
        group = rng.integers(n, size=int(rng.integers(1, 5))).tolist()
        k = int(rng.integers(1, n + 1))
        want = oracles.rs_plus_ranking(params.f.tolist(), params.g.tolist(), set(group), k)
        assert predict_rs_plus(params, group, k) == want


def test_jsonl_round_trip(tmp_path, rng):
    mil = [MilBag(rng.normal(size=(2, 3)), 1, np.array([1, 0]), "b0"), MilBag(rng.normal(size=(1, 3)), 0)]
    pll = [PllRecord(rng.normal(size=4), [3, 1], 3)]
    rs = [ClickSequence(5, [1, 2, 3])]
    for kind, recs in (("mil", mil), ("pll", pll), ("rs", rs)):
        path = tmp_path / f"{kind}.jsonl"
        write_jsonl(path, recs)
        back = read_jsonl(path, kind)
        assert len(back) == len(recs)
        write_jsonl(tmp_path / "again.jsonl", back)
        assert (tmp_path / "again.jsonl").read_bytes() == path.read_bytes()
    assert read_jsonl(tmp_path / "mil.jsonl", "mil")[0].instances.tobytes() == mil[0].instances.tobytes()


def test_jsonl_reports_bad_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"user": 1, "items": [1, 2]}\n{"user": 2}\n')
    with pytest.raises(ValueError, match="bad.jsonl:2"):
        read_jsonl(path, "rs")


def test_adapters_reference_only_source_ids(rng):
    seqs = [ClickSequence(u, rng.integers(30, size=15).tolist()) for u in range(5)]
    ids = {i for s in seqs for i in s.items}
    for g in rs_to_groups(seqs):
        assert set(g.group.tolist()) <= ids and g.target in ids

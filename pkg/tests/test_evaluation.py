import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tagcast.corpus import TrainingExample
from tagcast.evaluation import (CooccurrenceEmbedder, EvalError, GridCell, HashTagEmbedder,
                                MetricsReport, ablation_grid, cosine_metric, evaluate_run,
                                expand_grid, f1, mean_reports, metrics_at_k, remove_top_tags,
                                reports_to_csv, reports_to_json, strip_tags_from_users,
                                top_tags)
from tagcast.textprep import tag_key

from conftest import make_user

TAGS = ["Chemotherapy", "Fatigue", "Lung cancer", "Scan", "Nausea", "Radiotherapy", "Pain"]
tag_lists = st.lists(st.sampled_from(TAGS), min_size=1, max_size=6, unique=True)


def test_metrics_hand_cases():
    assert metrics_at_k(["a", "b", "c"], ["a", "c", "d", "e"], 3) == (2 / 3, 2 / 4)
    assert metrics_at_k(["a"], ["a", "b"], 3) == (1.0, 0.5)          # short prediction list
    assert metrics_at_k([], ["a"], 3) == (0.0, 0.0)
    assert metrics_at_k(["Scans"], ["scan"], 1) == (1.0, 1.0)        # normalized match
    with pytest.raises(EvalError):
        metrics_at_k(["a"], [], 1)


def test_f1_published_example():
    assert round(f1(0.874, 0.296), 3) == 0.442
    assert f1(0.0, 0.0) == 0.0


def _naive(preds, golds, k):
    P = R = 0.0
    for p, g in zip(preds, golds):
        top = p[:k]
        hit = sum(1 for t in {tag_key(x) for x in top} if t in {tag_key(y) for y in g})
        P += hit / len(top) if top else 0.0
        R += hit / len({tag_key(y) for y in g})
    P, R = P / len(preds), R / len(preds)
    return P, R, (2 * P * R / (P + R) if P + R else 0.0)


@given(st.lists(st.tuples(st.lists(st.sampled_from(TAGS), max_size=6, unique=True), tag_lists),
                min_size=1, max_size=12))
def test_evaluate_run_matches_naive(pairs):
    preds = [{"user_id": f"u{i}", "target_index": 1, "tags": p} for i, (p, _) in enumerate(pairs)]
    gold = [{"user_id": f"u{i}", "target_index": 1, "target": g} for i, (_, g) in enumerate(pairs)]
    rep = evaluate_run(preds, gold, HashTagEmbedder(), ks=(1, 3, 5))
    for k in (1, 3, 5):
        P, R, F = _naive([p for p, _ in pairs], [g for _, g in pairs], k)
        assert rep.get("precision", k) == pytest.approx(P, abs=1e-12)
        assert rep.get("recall", k) == pytest.approx(R, abs=1e-12)
        assert rep.get("f1", k) == pytest.approx(F, abs=1e-12)
        assert 0.0 <= rep.get("cosine", k) <= 1.0 + 1e-12


def test_evaluate_run_alignment_checks():
    p = [{"user_id": "a", "target_index": 1, "tags": ["x"]}]
    g = [{"user_id": "b", "target_index": 1, "target": ["x"]}]
    with pytest.raises(EvalError, match="misaligned"):
        evaluate_run(p, g)
    with pytest.raises(EvalError):
        evaluate_run(p, [])
    ex = TrainingExample("a", 0, 0, False, ("x",), 1)
    assert evaluate_run(p, [ex], ks=(1,)).get("recall", 1) == 1.0


def test_cosine_metric_identity_and_floor():
    emb = HashTagEmbedder()
    assert cosine_metric(["Scan"], ["Scan", "Pain"], emb, 1) == pytest.approx(1.0)
    assert cosine_metric([], ["Scan"], emb, 3) == 0.0
    assert cosine_metric(["Pain"], ["Scan"], lambda t: np.array([1.0, 0]) if t == "Pain"
                         else np.array([-1.0, 0]), 1) == 0.0


def test_cooccurrence_embedder(small_community):
    users, _ = small_community
    a, b = CooccurrenceEmbedder(users), CooccurrenceEmbedder(users)
    t = users[0].posts[0].keywords[0]
    np.testing.assert_array_equal(a(t), b(t))
    with pytest.raises(EvalError):
        a("zzzqqq unknown")


def _rep(label, p, r, n=10):
    return MetricsReport(label, (1,), {1: {"precision": p, "recall": r, "cosine": 0.5,
                                           "f1": f1(p, r)}}, n, {"x": 1})


def test_mean_reports_rederives_f1():
    m = mean_reports([_rep("a", 0.2, 0.4), _rep("a", 0.6, 0.2)])
    assert m.get("precision", 1) == pytest.approx(0.4)
    assert m.get("f1", 1) == pytest.approx(f1(0.4, 0.3))


def test_report_serialization():
    text = reports_to_csv([_rep("cell one", 0.5, 0.25)], echo={"seed": 0})
    lines = text.splitlines()
    assert lines[0] == '# config: {"seed": 0}'
    rows = list(csv.reader(io.StringIO("\n".join(lines[1:]))))
    assert rows[0] == ["config", "n_examples", "recall@1", "precision@1", "cosine@1", "f1@1"]
    assert rows[1][:4] == ["cell one", "10", "0.250000", "0.500000"]
    d = json.loads(reports_to_json([_rep("c", 0.5, 0.25)], echo={"seed": 0}))
    assert d["config"] == {"seed": 0} and d["reports"][0]["metrics"]["1"]["precision"] == 0.5


def test_top_tag_removal():
    exs = [TrainingExample("u", 0, 0, False, ("A", "B", "C"), 1),
           TrainingExample("v", 0, 0, False, ("a", "B"), 1),
           TrainingExample("w", 0, 0, False, ("B", "A"), 1)]
    top = top_tags(exs, 2)
    assert top == ["a", "b"]
    kept = remove_top_tags(exs, top)
    assert [e.target for e in kept] == [("C",)]
    users = strip_tags_from_users([make_user("u", 2)], ["chemotherapy"])
    assert users[0].posts[0].keywords == ("Fatigue",)


def test_expand_grid_rule():
    cells = expand_grid(["full"], [3], [0, 3], ["none", "random"], [0, 2])
    assert {(c.h, c.strategy) for c in cells} == {(0, "none"), (3, "random")}
    assert len(cells) == 4
    assert GridCell(remove_top=2).label.endswith(" -2Tg")
    with pytest.raises(EvalError):
        expand_grid(h_values=[0], strategies=["random"])


def fake_runner(cell, seed):
    p = 0.1 * cell.pn + 0.01 * seed
    return {"generator": _rep(cell.label, p, p / 2), "classifier": _rep(cell.label, p / 3, p)}


def test_ablation_grid_averages_and_parallel_identical():
    cells = expand_grid(["full"], [1, 2])
    serial = ablation_grid(cells, fake_runner, seeds=(0, 1))
    parallel = ablation_grid(cells, fake_runner, seeds=(0, 1), jobs=2)
    assert [r.to_dict() for r in serial] == [r.to_dict() for r in parallel]
    assert [r.label.split()[0] for r in serial] == ["classifier", "generator"] * 2
    assert serial[1].get("precision", 1) == pytest.approx(0.1 + 0.005)

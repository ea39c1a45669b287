from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tagcast.encoder import MaskedLMConfig
from tagcast.synth import SynthConfig, generate_annotated_bios
from tagcast.timeline import (LabelSchema, NerHyper, NerTagger, SchemaError, TimelineError,
                              agreement, default_schema, is_valid_bio, labels_to_timeline,
                              load_annotated_bios, ner_metrics, read_timeline_csv, repair_bio,
                              tag_bio, timeline_features, train_ner, write_timeline_csv)

SCHEMA = default_schema()
label_st = st.sampled_from(SCHEMA.labels)


def test_default_schema_shape():
    assert len(SCHEMA.classes) == 13
    assert len(SCHEMA.labels) == 25 and SCHEMA.labels[0] == "O"
    assert "Employment" in SCHEMA.classes and SCHEMA.other == "Other"
    assert LabelSchema.from_json(SCHEMA.to_json()) == SCHEMA


def test_schema_validation():
    with pytest.raises(SchemaError):
        LabelSchema(("a", "b"), "a")
    with pytest.raises(SchemaError):
        SCHEMA.check("B-Nope")
    with pytest.raises(SchemaError):
        LabelSchema(tuple(f"c{i}" for i in range(13)), "Other")


@given(st.lists(label_st, max_size=40))
def test_repair_makes_valid(labels):
    fixed = repair_bio(labels)
    assert is_valid_bio(fixed)
    assert [SCHEMA.class_of(x) for x in fixed] == [SCHEMA.class_of(x) for x in labels]
    if is_valid_bio(labels):
        assert fixed == list(labels)


def test_is_valid_bio_cases():
    assert is_valid_bio(["B-Employment", "I-Employment", "O"])
    assert not is_valid_bio(["O", "I-Employment"])
    assert not is_valid_bio(["B-Diagnosis_Past", "I-Employment"])


def test_timeline_preserves_token_multiset_random():
    rng = np.random.default_rng(0)
    words = ["lung", "cancer", "2015", "chemo", "scan", "nurse", "i", "was", "the", "and"]
    for _ in range(1000):
        n = int(rng.integers(0, 30))
        toks = [words[i] for i in rng.integers(0, len(words), n)]
        labs = [SCHEMA.labels[i] for i in rng.integers(0, len(SCHEMA.labels), n)]
        rec = labels_to_timeline(toks, labs)
        got = Counter(t for col in rec.columns for t in col.split())
        assert got == Counter(toks)
        for c in SCHEMA.classes:
            want = [t for t, lab in zip(toks, labs) if SCHEMA.class_of(lab) == c]
            assert rec.column(c).split() == want


@given(st.lists(st.tuples(st.sampled_from(["a", "b", "c"]), label_st), max_size=25))
def test_timeline_multiset_property(pairs):
    toks = [t for t, _ in pairs]
    rec = labels_to_timeline(toks, [lab for _, lab in pairs])
    assert Counter(" ".join(rec.columns).split()) == Counter(toks)


def test_timeline_length_mismatch():
    with pytest.raises(TimelineError):
        labels_to_timeline(["a"], [])


def test_timeline_features_need_entities():
    rec = labels_to_timeline(["hello", "there"], ["O", "O"], user_id="u")
    with pytest.raises(TimelineError):
        timeline_features(rec)
    rec = labels_to_timeline(["lung", "cancer"], ["B-Diagnosis_Past", "I-Diagnosis_Past"])
    assert rec.feature_tokens() == ["lung", "cancer"]
    assert timeline_features(rec).dim == 64


def test_kappa_hand_case():
    # po = 3/4; counts (2,2) vs (3,1) give pe = (2*3 + 2*1) / 16 = 1/2
    a = ["B-Diagnosis_Past", "I-Diagnosis_Past", "O", "O"]
    b = ["B-Diagnosis_Past", "I-Diagnosis_Past", "O", "B-Diagnosis_Past"]
    r = agreement(a, b)
    assert r["kappa"] == 0.5
    assert r["cosine"] == pytest.approx(8 / (np.sqrt(8) * np.sqrt(10)))
    assert agreement(a, a)["kappa"] == 1.0
    with pytest.raises(TimelineError):
        agreement(a, b[:3])


def test_ner_metrics_hand_case():
    gold = [["B-Employment", "O", "O"]]
    pred = [["B-Employment", "B-Employment", "O"]]
    cm = ner_metrics(pred, gold)
    assert cm.total == 3 and cm.accuracy == pytest.approx(2 / 3)
    e, o = SCHEMA.classes.index("Employment"), SCHEMA.classes.index("Other")
    assert cm.counts[e, e] == 1 and cm.counts[o, e] == 1 and cm.counts[o, o] == 1
    assert cm.macro_recall == pytest.approx((1.0 + 0.5) / 2)


def test_csv_roundtrip(tmp_path):
    recs = [labels_to_timeline(["lung", "nurse"], ["B-Diagnosis_Past", "B-Employment"], user_id="u1"),
            labels_to_timeline(["x"], ["O"], user_id="u2")]
    write_timeline_csv(recs, tmp_path / "t.csv")
    back = read_timeline_csv(tmp_path / "t.csv")
    assert [(r.user_id, r.columns) for r in back] == [(r.user_id, r.columns) for r in recs]


def test_load_annotated_bios_rejects_invalid(tmp_path):
    p = tmp_path / "b.jsonl"
    p.write_text('{"tokens": ["a"], "labels": ["I-Employment"]}\n')
    with pytest.raises(SchemaError):
        load_annotated_bios(p)
    p.write_text('{"tokens": ["a", "b"], "labels": ["O"]}\n')
    with pytest.raises(SchemaError):
        load_annotated_bios(p)


@pytest.fixture(scope="module")
def memorized():
    bios = generate_annotated_bios(SynthConfig(seed=5), 12)
    cfg = MaskedLMConfig(vocab_size=1, layers=1, hidden_dim=32, heads=4, max_len=96)
    return bios, train_ner(bios, cfg, NerHyper(epochs=60, lr=5e-3, batch_size=4, unk_rate=0.0))


def test_ner_memorizes_small_set(memorized):
    bios, tagger = memorized
    pred = [tagger.tag_tokens(b.tokens) for b in bios]
    cm = ner_metrics(pred, [b.labels for b in bios])
    assert cm.accuracy > 0.97
    assert tagger.trace[-1] < tagger.trace[0]
    assert all(is_valid_bio(p) for p in pred)


def test_ner_save_load(memorized, tmp_path):
    bios, tagger = memorized
    tagger.save(tmp_path / "ner.ckpt")
    back = NerTagger.load(tmp_path / "ner.ckpt")
    assert back.tag_tokens(bios[0].tokens) == tagger.tag_tokens(bios[0].tokens)
    assert tag_bio(back, None) == []


def test_ner_long_input_is_chunked(memorized):
    bios, tagger = memorized
    toks = [t for b in bios for t in b.tokens][:300]
    assert len(tagger.tag_tokens(toks)) == len(toks)


def test_train_ner_needs_two_classes():
    with pytest.raises(SchemaError):
        train_ner([{"tokens": ["a"], "labels": ["O"]}], hyper=NerHyper(epochs=1))

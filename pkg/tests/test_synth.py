from collections import Counter

import pytest

from tagcast.corpus import validate_corpus
from tagcast.synth import (SynthConfig, SynthError, generate_annotated_bios, generate_community,
                           oracle_neighbor_quality, other_share, stage_alignment_rate, Oracle)
from tagcast.textprep import tokenize
from tagcast.timeline import default_schema, is_valid_bio


@pytest.fixture(scope="module")
def community():
    return generate_community(SynthConfig(n_users=400, seed=11))


def test_deterministic():
    a = generate_community(SynthConfig(n_users=30, seed=4))
    b = generate_community(SynthConfig(n_users=30, seed=4))
    assert a[0] == b[0] and a[1].to_json() == b[1].to_json()
    assert generate_community(SynthConfig(n_users=30, seed=5))[0] != a[0]


def test_reference_statistics(community):
    users, _ = community
    n = len(users)
    assert validate_corpus(users) == users          # every generated post is valid
    assert 0.45 < sum(u.has_bio for u in users) / n < 0.65
    posts = [p for u in users for p in u.posts]
    assert 2.1 < len(posts) / n < 2.7
    assert 2.9 < sum(len(p.keywords) for p in posts) / len(posts) < 3.5
    for u in users:
        assert all(a.date < b.date for a, b in zip(u.posts, u.posts[1:]))


def test_tag_frequencies_are_skewed(community):
    users, _ = community
    c = Counter(k for u in users for p in u.posts for k in p.keywords)
    freq = [v for _, v in c.most_common()]
    assert freq[0] > 3 * freq[9]


def test_stage_alignment(community):
    users, oracle = community
    assert stage_alignment_rate(users, oracle) > 0.6


def test_oracle_roundtrip_and_similarity(community, tmp_path):
    users, oracle = community
    oracle.save(tmp_path / "o.json")
    back = Oracle.load(tmp_path / "o.json")
    assert back.to_json() == oracle.to_json()
    u = users[0].user_id
    for v in oracle.similar_users(u):
        assert oracle.archetype(v) == oracle.archetype(u) and v != u
    perfect = {u.user_id: oracle.similar_users(u.user_id)[:3] for u in users[:50]
               if oracle.similar_users(u.user_id)}
    assert oracle_neighbor_quality(perfect, oracle) == 1.0
    with pytest.raises(SynthError):
        oracle_neighbor_quality({u: []}, oracle)


def test_annotated_bios():
    bios = generate_annotated_bios(SynthConfig(seed=2), 200)
    schema = default_schema()
    assert len(bios) == 200
    for b in bios:
        assert is_valid_bio(b.labels)
        for lab in b.labels:
            schema.check(lab)
    assert 0.5 < other_share(bios) < 0.7
    used = {schema.class_of(lab) for b in bios for lab in b.labels}
    assert len(used) >= 10


def test_bio_text_tokenizes_to_labels(community):
    users, oracle = community
    for u in users[:80]:
        lat = oracle.users[u.user_id]
        if u.has_bio:
            assert tokenize(u.bio) == lat.bio_tokens
            assert len(lat.bio_labels) == len(lat.bio_tokens)


@pytest.mark.parametrize("field,value", [("bio_prob", 1.5), ("n_archetypes", 0),
                                         ("n_stages", 1), ("mean_keywords", 1.0),
                                         ("other_share", 1.0)])
def test_config_validation(field, value):
    with pytest.raises(SynthError):
        SynthConfig(**{field: value}).validate()
    with pytest.raises(SynthError):
        SynthConfig.from_dict({"bogus": 1})

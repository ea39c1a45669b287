import datetime as dt
import json

import pytest
from hypothesis import given, strategies as st

from conftest import make_post, make_user
from tagcast.corpus import (AssemblyOptions, CorpusError, MissingBioError, Mode, Post,
                            SegmentKind, UserRecord, assemble_document, generate_examples,
                            load_corpus, query_date, save_corpus, split_examples,
                            validate_corpus)
from tagcast.textprep import build_vocabulary, normalize_text


def enumerate_windows(n: int, has_bio: bool):
    """Brute-force: every contiguous window of the timeline [bio?, p0..p_{n-1}]
    whose next element is a post."""
    elems = (["bio"] if has_bio else []) + list(range(n))
    out = set()
    for i in range(len(elems)):
        for j in range(i, len(elems) - 1):
            nxt = elems[j + 1]
            window = tuple(elems[i:j + 1])
            out.add((window, nxt))
    return out


def as_windows(examples):
    out = set()
    for e in examples:
        w = (("bio",) if e.include_bio else ()) + tuple(e.window)
        out.add((w, e.target_index))
    return out


@given(st.integers(1, 8), st.booleans())
def test_example_count_matches_enumerator(n, has_bio):
    u = make_user("u", n, bio="diagnosed in march" if has_bio else None)
    ex = generate_examples(u)
    expected = n * (n + 1) // 2 if has_bio else n * (n - 1) // 2
    assert len(ex) == expected
    assert as_windows(ex) == enumerate_windows(n, has_bio)
    for e in ex:
        assert e.target == u.posts[e.target_index].keywords


def test_bio_plus_three_posts_gives_six():
    assert len(generate_examples(make_user("u", 3))) == 6


def test_query_date():
    u = make_user("u", 3)
    ex = generate_examples(u)
    bio_only = [e for e in ex if e.is_bio_only][0]
    assert query_date(u, bio_only) == u.posts[0].date
    last = [e for e in ex if e.target_index == 2][0]
    assert query_date(u, last) == u.posts[1].date


def test_validate_drops_bad_posts_and_sorts():
    good = make_post(5)
    early = make_post(1)
    short = Post(dt.date(2016, 1, 3), "too short", ("a", "b"))
    one_kw = Post(dt.date(2016, 1, 4), "long enough text here", ("a",))
    u = UserRecord("u", None, (good, short, one_kw, early))
    empty = UserRecord("v", "bio", (short,))
    out = validate_corpus([u, empty])
    assert [x.user_id for x in out] == ["u"]
    assert out[0].posts == (early, good)


def test_corpus_roundtrip(tmp_path):
    users = [make_user("a", 2), make_user("b", 1, bio=None)]
    save_corpus(users, tmp_path / "c.jsonl")
    assert load_corpus(tmp_path / "c.jsonl") == users


@pytest.mark.parametrize("line", ['{"user_id": 3, "posts": []}', "not json",
                                  '{"user_id": "a"}',
                                  '{"user_id": "a", "posts": [{"date": "x", "text": "", '
                                  '"keywords": []}]}'])
def test_load_corpus_rejects(tmp_path, line):
    p = tmp_path / "c.jsonl"
    p.write_text(line + "\n")
    with pytest.raises(CorpusError):
        load_corpus(p)


def test_load_corpus_duplicate_ids(tmp_path):
    rec = json.dumps(make_user("a", 1).to_dict())
    p = tmp_path / "c.jsonl"
    p.write_text(rec + "\n" + rec + "\n")
    with pytest.raises(CorpusError, match="duplicate"):
        load_corpus(p)


@given(st.integers(2, 30), st.integers(0, 10_000), st.booleans())
def test_split_partitions(n_users, seed, by_user):
    users = [make_user(f"u{i}", 1 + i % 4) for i in range(n_users)]
    ex = [e for u in users for e in generate_examples(u)]
    train, test = split_examples(ex, 0.8, seed, by_user=by_user)
    assert sorted(map(id, train + test)) == sorted(map(id, ex))
    if by_user:
        assert not {e.user_id for e in train} & {e.user_id for e in test}


def _vocab_for(u):
    docs = [normalize_text(u.bio)] + [normalize_text(p.text) for p in u.posts]
    docs += [normalize_text(k) for p in u.posts for k in p.keywords]
    return build_vocabulary(docs)


def test_assembly_modes():
    u = make_user("u", 4)
    v = _vocab_for(u)
    e = [x for x in generate_examples(u) if x.include_bio and x.target_index == 3][0]
    kinds = {m: assemble_document(u, e, AssemblyOptions(m, pn=2), v).content_kinds
             for m in (Mode.BIO_ONLY, Mode.BIO_POSTS, Mode.FULL)}
    K = SegmentKind
    assert kinds[Mode.BIO_ONLY] == [K.CLS, K.BIO, K.MASK]
    assert kinds[Mode.BIO_POSTS] == [K.CLS, K.BIO, K.POST, K.POST, K.MASK]
    assert kinds[Mode.FULL] == [K.CLS, K.BIO, K.POST, K.POST, K.KEYWORDS, K.KEYWORDS, K.MASK]
    doc = assemble_document(u, e, AssemblyOptions(Mode.FULL, pn=2).with_neighbors(["Scan"]), v)
    assert doc.content_kinds[-2] == K.NEIGHBOR_TAGS
    assert doc.ids[-1] == v.mask_id


def test_bio_only_requires_bio():
    u = make_user("u", 2, bio=None)
    with pytest.raises(MissingBioError):
        assemble_document(u, generate_examples(u)[0], AssemblyOptions(Mode.BIO_ONLY),
                          _vocab_for(make_user("x", 2)))


@given(st.integers(12, 60))
def test_truncation_respects_max_len(max_len):
    u = make_user("u", 6, bio="a very long bio " * 10)
    v = _vocab_for(u)
    e = [x for x in generate_examples(u) if x.include_bio][-1]
    doc = assemble_document(u, e, AssemblyOptions(Mode.FULL, pn=5, max_len=max_len), v)
    assert len(doc) <= max_len
    assert doc.ids[0] == v.cls_id and doc.ids[-1] == v.mask_id

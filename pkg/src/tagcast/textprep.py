"""Text normalization, vocabulary and TF-IDF shared by every text consumer.

Tokenization is lowercase alphanumeric runs; normalization additionally drops
stop words and applies a small rule-based suffix stemmer.  Keywords go through
the same pipeline as post text so tag matching is done on normalized forms.
"""
from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

CLS = "[CLS]"
SEP = "[SEP]"
MASK = "[MASK]"
PAD = "[PAD]"
UNK = "[UNK]"
TAG_SEP = "[TAGSEP]"
SPECIAL_TOKENS = (CLS, SEP, MASK, PAD, UNK, TAG_SEP)

_TOKEN_RE = re.compile(r"[a-z0-9]+")
_VOWELS = set("aeiou")


@lru_cache(maxsize=1)
def stop_words() -> frozenset[str]:
    text = resources.files("tagcast.resources").joinpath("stopwords.txt").read_text()
    return frozenset(w.strip() for w in text.splitlines() if w.strip())


def tokenize(text: str | None) -> list[str]:
    """Lowercase and split on anything that is not a letter or digit."""
    if not text:
        return []
    return _TOKEN_RE.findall(text.lower())


def _has_vowel(s: str) -> bool:
    return any(c in _VOWELS for c in s)


def _strip_once(word: str) -> str:
    if word.endswith("sses"):
        return word[:-2]
    if word.endswith("ies") and len(word) > 4:
        return word[:-3] + "i"
    if word.endswith("ing") and len(word) - 3 >= 3 and _has_vowel(word[:-3]):
        return word[:-3]
    if word.endswith("ed") and len(word) - 2 >= 3 and _has_vowel(word[:-2]):
        return word[:-2]
    if word.endswith("ly") and len(word) - 2 >= 3:
        return word[:-2]
    if (word.endswith("s") and not word.endswith(("ss", "us", "is"))
            and len(word) - 1 >= 3):
        return word[:-1]
    if (word.endswith("y") and len(word) >= 4 and word[-2] not in _VOWELS
            and _has_vowel(word[:-1])):
        return word[:-1] + "i"
    return word


@lru_cache(maxsize=65536)
def stem(word: str) -> str:
    """Suffix stemmer applied until a fixed point, so stem(stem(w)) == stem(w)."""
    if word.isdigit():
        return word
    for _ in range(8):
        nxt = _strip_once(word)
        if nxt == word:
            break
        word = nxt
    return word


def normalize_text(text: str | None) -> list[str]:
    sw = stop_words()
    out = []
    for tok in tokenize(text):
        if tok in sw:
            continue
        tok = stem(tok)
        if tok and tok not in sw:
            out.append(tok)
    return out


def normalize_tag(tag: str) -> str:
    """Normalized token string of a tag ("Cancer and Tumors" -> "cancer tumor")."""
    return " ".join(normalize_text(tag))


def tag_key(tag: str) -> str:
    """Matching key for tags; falls back to the lowercased raw tag if nothing survives."""
    return normalize_tag(tag) or " ".join(tag.lower().split())


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    index: dict[str, int] = field(compare=False, repr=False)

    def __init__(self, tokens: Sequence[str]):
        tokens = tuple(tokens)
        if tokens[: len(SPECIAL_TOKENS)] != SPECIAL_TOKENS:
            raise ValueError("vocabulary must start with the special tokens")
        index = {t: i for i, t in enumerate(tokens)}
        if len(index) != len(tokens):
            raise ValueError("duplicate token in vocabulary")
        object.__setattr__(self, "tokens", tokens)
        object.__setattr__(self, "index", index)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def id(self, token: str) -> int:
        return self.index.get(token, self.index[UNK])

    @property
    def cls_id(self) -> int:
        return self.index[CLS]

    @property
    def sep_id(self) -> int:
        return self.index[SEP]

    @property
    def mask_id(self) -> int:
        return self.index[MASK]

    @property
    def pad_id(self) -> int:
        return self.index[PAD]

    @property
    def unk_id(self) -> int:
        return self.index[UNK]

    @property
    def tag_sep_id(self) -> int:
        return self.index[TAG_SEP]

    @property
    def special_ids(self) -> frozenset[int]:
        return frozenset(range(len(SPECIAL_TOKENS)))

    def to_json(self) -> str:
        return json.dumps(list(self.tokens))

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        return cls(json.loads(text))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls.from_json(Path(path).read_text())


def build_vocabulary(token_lists: Iterable[Sequence[str]], min_count: int = 1,
                     tag_tokens: Iterable[str] = ()) -> Vocabulary:
    """Specials first, then tokens by descending frequency with lexicographic ties.

    Tag tokens are always admitted, whatever their count.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts: Counter[str] = Counter()
    for toks in token_lists:
        counts.update(toks)
    forced = set(tag_tokens)
    for t in forced:
        counts.setdefault(t, 0)
    for s in SPECIAL_TOKENS:
        counts.pop(s, None)
    kept = [t for t, c in counts.items() if c >= min_count or t in forced]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocabulary(SPECIAL_TOKENS + tuple(kept))


def encode(tokens: Iterable[str], vocab: Vocabulary) -> list[int]:
    return [vocab.id(t) for t in tokens]


def decode(ids: Iterable[int], vocab: Vocabulary) -> list[str]:
    out = []
    for i in ids:
        i = int(i)
        if not 0 <= i < len(vocab):
            raise IndexError(f"token id {i} outside vocabulary of size {len(vocab)}")
        out.append(vocab.tokens[i])
    return out


@dataclass(frozen=True)
class TfidfModel:
    df: dict[str, int]
    n_documents: int

    def idf(self, token: str) -> float:
        return math.log((1 + self.n_documents) / (1 + self.df.get(token, 0)))

    @property
    def features(self) -> list[str]:
        return sorted(self.df)


def fit_tfidf(documents: Iterable[Sequence[str]]) -> TfidfModel:
    df: Counter[str] = Counter()
    n = 0
    for doc in documents:
        n += 1
        df.update(set(doc))
    if n == 0:
        raise ValueError("fit_tfidf needs at least one document")
    return TfidfModel(dict(df), n)


def tfidf_vector(model: TfidfModel | None, document: Sequence[str]) -> dict[str, float]:
    """Sparse L2-normalized vector; weight = tf * (ln((1+N)/(1+df)) + 1).

    Tokens unseen at fit time get df = 0 (largest idf).
    """
    if model is None:
        raise ValueError("TF-IDF model has not been fitted")
    tf = Counter(document)
    w = {t: c * (model.idf(t) + 1.0) for t, c in tf.items()}
    norm = math.sqrt(sum(v * v for v in w.values()))
    if norm == 0.0:
        return {}
    return {t: v / norm for t, v in sorted(w.items())}


def tfidf_matrix(model: TfidfModel, documents: Sequence[Sequence[str]]):
    """Dense (n_docs, n_features) array over the fitted feature list."""
    import numpy as np

    feats = model.features
    col = {t: j for j, t in enumerate(feats)}
    X = np.zeros((len(documents), len(feats)))
    for i, doc in enumerate(documents):
        for t, v in tfidf_vector(model, doc).items():
            j = col.get(t)
            if j is not None:
                X[i, j] = v
    return X

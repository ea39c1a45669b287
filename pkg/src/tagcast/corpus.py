"""Users, posts and keywords; chronological training pairs; input documents."""
from __future__ import annotations

import datetime as dt
import enum
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .textprep import (CLS, MASK, SEP, TAG_SEP, Vocabulary, normalize_tag,
                       normalize_text)

MIN_POST_WORDS = 3
MIN_KEYWORDS = 2
MAX_KEYWORDS = 10
DEFAULT_MAX_LEN = 512

# Reference statistics of the lung-cancer community data the defaults mimic.
REFERENCE_STATS = {
    "n_users": 1032,
    "mean_posts_per_user": 2.4,
    "mean_keywords_per_post": 3.2,
    "bio_fraction": 0.55,
}


class CorpusError(ValueError):
    pass


class MissingBioError(CorpusError):
    pass


@dataclass(frozen=True)
class Post:
    date: dt.date
    text: str
    keywords: tuple[str, ...]

    def is_valid(self) -> bool:
        n_kw = len(self.keywords)
        return (len(self.text.split()) >= MIN_POST_WORDS
                and MIN_KEYWORDS <= n_kw <= MAX_KEYWORDS
                and all(isinstance(k, str) and k.strip() for k in self.keywords))

    def to_dict(self) -> dict:
        return {"date": self.date.isoformat(), "text": self.text,
                "keywords": list(self.keywords)}


@dataclass(frozen=True)
class UserRecord:
    user_id: str
    bio: str | None
    posts: tuple[Post, ...]

    @property
    def has_bio(self) -> bool:
        return bool(self.bio and self.bio.strip())

    def to_dict(self) -> dict:
        return {"user_id": self.user_id, "bio": self.bio,
                "posts": [p.to_dict() for p in self.posts]}


def _parse_user(obj, lineno: int) -> UserRecord:
    if not isinstance(obj, dict):
        raise CorpusError(f"line {lineno}: expected a JSON object")
    for key in ("user_id", "posts"):
        if key not in obj:
            raise CorpusError(f"line {lineno}: missing field {key!r}")
    if not isinstance(obj["user_id"], str):
        raise CorpusError(f"line {lineno}: user_id must be a string")
    bio = obj.get("bio")
    if bio is not None and not isinstance(bio, str):
        raise CorpusError(f"line {lineno}: bio must be a string or null")
    if not isinstance(obj["posts"], list):
        raise CorpusError(f"line {lineno}: posts must be a list")
    posts = []
    for j, p in enumerate(obj["posts"]):
        try:
            date = dt.date.fromisoformat(p["date"])
            text = p["text"]
            keywords = p["keywords"]
        except (KeyError, TypeError, ValueError) as exc:
            raise CorpusError(f"line {lineno}: post {j}: {exc!r}") from None
        if not isinstance(text, str) or not isinstance(keywords, list):
            raise CorpusError(f"line {lineno}: post {j}: bad text/keywords type")
        posts.append(Post(date, text, tuple(str(k) for k in keywords)))
    return UserRecord(obj["user_id"], bio, tuple(posts))


def load_corpus(path: str | Path) -> list[UserRecord]:
    users = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {lineno}: invalid JSON ({exc.msg})") from None
            user = _parse_user(obj, lineno)
            if user.user_id in seen:
                raise CorpusError(f"line {lineno}: duplicate user_id {user.user_id!r}")
            seen.add(user.user_id)
            users.append(user)
    return users


def save_corpus(users: Iterable[UserRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for u in users:
            fh.write(json.dumps(u.to_dict(), sort_keys=True) + "\n")


def validate_corpus(users: Iterable[UserRecord]) -> list[UserRecord]:
    """Drop invalid posts and empty users; order posts by date.

    Same-day posts keep their ingestion order (the sort is stable).
    """
    out = []
    for u in users:
        posts = sorted((p for p in u.posts if p.is_valid()), key=lambda p: p.date)
        if posts:
            out.append(UserRecord(u.user_id, u.bio, tuple(posts)))
    return out


@dataclass(frozen=True)
class TrainingExample:
    user_id: str
    window_start: int
    window_end: int
    include_bio: bool
    target: tuple[str, ...]
    target_index: int

    @property
    def window(self) -> range:
        return range(self.window_start, self.window_end + 1)

    @property
    def is_bio_only(self) -> bool:
        return self.window_end < self.window_start

    @property
    def key(self) -> tuple[str, int]:
        return (self.user_id, self.target_index)


def generate_examples(user: UserRecord) -> list[TrainingExample]:
    """All chronological (contiguous window -> next post keywords) pairs.

    The bio acts as a timeline element placed before post 0: windows may start
    at it, and a bio-only window targets post 0.
    """
    n = len(user.posts)
    out = []
    if user.has_bio:
        out.append(TrainingExample(user.user_id, 0, -1, True,
                                   user.posts[0].keywords, 0))
    for j in range(1, n):
        target = user.posts[j].keywords
        if user.has_bio:
            out.append(TrainingExample(user.user_id, 0, j - 1, True, target, j))
        for i in range(j):
            out.append(TrainingExample(user.user_id, i, j - 1, False, target, j))
    out.sort(key=lambda e: (e.target_index, -1 if e.include_bio else e.window_start))
    return out


def generate_all_examples(users: Iterable[UserRecord]) -> list[TrainingExample]:
    return [e for u in users for e in generate_examples(u)]


def split_examples(examples: Sequence[TrainingExample], train_fraction: float,
                   seed: int, by_user: bool = False
                   ) -> tuple[list[TrainingExample], list[TrainingExample]]:
    if not examples:
        raise CorpusError("cannot split an empty example list")
    if not 0.0 < train_fraction < 1.0:
        raise CorpusError("train_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    if not by_user:
        order = rng.permutation(len(examples))
        n_train = int(round(train_fraction * len(examples)))
        train_idx = set(order[:n_train].tolist())
    else:
        users = sorted({e.user_id for e in examples})
        order = rng.permutation(len(users))
        target = train_fraction * len(examples)
        per_user: dict[str, int] = {}
        for e in examples:
            per_user[e.user_id] = per_user.get(e.user_id, 0) + 1
        chosen, total = set(), 0
        for k in order:
            if total >= target:
                break
            chosen.add(users[k])
            total += per_user[users[k]]
        train_idx = {i for i, e in enumerate(examples) if e.user_id in chosen}
    train = [e for i, e in enumerate(examples) if i in train_idx]
    test = [e for i, e in enumerate(examples) if i not in train_idx]
    return train, test


class Mode(str, enum.Enum):
    BIO_ONLY = "bio_only"
    BIO_POSTS = "bio_posts"
    FULL = "full"
    FULL_PLUS_NEIGHBORS = "full_plus_neighbors"

    @property
    def rank(self) -> int:
        return list(Mode).index(self)


class SegmentKind(enum.IntEnum):
    CLS = 0
    BIO = 1
    POST = 2
    KEYWORDS = 3
    NEIGHBOR_TAGS = 4
    SEP = 5
    MASK = 6


N_SEGMENT_KINDS = len(SegmentKind)


@dataclass(frozen=True)
class AssemblyOptions:
    mode: Mode = Mode.FULL
    pn: int = 3
    neighbor_tags: tuple[str, ...] | None = None
    max_len: int = DEFAULT_MAX_LEN

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.pn < 1:
            raise CorpusError("pn must be >= 1")
        if self.mode is Mode.FULL_PLUS_NEIGHBORS and self.neighbor_tags is None:
            raise CorpusError("FULL_PLUS_NEIGHBORS requires neighbor_tags")
        if self.neighbor_tags is not None:
            object.__setattr__(self, "neighbor_tags", tuple(self.neighbor_tags))

    def with_neighbors(self, tags: Sequence[str]) -> "AssemblyOptions":
        return AssemblyOptions(Mode.FULL_PLUS_NEIGHBORS, self.pn, tuple(tags), self.max_len)


@dataclass(frozen=True)
class Segment:
    kind: SegmentKind
    tokens: tuple[str, ...]
    post_index: int | None = None


def tags_to_tokens(tags: Iterable[str]) -> list[str]:
    """Tags flattened into one token run, each tag closed by TAG_SEP."""
    out: list[str] = []
    for t in tags:
        toks = normalize_tag(t).split()
        if toks:
            out.extend(toks)
            out.append(TAG_SEP)
    return out


@dataclass(frozen=True)
class InputDocument:
    segments: tuple[Segment, ...]
    ids: tuple[int, ...] = field(repr=False)
    kinds: tuple[int, ...] = field(repr=False)

    @classmethod
    def build(cls, segments: Sequence[Segment], vocab: Vocabulary) -> "InputDocument":
        ids: list[int] = []
        kinds: list[int] = []
        for seg in segments:
            ids.extend(vocab.id(t) for t in seg.tokens)
            kinds.extend([int(seg.kind)] * len(seg.tokens))
        return cls(tuple(segments), tuple(ids), tuple(kinds))

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def positions(self) -> range:
        return range(len(self.ids))

    @property
    def segment_kinds(self) -> list[SegmentKind]:
        return [s.kind for s in self.segments]

    @property
    def content_kinds(self) -> list[SegmentKind]:
        return [s.kind for s in self.segments if s.kind is not SegmentKind.SEP]

    def truncated(self, max_len: int, vocab: Vocabulary) -> "InputDocument":
        """Drop whole oldest posts (with their keywords), then trim the bio's head."""
        if len(self) <= max_len:
            return self
        segs = list(self.segments)

        def total(s):
            return sum(len(x.tokens) for x in s)

        def drop_post(s, idx):
            keep, skip_sep = [], False
            for seg in s:
                if seg.post_index == idx:
                    skip_sep = True
                    continue
                if skip_sep and seg.kind is SegmentKind.SEP:
                    skip_sep = False
                    continue
                skip_sep = False
                keep.append(seg)
            return keep

        post_ids = sorted({s.post_index for s in segs if s.post_index is not None})
        for idx in post_ids:
            if total(segs) <= max_len:
                break
            segs = drop_post(segs, idx)
        excess = total(segs) - max_len
        for kind in (SegmentKind.BIO, SegmentKind.NEIGHBOR_TAGS):
            if excess <= 0:
                break
            for i, seg in enumerate(segs):
                if seg.kind is kind:
                    n = min(excess, len(seg.tokens))
                    toks = seg.tokens[n:] if kind is SegmentKind.BIO else seg.tokens[:len(seg.tokens) - n]
                    segs[i] = Segment(kind, toks, seg.post_index)
                    excess -= n
        segs = [s for s in segs if s.tokens]
        out = []
        for s in segs:  # collapse separators left dangling by emptied segments
            if s.kind is SegmentKind.SEP and (not out or out[-1].kind in (SegmentKind.SEP, SegmentKind.CLS)):
                continue
            out.append(s)
        doc = InputDocument.build(out, vocab)
        if len(doc) > max_len:
            raise CorpusError(f"max_len {max_len} too small for the fixed document frame")
        return doc


def _sep() -> Segment:
    return Segment(SegmentKind.SEP, (SEP,))


def assemble_document(user: UserRecord, example: TrainingExample, opts: AssemblyOptions,
                      vocab: Vocabulary) -> InputDocument:
    if example.user_id != user.user_id:
        raise CorpusError("example does not belong to user")
    segs = [Segment(SegmentKind.CLS, (CLS,))]
    bio_tokens = tuple(normalize_text(user.bio)) if user.has_bio else ()
    if opts.mode is Mode.BIO_ONLY:
        if not user.has_bio:
            raise MissingBioError(f"user {user.user_id!r} has no bio")
        segs += [Segment(SegmentKind.BIO, bio_tokens), _sep()]
    else:
        if example.include_bio and bio_tokens:
            segs += [Segment(SegmentKind.BIO, bio_tokens), _sep()]
        window = list(example.window)[-opts.pn:] if not example.is_bio_only else []
        for j in window:
            segs += [Segment(SegmentKind.POST, tuple(normalize_text(user.posts[j].text)), j),
                     _sep()]
        if opts.mode.rank >= Mode.FULL.rank:
            for j in window:
                segs += [Segment(SegmentKind.KEYWORDS,
                                 tuple(tags_to_tokens(user.posts[j].keywords)), j), _sep()]
        if opts.mode is Mode.FULL_PLUS_NEIGHBORS and opts.neighbor_tags:
            segs += [Segment(SegmentKind.NEIGHBOR_TAGS,
                             tuple(tags_to_tokens(opts.neighbor_tags))), _sep()]
    segs.append(Segment(SegmentKind.MASK, (MASK,)))
    segs = [s for s in segs if s.tokens]
    return InputDocument.build(segs, vocab).truncated(opts.max_len, vocab)


def query_date(user: UserRecord, example: TrainingExample) -> dt.date:
    """Reference time for neighbor harvesting: the latest post in the window."""
    if example.is_bio_only:
        return user.posts[0].date
    return user.posts[example.window_end].date


@dataclass
class CorpusStats:
    n_users: int
    mean_posts_per_user: float
    mean_keywords_per_post: float
    bio_fraction: float
    n_unique_tags: int
    split_unique_tags: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)


def corpus_stats(users: Sequence[UserRecord],
                 splits: dict[str, Sequence[TrainingExample]] | None = None) -> CorpusStats:
    n_users = len(users)
    n_posts = sum(len(u.posts) for u in users)
    n_kw = sum(len(p.keywords) for u in users for p in u.posts)
    tags = {normalize_tag(k) for u in users for p in u.posts for k in p.keywords}
    split_tags = {}
    for name, exs in (splits or {}).items():
        split_tags[name] = len({normalize_tag(k) for e in exs for k in e.target})
    return CorpusStats(
        n_users=n_users,
        mean_posts_per_user=n_posts / n_users if n_users else 0.0,
        mean_keywords_per_post=n_kw / n_posts if n_posts else 0.0,
        bio_fraction=sum(u.has_bio for u in users) / n_users if n_users else 0.0,
        n_unique_tags=len(tags),
        split_unique_tags=split_tags,
    )

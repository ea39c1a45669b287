"""Synthetic health community with latent, stage-aligned disease trajectories.

Every user follows one archetype (a cancer type) through a sequence of stages,
entering at a random offset.  Post keywords mix a stage anchor tag, subtype
drug tags, a user-persistent tag and Zipf-skewed background tags.  Bios are
built from labelled template spans, so NER gold labels are exact.
"""
from __future__ import annotations

import datetime as dt
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import Post, UserRecord
from .textprep import tag_key, tokenize

ARCHETYPES = (
    ("lung", "lung cancer"),
    ("breast", "breast cancer"),
    ("prostate", "prostate cancer"),
    ("bowel", "bowel cancer"),
    ("melanoma", "skin melanoma"),
    ("leukaemia", "chronic leukaemia"),
    ("ovarian", "ovarian cancer"),
    ("thyroid", "thyroid cancer"),
)

# per stage: (noun used in the anchor tag, shared stage tags, treatment phrase, symptom)
STAGES = (
    ("symptoms", ("Screening", "Symptoms"), "screening tests", "persistent cough"),
    ("diagnosis", ("Diagnosis", "Biopsy"), "a biopsy", "weight loss"),
    ("surgery", ("Surgery", "Consultation"), "keyhole surgery", "wound pain"),
    ("radiotherapy", ("Radiotherapy", "Radiation therapy"), "radiation therapy", "skin burns"),
    ("scan", ("Scan results", "Side effects"), "a ct scan", "fatigue"),
    ("remission", ("Remission", "Recurrence"), "maintenance therapy", "anxiety"),
    ("palliative", ("Palliative care", "Hospice"), "palliative care", "breathlessness"),
    ("trial", ("Clinical trial", "Immunotherapy"), "a clinical trial", "joint pain"),
)

# Zipf-ranked background tags; the two most frequent echo a real forum's skew.
BACKGROUND_TAGS = (
    "Cancer and Tumors", "Chemotherapy", "Anxiety", "Fatigue", "Pain", "Support",
    "Family", "Nausea", "Sleep", "Diet", "Exercise", "Depression", "Hospital",
    "Employment", "Hair loss", "Insurance", "Travel", "Weight", "Vitamins", "Stress",
    "Appetite", "Mobility", "Caregivers", "Breathing", "Finances", "Nutrition",
    "Meditation", "Yoga", "Second opinion", "Pharmacy", "Dental care", "Hydration",
    "Walking", "Friends", "Grief", "Blogging", "Prayer", "Humour", "Gardening", "Pets",
)

_SYLLABLES = ("ta", "ro", "xi", "ve", "lo", "mi", "du", "ka", "pe", "zo", "ri", "sa", "ne", "fo")
_SUFFIXES = ("mab", "nib", "tide", "zole", "pril", "statin", "parin", "lisib")

_OPENERS = ("Quick update from me.", "Hello everyone.", "Hi all, hope you are well.",
            "Another week gone.", "Feeling a bit low today.", "Good news at last.")
_STAGE_LINES = (
    "Went to the GP about my {noun} and they sent me for {treat}.",
    "The {arch} team talked me through the {noun} plan.",
    "Had {treat} this week, the {noun} part was tougher than expected.",
    "Still thinking about the {noun} and what comes next.",
)
_DRUG_LINES = ("They started me on {drug}.", "Anyone else taking {drug}?",
               "The {drug} seems to be working so far.")
_FILLERS = ("Thanks for reading.", "The weather has been awful.", "Family have been great.",
            "Trying to stay positive.", "Any advice welcome.", "Off for a walk now.")

_JOBS = ("teacher", "nurse", "bus driver", "accountant", "farmer", "engineer", "chef",
         "librarian", "plumber", "designer")
_NOISE = (
    "I love {hobby} and spending time with my {family}.",
    "Proud {family} person from {place}.",
    "I enjoy {hobby} most weekends.",
    "Born and raised in {place}, now living by the sea.",
    "My {family} keeps me going every day.",
    "Big fan of {hobby}, tea and long chats.",
)
_HOBBIES = ("gardening", "knitting", "football", "painting", "cycling", "baking", "fishing",
            "reading novels", "birdwatching", "crosswords")
_FAMILY = ("grandchildren", "husband", "wife", "daughter", "son", "dog", "cats", "sister")
_PLACES = ("Leeds", "Cardiff", "Glasgow", "Bristol", "Norwich", "Belfast", "York", "Dundee")


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    n_users: int = 200
    n_archetypes: int = 6
    n_stages: int = 6
    n_subtypes: int = 2
    mean_posts: float = 2.4
    mean_keywords: float = 3.2
    bio_prob: float = 0.55
    zipf_exponent: float = 1.1
    anchor_prob: float = 0.9
    other_share: float = 0.6
    mean_gap_days: float = 90.0
    start_date: str = "2015-01-01"
    seed: int = 0

    def validate(self) -> None:
        for name in ("bio_prob", "anchor_prob", "other_share"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise SynthError(f"{name} must lie in [0, 1]")
        if self.other_share >= 1.0:
            raise SynthError("other_share must be < 1")
        if self.n_users < 1:
            raise SynthError("n_users must be >= 1")
        if not 1 <= self.n_archetypes <= len(ARCHETYPES):
            raise SynthError(f"n_archetypes must lie in [1, {len(ARCHETYPES)}]")
        if not 2 <= self.n_stages <= len(STAGES):
            raise SynthError(f"n_stages must lie in [2, {len(STAGES)}]")
        if self.n_subtypes < 1:
            raise SynthError("n_subtypes must be >= 1")
        if self.mean_posts < 1.0 or self.mean_keywords < 2.0:
            raise SynthError("mean_posts must be >= 1 and mean_keywords >= 2")
        if self.zipf_exponent <= 0 or self.mean_gap_days <= 0:
            raise SynthError("zipf_exponent and mean_gap_days must be positive")

    @classmethod
    def from_dict(cls, d: Mapping) -> "SynthConfig":
        known = set(cls.__dataclass_fields__)
        bad = sorted(set(d) - known)
        if bad:
            raise SynthError(f"unknown synth config fields: {bad}")
        return cls(**d)


def _drug_names(n: int) -> list[str]:
    # fixed stream, independent of the corpus seed, so names are stable
    rng = np.random.default_rng(20150101)
    names: list[str] = []
    seen = set()
    while len(names) < n:
        k = int(rng.integers(2, 4))
        stem = "".join(_SYLLABLES[int(i)] for i in rng.integers(0, len(_SYLLABLES), k))
        name = (stem + _SUFFIXES[int(rng.integers(0, len(_SUFFIXES)))]).capitalize()
        if name not in seen:
            seen.add(name)
            names.append(name)
    return names


@dataclass(frozen=True)
class TrajectoryModel:
    """Stage topics, text templates and timing for one configuration."""
    n_stages: int
    tags: tuple[str, ...]
    anchors: tuple[tuple[int, ...], ...]            # [archetype][stage] -> tag index
    topics: np.ndarray                               # (A, subtypes, S, n_tags), rows sum to 1
    background: np.ndarray                           # (n_tags,) Zipf over background tags
    drugs: tuple[tuple[tuple[str, ...], ...], ...]   # [archetype][subtype][stage]
    stage_templates: tuple[str, ...] = _STAGE_LINES
    mean_gap_days: float = 90.0
    zipf_exponent: float = 1.1


def build_trajectory_model(cfg: SynthConfig) -> TrajectoryModel:
    cfg.validate()
    A, K, S = cfg.n_archetypes, cfg.n_subtypes, cfg.n_stages
    names = _drug_names(A * K * S)
    drugs = tuple(tuple(tuple(names[(a * K + k) * S + s] for s in range(S)) for k in range(K))
                  for a in range(A))
    tags = list(BACKGROUND_TAGS)
    for a in range(A):
        for s in range(S):
            tags.append(f"{ARCHETYPES[a][0].capitalize()} {STAGES[s][0]}")
    for s in range(S):
        tags.extend(STAGES[s][1])
    for a in range(A):
        for k in range(K):
            tags.extend(drugs[a][k])
    tags = list(dict.fromkeys(tags))
    idx = {t: i for i, t in enumerate(tags)}
    anchors = tuple(tuple(idx[f"{ARCHETYPES[a][0].capitalize()} {STAGES[s][0]}"]
                          for s in range(S)) for a in range(A))
    n = len(tags)
    bg = np.zeros(n)
    ranks = np.arange(1, len(BACKGROUND_TAGS) + 1)
    bg[: len(BACKGROUND_TAGS)] = ranks ** -cfg.zipf_exponent
    bg /= bg.sum()
    topics = np.zeros((A, K, S, n))
    for a in range(A):
        for k in range(K):
            for s in range(S):
                row = topics[a, k, s]
                for t in STAGES[s][1]:
                    row[idx[t]] += 0.35
                row[idx[drugs[a][k][s]]] += 0.45
                if s + 1 < S:
                    row[anchors[a][s + 1]] += 0.1
                if s > 0:
                    row[anchors[a][s - 1]] += 0.1
                row /= row.sum()
    return TrajectoryModel(S, tuple(tags), anchors, topics, bg, drugs,
                           mean_gap_days=cfg.mean_gap_days, zipf_exponent=cfg.zipf_exponent)


@dataclass
class UserLatent:
    archetype: int
    subtype: int
    offset: int
    stages: list[int]
    persistent_tag: str
    bio_tokens: list[str] = field(default_factory=list)
    bio_labels: list[str] = field(default_factory=list)


@dataclass
class Oracle:
    """Latent assignments behind a generated corpus."""
    users: dict[str, UserLatent]
    n_archetypes: int
    n_stages: int

    def archetype(self, user_id: str) -> int:
        try:
            return self.users[user_id].archetype
        except KeyError:
            raise SynthError(f"unknown user {user_id!r}") from None

    def similar_users(self, user_id: str) -> list[str]:
        """Same archetype and subtype, stage offsets at most one apart."""
        me = self.users[user_id]
        return sorted(u for u, lat in self.users.items()
                      if u != user_id and lat.archetype == me.archetype
                      and lat.subtype == me.subtype and abs(lat.offset - me.offset) <= 1)

    def to_json(self) -> str:
        users = {u: asdict(lat) for u, lat in sorted(self.users.items())}
        return json.dumps({"n_archetypes": self.n_archetypes, "n_stages": self.n_stages,
                           "users": users}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Oracle":
        d = json.loads(text)
        return cls({u: UserLatent(**v) for u, v in d["users"].items()},
                   d["n_archetypes"], d["n_stages"])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "Oracle":
        return cls.from_json(Path(path).read_text())


# ------------------------------------------------------------------- bios

def _span(text: str, label: str | None) -> list[tuple[str, str]]:
    toks = tokenize(text)
    if label is None:
        return [(t, "O") for t in toks]
    return [(t, ("B-" if i == 0 else "I-") + label) for i, t in enumerate(toks)]


def _entity_sentences(rng: np.random.Generator, model: TrajectoryModel, a: int, k: int,
                      o: int) -> list[list[tuple[str, str]]]:
    S = model.n_stages
    diag = ARCHETYPES[a][1]
    drug = model.drugs[a][k]
    out = []

    def words(*parts):
        return [p for p in parts if p]

    if o == 0:
        out.append(words(_span("Waiting on tests for suspected", "Diagnosis_Future"),
                         _span(diag, "Diagnosis_Future")))
    elif o <= 2:
        out.append(words(_span("I", None), _span(f"was recently diagnosed with {diag}",
                                                  "Diagnosis_Current")))
    else:
        year = 2008 + int(rng.integers(0, 8))
        out.append(words(_span("I", None), _span(f"was diagnosed with {diag}", "Diagnosis_Past"),
                         _span(f"back in {year}", None)))
    if o >= 1 and rng.random() < 0.8:
        out.append(words(_span("Already had", "Treatment_Past"),
                         _span(STAGES[o - 1][2], "Treatment_Past")))
    if rng.random() < 0.8:
        out.append(words(_span("Currently going through", "Treatment_Current"),
                         _span(STAGES[o][2], "Treatment_Current")))
    if o + 1 < S and rng.random() < 0.8:
        out.append(words(_span("and", None), _span(f"due to start {STAGES[o + 1][2]} soon",
                                                   "Treatment_Future")))
    if o >= 1 and rng.random() < 0.6:
        out.append(words(_span("Used to take", "Medication_Past"),
                         _span(drug[o - 1], "Medication_Past")))
    if rng.random() < 0.8:
        out.append(words(_span("on", None), _span(f"{drug[o]} daily", "Medication_Current")))
    if o + 1 < S and rng.random() < 0.7:
        out.append(words(_span("Doctors plan to switch me to", "Medication_Future"),
                         _span(drug[o + 1], "Medication_Future")))
    if o >= 1 and rng.random() < 0.5:
        out.append(words(_span(f"got over the {STAGES[o - 1][3]}", "Symptom_Past")))
    if rng.random() < 0.7:
        out.append(words(_span("Struggling with", "Symptom_Current"),
                         _span(STAGES[o][3], "Symptom_Current")))
    if rng.random() < 0.6:
        job = _JOBS[int(rng.integers(0, len(_JOBS)))]
        verb = "Retired" if rng.random() < 0.4 else "Working as a"
        out.append(words(_span(f"{verb} {job}", "Employment")))
    return [sum(s, []) for s in out]


def _noise_sentence(rng: np.random.Generator) -> list[tuple[str, str]]:
    tpl = _NOISE[int(rng.integers(0, len(_NOISE)))]
    text = tpl.format(hobby=_HOBBIES[int(rng.integers(0, len(_HOBBIES)))],
                      family=_FAMILY[int(rng.integers(0, len(_FAMILY)))],
                      place=_PLACES[int(rng.integers(0, len(_PLACES)))])
    return _span(text, None)


def _make_bio(rng: np.random.Generator, model: TrajectoryModel, a: int, k: int, o: int,
              other_share: float) -> tuple[str, list[str], list[str]]:
    """Entity sentences in shuffled order, padded with noise towards other_share."""
    sents = _entity_sentences(rng, model, a, k, o)
    n_ent = sum(1 for s in sents for _, lab in s if lab != "O")
    n_out = sum(1 for s in sents for _, lab in s if lab == "O")
    want = other_share / (1.0 - other_share) * n_ent
    while n_out < want:
        s = _noise_sentence(rng)
        if n_out + len(s) - want > want - n_out:
            break
        sents.append(s)
        n_out += len(s)
    order = [int(i) for i in rng.permutation(len(sents))]
    pairs = [p for i in order for p in sents[i]]
    tokens = [t for t, _ in pairs]
    labels = [lab for _, lab in pairs]
    # tokenize(text) == tokens by construction
    text = " ".join(" ".join(t for t, _ in sents[i]).capitalize() + "." for i in order)
    return text, tokens, labels


# ------------------------------------------------------------------ posts

def _sample_keywords(rng, model: TrajectoryModel, cfg: SynthConfig, a: int, k: int, s: int,
                     persistent: str) -> tuple[str, ...]:
    n_kw = int(np.clip(2 + rng.poisson(cfg.mean_keywords - 2.0), 2, 10))
    chosen: list[int] = []
    if rng.random() < cfg.anchor_prob:
        chosen.append(model.anchors[a][s])
    p_idx = model.tags.index(persistent)
    mix = 0.5 * model.topics[a, k, s] + 0.4 * model.background
    mix[p_idx] += 0.1
    while len(chosen) < n_kw:
        p = mix.copy()
        p[chosen] = 0.0
        p /= p.sum()
        chosen.append(int(rng.choice(len(p), p=p)))
    return tuple(model.tags[i] for i in chosen)


def _post_text(rng, model: TrajectoryModel, a: int, k: int, s: int) -> str:
    parts = [_OPENERS[int(rng.integers(0, len(_OPENERS)))]]
    noun = STAGES[s][0] if rng.random() < 0.7 else "appointment"
    arch = ARCHETYPES[a][0] if rng.random() < 0.5 else "oncology"
    tpl = model.stage_templates[int(rng.integers(0, len(model.stage_templates)))]
    parts.append(tpl.format(noun=noun, arch=arch, treat=STAGES[s][2]))
    if rng.random() < 0.3:
        parts.append(_DRUG_LINES[int(rng.integers(0, len(_DRUG_LINES)))]
                     .format(drug=model.drugs[a][k][s]))
    parts.append(_FILLERS[int(rng.integers(0, len(_FILLERS)))])
    return " ".join(parts)


def generate_community(cfg: SynthConfig) -> tuple[list[UserRecord], Oracle]:
    """Corpus plus oracle; fully determined by cfg.seed."""
    model = build_trajectory_model(cfg)
    rng = np.random.default_rng([cfg.seed, 1])
    start = dt.date.fromisoformat(cfg.start_date)
    users, latents = [], {}
    width = max(4, len(str(cfg.n_users)))
    persistent_pool = BACKGROUND_TAGS[8:]
    for n in range(cfg.n_users):
        uid = f"u{n:0{width}d}"
        a = int(rng.integers(0, cfg.n_archetypes))
        k = int(rng.integers(0, cfg.n_subtypes))
        n_posts = int(min(1 + rng.poisson(cfg.mean_posts - 1.0), cfg.n_stages))
        o = int(rng.integers(0, cfg.n_stages - n_posts + 1))
        persistent = persistent_pool[int(rng.integers(0, len(persistent_pool)))]
        lat = UserLatent(a, k, o, list(range(o, o + n_posts)), persistent)
        bio = None
        if rng.random() < cfg.bio_prob:
            bio, lat.bio_tokens, lat.bio_labels = _make_bio(rng, model, a, k, o, cfg.other_share)
        day = start + dt.timedelta(days=int(rng.integers(0, 1500)))
        posts = []
        for s in lat.stages:
            posts.append(Post(day, _post_text(rng, model, a, k, s),
                              _sample_keywords(rng, model, cfg, a, k, s, persistent)))
            day += dt.timedelta(days=1 + int(rng.exponential(cfg.mean_gap_days)))
        users.append(UserRecord(uid, bio, tuple(posts)))
        latents[uid] = lat
    return users, Oracle(latents, cfg.n_archetypes, cfg.n_stages)


# ------------------------------------------------------- annotated bios

@dataclass(frozen=True)
class AnnotatedBio:
    user_id: str
    tokens: tuple[str, ...]
    labels: tuple[str, ...]

    def __post_init__(self):
        if len(self.tokens) != len(self.labels):
            raise ValueError("tokens and labels differ in length")

    def to_dict(self) -> dict:
        return {"user_id": self.user_id, "tokens": list(self.tokens), "labels": list(self.labels)}


def generate_annotated_bios(cfg: SynthConfig, n: int | None = None,
                            prefix: str = "b") -> list[AnnotatedBio]:
    """Labelled bios drawn from the same templates as generate_community."""
    model = build_trajectory_model(cfg)
    rng = np.random.default_rng([cfg.seed, 2])
    n = cfg.n_users if n is None else n
    width = max(4, len(str(n)))
    out = []
    for i in range(n):
        a = int(rng.integers(0, cfg.n_archetypes))
        k = int(rng.integers(0, cfg.n_subtypes))
        o = int(rng.integers(0, cfg.n_stages))
        _, toks, labs = _make_bio(rng, model, a, k, o, cfg.other_share)
        out.append(AnnotatedBio(f"{prefix}{i:0{width}d}", tuple(toks), tuple(labs)))
    return out


def other_share(bios: Iterable[AnnotatedBio]) -> float:
    total = out = 0
    for b in bios:
        total += len(b.labels)
        out += sum(lab == "O" for lab in b.labels)
    return out / total if total else 0.0


# ------------------------------------------------------------ oracle checks

def oracle_neighbor_quality(neighbor_sets: Mapping[str, Sequence], oracle: Oracle) -> float:
    """Fraction of retrieved neighbors sharing the query's archetype.

    Values of neighbor_sets may be NeighborSet-like (with ``user_ids``) or plain id lists.
    """
    hits = total = 0
    for query, ns in neighbor_sets.items():
        ids = getattr(ns, "user_ids", ns)
        a = oracle.archetype(query)
        for v in ids:
            hits += oracle.archetype(v) == a
            total += 1
    if total == 0:
        raise SynthError("no neighbors retrieved")
    return hits / total


def stage_alignment_rate(users: Sequence[UserRecord], oracle: Oracle) -> float:
    """Share of same-archetype pairs with offsets one apart whose posts at a
    common stage carry at least one common tag."""
    by_stage = {}
    for u in users:
        lat = oracle.users[u.user_id]
        by_stage[u.user_id] = {s: {tag_key(t) for t in p.keywords}
                               for s, p in zip(lat.stages, u.posts)}
    ids = sorted(by_stage)
    hits = total = 0
    for i, u in enumerate(ids):
        lu = oracle.users[u]
        for v in ids[i + 1:]:
            lv = oracle.users[v]
            if lu.archetype != lv.archetype or abs(lu.offset - lv.offset) != 1:
                continue
            common = sorted(set(by_stage[u]) & set(by_stage[v]))
            if not common:
                continue
            s = common[0]
            total += 1
            hits += bool(by_stage[u][s] & by_stage[v][s])
    return hits / total if total else float("nan")


def save_annotated_bios(bios: Iterable[AnnotatedBio], path: str | Path) -> None:
    with open(path, "w") as fh:
        for b in bios:
            fh.write(json.dumps(b.to_dict()) + "\n")

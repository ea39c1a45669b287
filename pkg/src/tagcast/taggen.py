"""Tag generation by iterative mask-predict-append, plus two baselines.

The generator treats the future tags as a masked continuation of the input
document: at each step the MASK slot is scored, the chosen token is appended
in its place and a fresh MASK follows.  A TAG_SEP token closes each tag.
"""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .corpus import (AssemblyOptions, InputDocument, SegmentKind, TrainingExample,
                     UserRecord, assemble_document)
from .encoder import (MaskedLMConfig, MaskedLMParams, StepExample, TrainHyper,
                      embed_tokens, expand_to_steps, forward_batch, init_model,
                      train_masked_lm)
from .textprep import Vocabulary, normalize_tag, tag_key

DEFAULT_BEAM_WIDTH = 5
DEFAULT_MAX_TOKENS_PER_TAG = 4


@dataclass(frozen=True)
class PredictionResult:
    tags: tuple[str, ...]
    scores: tuple[float, ...]
    log_prob: float = 0.0
    token_ids: tuple[int, ...] = ()
    completed: int = 0

    def top(self, k: int) -> list[str]:
        return list(self.tags[:k])

    def to_record(self, user_id: str, target_index: int) -> dict:
        return {"user_id": user_id, "target_index": target_index, "tags": list(self.tags),
                "scores": [round(float(s), 6) for s in self.scores]}

    def to_json(self, user_id: str, target_index: int) -> str:
        return json.dumps(self.to_record(user_id, target_index))


# ------------------------------------------------------------- beam search

@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]
    score: float
    done: bool = False
    state: object = None


def beam_search(initial: Hypothesis,
                score_batch: Callable[[list[Hypothesis]], np.ndarray],
                expand: Callable[[Hypothesis, np.ndarray], Iterable[Hypothesis]],
                width: int, max_steps: int) -> Hypothesis:
    """Breadth-limited best-first search on cumulative log-probability.

    Finished hypotheses are carried forward unchanged.  Ties rank by parent
    rank, then by the lower appended token id.  Returns the best finished
    hypothesis, or the best partial one if none finished within the budget.
    """
    if width < 1:
        raise ValueError("beam width must be >= 1")
    beams = [initial]
    for _ in range(max_steps):
        live = [h for h in beams if not h.done]
        if not live:
            break
        finished = [h for h in beams if h.done]
        if finished and max(h.score for h in finished) >= max(h.score for h in live):
            break
        logps = score_batch(live)
        cands = []
        rank = {id(h): i for i, h in enumerate(beams)}
        for h in finished:
            cands.append((-h.score, rank[id(h)], -1, h))
        for h, lp in zip(live, logps):
            for nh in expand(h, lp):
                cands.append((-nh.score, rank[id(h)], nh.tokens[-1], nh))
        cands.sort(key=lambda c: c[:3])
        beams = [c[3] for c in cands[:width]]
    done = [h for h in beams if h.done]
    pool = done or beams
    return min(pool, key=lambda h: (-h.score, beams.index(h)))


def _top_tokens(lp: np.ndarray, allowed: np.ndarray, n: int) -> list[int]:
    masked = np.where(allowed, lp, -np.inf)
    n = min(n, int(allowed.sum()))
    if n <= 0:
        return []
    idx = np.argpartition(-masked, n - 1)[:n] if n < len(masked) else np.arange(len(masked))
    idx = [int(i) for i in idx if np.isfinite(masked[i])]
    idx.sort(key=lambda i: (-masked[i], i))
    return idx[:n]


@dataclass(frozen=True)
class _TagState:
    tags: tuple[tuple[int, ...], ...] = ()
    current: tuple[int, ...] = ()
    tag_scores: tuple[float, ...] = ()
    current_score: float = 0.0


class TagLexicon:
    """Maps normalized tag keys back to the most common raw surface form."""

    def __init__(self, tags: Iterable[str] = ()):
        counts: dict[str, Counter] = {}
        for t in tags:
            counts.setdefault(tag_key(t), Counter())[t] += 1
        self.surface = {k: min(c.items(), key=lambda kv: (-kv[1], kv[0]))[0]
                        for k, c in counts.items()}

    def __call__(self, key: str) -> str:
        return self.surface.get(key, key)

    def to_dict(self) -> dict:
        return dict(sorted(self.surface.items()))

    @classmethod
    def from_dict(cls, d: Mapping[str, str]) -> "TagLexicon":
        lex = cls()
        lex.surface = dict(d)
        return lex


def generate_tags(params: MaskedLMParams, document: InputDocument, vocab: Vocabulary,
                  k: int, beam_width: int = DEFAULT_BEAM_WIDTH,
                  max_tokens_per_tag: int = DEFAULT_MAX_TOKENS_PER_TAG,
                  lexicon: TagLexicon | None = None) -> PredictionResult:
    """Generate up to k distinct tags after the document's MASK slot.

    Duplicate tags are skipped and generation continues; the step budget is
    max(4k, k * (max_tokens_per_tag + 1)).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    budget = max(4 * k, k * (max_tokens_per_tag + 1))
    cfg = params.config
    document = document.truncated(cfg.max_len - budget, vocab)
    base_ids = document.ids[:-1]
    base_kinds = document.kinds[:-1]
    mk = int(SegmentKind.MASK)
    content = np.ones(len(vocab), dtype=bool)
    content[list(vocab.special_ids)] = False
    sep_only = np.zeros(len(vocab), dtype=bool)
    sep_only[vocab.tag_sep_id] = True
    with_sep = content | sep_only

    def score_batch(hyps):
        steps = []
        for h in hyps:
            ids = base_ids + h.tokens + (vocab.mask_id,)
            kinds = base_kinds + (mk,) * (len(h.tokens) + 1)
            steps.append(StepExample(ids, kinds, len(ids) - 1, 0))
        return forward_batch(params, steps)

    def expand(h, lp):
        st: _TagState = h.state
        if not st.current:
            allowed = content
        elif len(st.current) >= max_tokens_per_tag:
            allowed = sep_only
        else:
            allowed = with_sep
        out = []
        for tok in _top_tokens(lp, allowed, beam_width):
            score = h.score + float(lp[tok])
            step_lp = float(lp[tok])
            if tok == vocab.tag_sep_id:
                tags, scores = st.tags, st.tag_scores
                if st.current not in tags:
                    tags = tags + (st.current,)
                    scores = scores + (st.current_score + step_lp,)
                ns = _TagState(tags, (), scores, 0.0)
                done = len(tags) >= k
            else:
                ns = _TagState(st.tags, st.current + (tok,), st.tag_scores,
                               st.current_score + step_lp)
                done = False
            out.append(Hypothesis(h.tokens + (tok,), score, done, ns))
        return out

    best = beam_search(Hypothesis((), 0.0, False, _TagState()), score_batch, expand,
                       beam_width, budget)
    st: _TagState = best.state
    lexicon = lexicon or TagLexicon()
    tags = tuple(lexicon(" ".join(vocab.tokens[i] for i in t)) for t in st.tags)
    return PredictionResult(tags, tuple(st.tag_scores), best.score, best.tokens, len(st.tags))


# ------------------------------------------------------------ training glue

NeighborFn = Callable[[TrainingExample], Sequence[str]]


def build_documents(users: Mapping[str, UserRecord], examples: Sequence[TrainingExample],
                    opts: AssemblyOptions, vocab: Vocabulary,
                    neighbor_tags: NeighborFn | None = None) -> list[InputDocument]:
    docs = []
    for ex in examples:
        o = opts
        if neighbor_tags is not None:
            o = opts.with_neighbors(neighbor_tags(ex))
        docs.append(assemble_document(users[ex.user_id], ex, o, vocab))
    return docs


def usable_targets(tags: Iterable[str]) -> list[str]:
    return [t for t in tags if normalize_tag(t)]


def build_steps(docs: Sequence[InputDocument], examples: Sequence[TrainingExample],
                vocab: Vocabulary, max_len: int) -> list[StepExample]:
    steps = []
    for doc, ex in zip(docs, examples):
        targets = usable_targets(ex.target)
        if targets:
            steps.extend(expand_to_steps(doc, targets, vocab, max_len=max_len))
    return steps


@dataclass
class GeneratorModel:
    params: MaskedLMParams
    vocab: Vocabulary
    lexicon: TagLexicon
    trace: list[float] = field(default_factory=list)


def train_tag_generator(users: Mapping[str, UserRecord], examples: Sequence[TrainingExample],
                        opts: AssemblyOptions, vocab: Vocabulary, config: MaskedLMConfig,
                        hyper: TrainHyper, neighbor_tags: NeighborFn | None = None,
                        init: MaskedLMParams | None = None) -> GeneratorModel:
    """assemble_document -> expand_to_steps -> train_masked_lm."""
    if not examples:
        raise ValueError("no training examples")
    docs = build_documents(users, examples, opts, vocab, neighbor_tags)
    steps = build_steps(docs, examples, vocab, config.max_len)
    params = init if init is not None else init_model(config)
    params, trace = train_masked_lm(params, steps, hyper)
    lexicon = TagLexicon(t for ex in examples for t in ex.target)
    return GeneratorModel(params, vocab, lexicon, trace)


# ------------------------------------------------------- classifier baseline

def document_features(params: MaskedLMParams, vocab: Vocabulary,
                      doc: InputDocument) -> np.ndarray:
    return embed_tokens(params, vocab, [vocab.tokens[i] for i in doc.ids]).values


@dataclass
class TagClassifier:
    tags: tuple[str, ...]
    weights: np.ndarray
    bias: np.ndarray
    mean: np.ndarray
    scale: np.ndarray

    def probabilities(self, features: np.ndarray) -> np.ndarray:
        z = ((features - self.mean) / self.scale) @ self.weights + self.bias
        return 1.0 / (1.0 + np.exp(-z))


def fit_one_vs_all(X: np.ndarray, Y: np.ndarray, epochs: int = 300, lr: float = 0.05,
                   l2: float = 1e-3, seed: int = 0):
    """Independent logistic regressions sharing one design matrix (full-batch Adam)."""
    n, d = X.shape
    rng = np.random.default_rng(seed)
    W = rng.normal(0.0, 0.01, size=(d, Y.shape[1]))
    prior = np.clip(Y.mean(0), 1e-4, 1 - 1e-4)
    b = np.log(prior / (1 - prior))
    mW, vW, mb, vb = (np.zeros_like(W), np.zeros_like(W), np.zeros_like(b), np.zeros_like(b))
    for t in range(1, epochs + 1):
        P = 1.0 / (1.0 + np.exp(-(X @ W + b)))
        G = (P - Y) / n
        gW = X.T @ G + l2 * W
        gb = G.sum(0)
        for g, m, v in ((gW, mW, vW), (gb, mb, vb)):
            m *= 0.9
            m += 0.1 * g
            v *= 0.999
            v += 0.001 * g * g
        W -= lr * (mW / (1 - 0.9 ** t)) / (np.sqrt(vW / (1 - 0.999 ** t)) + 1e-8)
        b -= lr * (mb / (1 - 0.9 ** t)) / (np.sqrt(vb / (1 - 0.999 ** t)) + 1e-8)
    return W, b


def train_classifier(features: np.ndarray, targets: Sequence[Iterable[str]],
                     epochs: int = 300, lr: float = 0.05, l2: float = 1e-3,
                     seed: int = 0, lexicon: TagLexicon | None = None) -> TagClassifier:
    """One-vs-all logistic head over fixed document features."""
    lexicon = lexicon or TagLexicon(t for ts in targets for t in ts)
    keys = sorted({tag_key(t) for ts in targets for t in ts})
    if len(keys) < 2:
        raise ValueError("classifier needs at least two distinct training tags")
    col = {k: j for j, k in enumerate(keys)}
    Y = np.zeros((len(features), len(keys)))
    for i, ts in enumerate(targets):
        for t in ts:
            Y[i, col[tag_key(t)]] = 1.0
    X = np.asarray(features, dtype=np.float64)
    mean = X.mean(0)
    scale = X.std(0) + 1e-6
    W, b = fit_one_vs_all((X - mean) / scale, Y, epochs, lr, l2, seed)
    return TagClassifier(tuple(lexicon(k) for k in keys), W, b, mean, scale)


def classify_tags(clf: TagClassifier, features: np.ndarray, k: int) -> PredictionResult:
    p = clf.probabilities(np.asarray(features, dtype=np.float64))
    order = sorted(range(len(p)), key=lambda j: (-p[j], clf.tags[j]))[:k]
    return PredictionResult(tuple(clf.tags[j] for j in order), tuple(float(p[j]) for j in order),
                            completed=len(order))


def frequency_baseline(training_tags: Iterable[str], k: int) -> PredictionResult:
    """Top-k most frequent training tags; ties broken lexicographically."""
    counts = Counter(training_tags)
    if not counts:
        raise ValueError("empty tag multiset")
    total = sum(counts.values())
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:k]
    return PredictionResult(tuple(t for t, _ in ranked), tuple(c / total for _, c in ranked),
                            completed=len(ranked))

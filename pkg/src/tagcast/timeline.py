"""Bio -> structured disease timeline via BIO sequence labelling.

A small encoder with a per-token softmax head tags bio tokens; spans are then
collected into one text column per schema class.  The class list is loaded
from a JSON schema, so it can be swapped without code changes.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .corpus import SegmentKind
from .encoder import (Adamax, Batch, MaskedLMConfig, MaskedLMParams, NumericError,
                      EmbeddingVector, backward_hidden, encode_batch, hash_embed,
                      init_model, load_checkpoint, log_softmax, save_checkpoint)
from .textprep import Vocabulary, build_vocabulary, tokenize

N_CLASSES = 13


class SchemaError(ValueError):
    pass


class TimelineError(ValueError):
    pass


@dataclass(frozen=True)
class LabelSchema:
    classes: tuple[str, ...]
    other: str = "Other"

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        if len(self.classes) != N_CLASSES:
            raise SchemaError(f"schema needs exactly {N_CLASSES} classes, got {len(self.classes)}")
        if len(set(self.classes)) != len(self.classes):
            raise SchemaError("duplicate class name in schema")
        if self.other not in self.classes:
            raise SchemaError(f"outside class {self.other!r} missing from schema")

    @property
    def entity_classes(self) -> tuple[str, ...]:
        return tuple(c for c in self.classes if c != self.other)

    @property
    def labels(self) -> tuple[str, ...]:
        """O first, then B-x, I-x per entity class (25 for the default schema)."""
        out = ["O"]
        for c in self.entity_classes:
            out += [f"B-{c}", f"I-{c}"]
        return tuple(out)

    @property
    def label_index(self) -> dict[str, int]:
        return {lab: i for i, lab in enumerate(self.labels)}

    def check(self, label: str) -> str:
        if label not in self.label_index:
            raise SchemaError(f"label {label!r} is not in the schema")
        return label

    def class_of(self, label: str) -> str:
        self.check(label)
        return self.other if label == "O" else label[2:]

    def to_json(self) -> str:
        return json.dumps({"classes": list(self.classes), "other": self.other}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "LabelSchema":
        d = json.loads(text)
        if "classes" not in d:
            raise SchemaError("schema JSON needs a 'classes' list")
        return cls(tuple(d["classes"]), d.get("other", "Other"))

    @classmethod
    def load(cls, path: str | Path) -> "LabelSchema":
        return cls.from_json(Path(path).read_text())


def default_schema() -> LabelSchema:
    text = resources.files("tagcast.resources").joinpath("ner_schema.json").read_text()
    return LabelSchema.from_json(text)


def is_valid_bio(labels: Sequence[str]) -> bool:
    prev = "O"
    for lab in labels:
        if lab.startswith("I-") and prev[2:] != lab[2:]:
            return False
        prev = lab
    return True


def repair_bio(labels: Sequence[str]) -> list[str]:
    """Orphan I-x (not after B-x or I-x) becomes B-x."""
    out = []
    prev = "O"
    for lab in labels:
        if lab.startswith("I-") and prev[2:] != lab[2:]:
            lab = "B-" + lab[2:]
        out.append(lab)
        prev = lab
    return out


# ---------------------------------------------------------------- tagger

@dataclass
class NerHyper:
    epochs: int = 25
    lr: float = 2e-3
    batch_size: int = 16
    seed: int = 0
    grad_clip: float = 1.0
    unk_rate: float = 0.05


@dataclass
class NerTagger:
    params: MaskedLMParams       # encoder arrays plus ner_w / ner_b
    vocab: Vocabulary
    schema: LabelSchema
    trace: list[float] = field(default_factory=list)

    def _chunks(self, ids: Sequence[int]) -> list[list[int]]:
        w = self.params.config.max_len - 1
        return [list(ids[i:i + w]) for i in range(0, len(ids), w)] or [[]]

    def label_logits(self, tokens: Sequence[str]) -> np.ndarray:
        """(n_tokens, n_labels) log-probabilities."""
        ids = [self.vocab.id(t) for t in tokens]
        out = []
        for chunk in self._chunks(ids):
            if not chunk:
                continue
            lp, _ = _token_logprobs(self.params, self.vocab, [chunk])
            out.append(lp[0, : len(chunk)])
        return np.concatenate(out) if out else np.zeros((0, len(self.schema.labels)))

    def tag_tokens(self, tokens: Sequence[str]) -> list[str]:
        if not tokens:
            return []
        lp = self.label_logits(tokens)
        labels = self.schema.labels
        return repair_bio([labels[int(i)] for i in lp.argmax(1)])

    def save(self, path: str | Path) -> None:
        save_checkpoint(self.params, path, {"kind": "ner", "vocab": list(self.vocab.tokens),
                                            "schema": json.loads(self.schema.to_json()),
                                            "trace": self.trace})

    @classmethod
    def load(cls, path: str | Path) -> "NerTagger":
        params, extra = load_checkpoint(path, with_extra=True)
        if extra.get("kind") != "ner":
            raise SchemaError(f"{path} is not an NER checkpoint")
        schema = LabelSchema(tuple(extra["schema"]["classes"]), extra["schema"]["other"])
        return cls(params, Vocabulary(extra["vocab"]), schema, list(extra.get("trace", [])))


def _token_logprobs(params: MaskedLMParams, vocab: Vocabulary, seqs, train=False, rng=None):
    seqs = [[vocab.cls_id] + list(s) for s in seqs]
    kinds = [[int(SegmentKind.CLS)] + [int(SegmentKind.BIO)] * (len(s) - 1) for s in seqs]
    batch = Batch.from_sequences(seqs, kinds, pad_id=vocab.pad_id)
    hf, cache = encode_batch(params, batch, train=train, rng=rng)
    h = hf[:, 1:]
    z = h @ params["ner_w"] + params["ner_b"]
    return log_softmax(z.astype(np.float64)), (h, cache, batch)


def train_ner(bios: Sequence, config: MaskedLMConfig | None = None,
              hyper: NerHyper | None = None, schema: LabelSchema | None = None) -> NerTagger:
    """Per-token 25-way classifier over encoder states; returns the tagger with its loss trace.

    ``bios`` items need ``tokens`` and ``labels`` attributes or keys.
    """
    schema = schema or default_schema()
    hyper = hyper or NerHyper()
    idx = schema.label_index
    data = []
    for b in bios:
        toks, labs = _fields(b)
        if len(toks) != len(labs):
            raise SchemaError("tokens and labels differ in length")
        data.append((list(toks), [idx[schema.check(lab)] for lab in labs]))
    present = {schema.class_of(schema.labels[i]) for _, ls in data for i in ls}
    if len(present) < 2:
        raise SchemaError("training data must contain at least two classes")
    vocab = build_vocabulary(t for t, _ in data)
    base = config or MaskedLMConfig(vocab_size=len(vocab), layers=2, hidden_dim=48, heads=4,
                                    max_len=128, seed=hyper.seed)
    cfg = MaskedLMConfig(**{**base.__dict__, "vocab_size": len(vocab)})
    params = init_model(cfg)
    rng = np.random.default_rng([hyper.seed, 7])
    params.arrays["ner_w"] = rng.normal(0.0, cfg.init_scale,
                                        size=(cfg.hidden_dim, len(schema.labels))).astype(np.float32)
    params.arrays["ner_b"] = np.zeros(len(schema.labels), dtype=np.float32)
    # split long bios into encoder-sized windows
    w = cfg.max_len - 1
    items = []
    for toks, labs in data:
        ids = [vocab.id(t) for t in toks]
        for i in range(0, len(ids), w):
            if ids[i:i + w]:
                items.append((ids[i:i + w], labs[i:i + w]))
    opt = Adamax(params, lr=hyper.lr)
    trace = []
    step = 0
    for _ in range(hyper.epochs):
        order = rng.permutation(len(items))
        total = count = 0.0
        for s in range(0, len(order), hyper.batch_size):
            chunk = [items[int(j)] for j in order[s:s + hyper.batch_size]]
            seqs = []
            for ids, _ in chunk:
                ids = np.array(ids)
                drop = rng.random(len(ids)) < hyper.unk_rate
                seqs.append(np.where(drop, vocab.unk_id, ids).tolist())
            lp, (h, cache, batch) = _token_logprobs(params, vocab, seqs, train=True, rng=rng)
            gold = np.zeros(lp.shape[:2], dtype=np.int64)
            mask = np.zeros(lp.shape[:2])
            for b, (_, labs) in enumerate(chunk):
                gold[b, :len(labs)] = labs
                mask[b, :len(labs)] = 1.0
            n = mask.sum()
            B, T = gold.shape
            picked = lp[np.arange(B)[:, None], np.arange(T)[None], gold]
            loss = float(-(picked * mask).sum() / n)
            dz = np.exp(lp)
            dz[np.arange(B)[:, None], np.arange(T)[None], gold] -= 1.0
            dz *= (mask / n)[..., None]
            dz = dz.astype(np.float32)
            grads = {k: np.zeros_like(v) for k, v in params.arrays.items()}
            grads["ner_w"] += np.einsum("btd,btl->dl", h, dz)
            grads["ner_b"] += dz.sum((0, 1))
            dH = np.zeros((B, T + 1, cfg.hidden_dim), dtype=np.float32)
            dH[:, 1:] = dz @ params["ner_w"].T
            backward_hidden(params, cache, dH, grads)
            gnorm = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values()))
            if not (math.isfinite(loss) and math.isfinite(gnorm)):
                raise NumericError(f"non-finite NER loss at step {step} (grad_norm={gnorm})")
            if gnorm > hyper.grad_clip:
                for g in grads.values():
                    g *= hyper.grad_clip / gnorm
            opt.step(params, grads)
            total += loss * n
            count += n
            step += 1
        trace.append(float(total / count))
    return NerTagger(params, vocab, schema, trace)


def _fields(b):
    if isinstance(b, Mapping):
        return b["tokens"], b["labels"]
    return b.tokens, b.labels


def tag_bio(tagger: NerTagger, bio: str | None) -> list[str]:
    """One valid BIO label per token of tokenize(bio)."""
    return tagger.tag_tokens(tokenize(bio))


# ------------------------------------------------------------- timelines

@dataclass(frozen=True)
class TimelineRecord:
    user_id: str
    columns: tuple[str, ...]     # one text field per schema class, schema order
    schema: LabelSchema

    def column(self, name: str) -> str:
        return self.columns[self.schema.classes.index(name)]

    def feature_tokens(self) -> list[str]:
        """Tokens of the non-Other columns, in schema order."""
        out = []
        for c, text in zip(self.schema.classes, self.columns):
            if c != self.schema.other:
                out.extend(text.split())
        return out

    def as_row(self) -> dict[str, str]:
        return {"user_id": self.user_id, **dict(zip(self.schema.classes, self.columns))}


def labels_to_timeline(tokens: Sequence[str], labels: Sequence[str],
                       schema: LabelSchema | None = None, user_id: str = "") -> TimelineRecord:
    schema = schema or default_schema()
    if len(tokens) != len(labels):
        raise TimelineError(f"{len(tokens)} tokens but {len(labels)} labels")
    cols: dict[str, list[str]] = {c: [] for c in schema.classes}
    for t, lab in zip(tokens, labels):
        cols[schema.class_of(lab)].append(t)
    return TimelineRecord(user_id, tuple(" ".join(cols[c]) for c in schema.classes), schema)


def timeline_features(record: TimelineRecord,
                      embedder: Callable[[Sequence[str]], EmbeddingVector] = hash_embed
                      ) -> EmbeddingVector:
    toks = record.feature_tokens()
    if not toks:
        raise TimelineError(f"timeline of {record.user_id!r} has no entity columns")
    return embedder(toks)


# --------------------------------------------------------------- metrics

@dataclass(frozen=True)
class ConfusionMatrix:
    classes: tuple[str, ...]
    counts: np.ndarray        # [gold, predicted]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total) if self.total else 0.0

    @property
    def recall(self) -> np.ndarray:
        rows = self.counts.sum(1)
        return np.divide(np.diag(self.counts), rows, out=np.zeros(len(rows)), where=rows > 0)

    @property
    def precision(self) -> np.ndarray:
        cols = self.counts.sum(0)
        return np.divide(np.diag(self.counts), cols, out=np.zeros(len(cols)), where=cols > 0)

    @property
    def macro_recall(self) -> float:
        """Mean recall over classes that occur in the gold labels."""
        rows = self.counts.sum(1)
        return float(self.recall[rows > 0].mean()) if (rows > 0).any() else 0.0

    def to_dict(self) -> dict:
        return {"classes": list(self.classes), "counts": self.counts.tolist(),
                "accuracy": self.accuracy, "macro_recall": self.macro_recall,
                "precision": self.precision.tolist(), "recall": self.recall.tolist()}


def ner_metrics(predicted: Sequence[Sequence[str]], gold: Sequence[Sequence[str]],
                schema: LabelSchema | None = None) -> ConfusionMatrix:
    """Class-level (B/I collapsed) confusion counts."""
    schema = schema or default_schema()
    if len(predicted) != len(gold):
        raise TimelineError("predicted and gold hold different numbers of labelings")
    ci = {c: i for i, c in enumerate(schema.classes)}
    m = np.zeros((len(ci), len(ci)), dtype=np.int64)
    for n, (p, g) in enumerate(zip(predicted, gold)):
        if len(p) != len(g):
            raise TimelineError(f"labeling {n}: {len(p)} predicted vs {len(g)} gold labels")
        for a, b in zip(g, p):
            m[ci[schema.class_of(a)], ci[schema.class_of(b)]] += 1
    return ConfusionMatrix(schema.classes, m)


def _collapse(lab: str) -> str:
    return lab[2:] if lab[:2] in ("B-", "I-") else lab


def agreement(ann1: Sequence[str], ann2: Sequence[str]) -> dict[str, float]:
    """Cohen's kappa and per-class count-vector cosine between two annotators."""
    if len(ann1) != len(ann2):
        raise TimelineError("annotations differ in length")
    if not ann1:
        raise TimelineError("empty annotations")
    a = [_collapse(x) for x in ann1]
    b = [_collapse(x) for x in ann2]
    cats = sorted(set(a) | set(b))
    ci = {c: i for i, c in enumerate(cats)}
    ca = np.bincount([ci[x] for x in a], minlength=len(cats)).astype(np.float64)
    cb = np.bincount([ci[x] for x in b], minlength=len(cats)).astype(np.float64)
    n = len(a)
    po = sum(x == y for x, y in zip(a, b)) / n
    pe = float(ca @ cb) / (n * n)
    kappa = 1.0 if pe == 1.0 else (po - pe) / (1.0 - pe)
    cos = float(ca @ cb / (np.linalg.norm(ca) * np.linalg.norm(cb)))
    return {"kappa": kappa, "cosine": cos}


# -------------------------------------------------------------------- I/O

def load_annotated_bios(path: str | Path, schema: LabelSchema | None = None) -> list[dict]:
    schema = schema or default_schema()
    out = []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                toks, labs = list(d["tokens"]), list(d["labels"])
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise SchemaError(f"{path}:{n}: malformed annotated bio ({e})") from None
            if len(toks) != len(labs):
                raise SchemaError(f"{path}:{n}: tokens and labels differ in length")
            for lab in labs:
                schema.check(lab)
            if not is_valid_bio(labs):
                raise SchemaError(f"{path}:{n}: invalid BIO sequence")
            out.append({"user_id": d.get("user_id", ""), "tokens": toks, "labels": labs})
    return out


def write_timeline_csv(records: Iterable[TimelineRecord], path: str | Path,
                       schema: LabelSchema | None = None) -> None:
    schema = schema or default_schema()
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["user_id", *schema.classes], lineterminator="\n")
        w.writeheader()
        for r in records:
            w.writerow(r.as_row())


def read_timeline_csv(path: str | Path, schema: LabelSchema | None = None) -> list[TimelineRecord]:
    schema = schema or default_schema()
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [TimelineRecord(r["user_id"], tuple(r.get(c, "") for c in schema.classes), schema)
            for r in rows]

"""Ranking metrics, embedding cosine, run evaluation, report I/O and ablations."""
from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .corpus import Post, TrainingExample, UserRecord
from .encoder import hash_embed
from .textprep import normalize_text, tag_key

DEFAULT_KS = (1, 3, 5)
DEFAULT_SEEDS = (0, 1, 2, 3)
METRICS = ("recall", "precision", "cosine", "f1")


class EvalError(ValueError):
    pass


def metrics_at_k(predicted: Sequence[str], gold: Iterable[str], k: int) -> tuple[float, float]:
    """(precision, recall) on normalized tags; precision divides by min(k, |predicted|)."""
    gold_keys = {tag_key(g) for g in gold}
    if not gold_keys:
        raise EvalError("gold tag set is empty")
    if k < 1:
        raise EvalError("k must be >= 1")
    top = {tag_key(p) for p in predicted[:k]}
    hits = len(top & gold_keys)
    denom = min(k, len(predicted))
    return (hits / denom if denom else 0.0), hits / len(gold_keys)


def f1(precision: float, recall: float) -> float:
    s = precision + recall
    return 2.0 * precision * recall / s if s > 0 else 0.0


# ------------------------------------------------------------ tag embedders

class HashTagEmbedder:
    """Tags embedded by hashing their normalized tokens."""

    def __init__(self, dim: int = 64, seed: int = 0):
        self.dim, self.seed = dim, seed

    def __call__(self, tag: str) -> np.ndarray:
        toks = tag_key(tag).split()
        if not toks:
            raise EvalError(f"tag {tag!r} cannot be embedded")
        return hash_embed(toks, self.dim, self.seed).values


class CooccurrenceEmbedder:
    """Token vectors from a truncated SVD of post-level PPMI co-occurrences.

    Each post (its normalized text plus keyword tokens) is one context.  A tag
    is the mean of its token vectors.
    """

    def __init__(self, users: Iterable[UserRecord], dim: int = 32, min_count: int = 1):
        contexts = []
        for u in users:
            for p in u.posts:
                toks = set(normalize_text(p.text))
                for kw in p.keywords:
                    toks.update(tag_key(kw).split())
                contexts.append(sorted(toks))
        counts = Counter(t for c in contexts for t in c)
        vocab = sorted(t for t, c in counts.items() if c >= min_count)
        if not vocab:
            raise EvalError("no tokens to embed")
        self.index = {t: i for i, t in enumerate(vocab)}
        n = len(vocab)
        M = np.zeros((n, n))
        for c in contexts:
            ids = [self.index[t] for t in c if t in self.index]
            M[np.ix_(ids, ids)] += 1.0
        np.fill_diagonal(M, 0.0)
        total = M.sum()
        row = M.sum(1)
        with np.errstate(divide="ignore", invalid="ignore"):
            pmi = np.log(M * total / np.outer(row, row))
        ppmi = np.where(np.isfinite(pmi) & (pmi > 0), pmi, 0.0)
        U, S, _ = np.linalg.svd(ppmi, hermitian=True)
        d = min(dim, n)
        # fix the sign of each component so results are platform-stable
        U = U[:, :d] * np.where(U[np.abs(U[:, :d]).argmax(0), np.arange(d)] < 0, -1.0, 1.0)
        self.vectors = U * np.sqrt(np.abs(S[:d]))

    def __call__(self, tag: str) -> np.ndarray:
        toks = tag_key(tag).split()
        ids = [self.index.get(t) for t in toks]
        if not toks or any(i is None for i in ids):
            raise EvalError(f"tag {tag!r} cannot be embedded")
        v = self.vectors[ids].mean(0)
        if not np.any(v):
            raise EvalError(f"tag {tag!r} has a zero embedding")
        return v


def _cos(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    return float(a @ b / (na * nb)) if na > 0 and nb > 0 else 0.0


def cosine_metric(predicted: Sequence[str], gold: Iterable[str],
                  embedder: Callable[[str], np.ndarray], k: int) -> float:
    """Mean over the top-k predictions of the best cosine to any gold tag, floored at 0."""
    gold = list(gold)
    if not gold:
        raise EvalError("gold tag set is empty")
    top = list(predicted[:k])
    if not top:
        return 0.0
    gv = [embedder(g) for g in gold]
    vals = []
    for p in top:
        pv = embedder(p)
        vals.append(max(0.0, max(_cos(pv, g) for g in gv)))
    return math.fsum(vals) / len(vals)


# --------------------------------------------------------------- reports

@dataclass
class MetricsReport:
    label: str
    ks: tuple[int, ...]
    values: dict[int, dict[str, float]]
    n_examples: int
    config: dict = field(default_factory=dict)

    def get(self, metric: str, k: int) -> float:
        return self.values[k][metric]

    def csv_row(self) -> list[str]:
        row = [self.label, str(self.n_examples)]
        for k in self.ks:
            row += [f"{self.values[k][m]:.6f}" for m in METRICS]
        return row

    def to_dict(self) -> dict:
        return {"label": self.label, "n_examples": self.n_examples, "config": self.config,
                "metrics": {str(k): {m: round(self.values[k][m], 6) for m in METRICS}
                            for k in self.ks}}


def csv_header(ks: Sequence[int]) -> list[str]:
    return ["config", "n_examples"] + [f"{m}@{k}" for k in ks for m in METRICS]


def reports_to_csv(reports: Sequence[MetricsReport], echo: dict | None = None) -> str:
    """One row per configuration cell; columns per K x metric.

    ``echo`` is written as a leading ``# config: {...}`` comment line.
    """
    if not reports:
        raise EvalError("no reports")
    buf = io.StringIO()
    if echo is not None:
        buf.write("# config: " + json.dumps(echo, sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(csv_header(reports[0].ks))
    for r in reports:
        w.writerow(r.csv_row())
    return buf.getvalue()


def reports_to_json(reports: Sequence[MetricsReport], echo: dict | None = None) -> str:
    return json.dumps({"config": echo or {}, "reports": [r.to_dict() for r in reports]},
                      sort_keys=True, indent=2) + "\n"


def _get(obj, name):
    return obj[name] if isinstance(obj, Mapping) else getattr(obj, name)


def evaluate_run(predictions: Sequence, gold: Sequence,
                 embedder: Callable[[str], np.ndarray] | None = None,
                 ks: Sequence[int] = DEFAULT_KS, label: str = "",
                 config: dict | None = None) -> MetricsReport:
    """Mean per-example metrics.

    Both streams carry ``user_id`` and ``target_index``; predictions carry a
    ranked ``tags`` list, gold items a ``target`` tag list.  F1 is taken from
    the averaged precision and recall.
    """
    if len(predictions) != len(gold):
        raise EvalError(f"stream lengths differ: {len(predictions)} predictions, "
                        f"{len(gold)} gold")
    if not gold:
        raise EvalError("empty evaluation stream")
    embedder = embedder or HashTagEmbedder()
    acc = {k: {m: [] for m in ("recall", "precision", "cosine")} for k in ks}
    for i, (p, g) in enumerate(zip(predictions, gold)):
        pk = (_get(p, "user_id"), int(_get(p, "target_index")))
        gk = (_get(g, "user_id"), int(_get(g, "target_index")))
        if pk != gk:
            raise EvalError(f"streams misaligned at position {i}: prediction {pk} vs gold {gk}")
        tags = list(_get(p, "tags"))
        target = list(_get(g, "target"))
        for k in ks:
            prec, rec = metrics_at_k(tags, target, k)
            acc[k]["precision"].append(prec)
            acc[k]["recall"].append(rec)
            acc[k]["cosine"].append(cosine_metric(tags, target, embedder, k))
    values = {}
    for k in ks:
        v = {m: math.fsum(sorted(xs)) / len(xs) for m, xs in acc[k].items()}
        v["f1"] = f1(v["precision"], v["recall"])
        values[k] = v
    return MetricsReport(label, tuple(ks), values, len(gold), dict(config or {}))


def mean_reports(reports: Sequence[MetricsReport], label: str | None = None) -> MetricsReport:
    """Per-metric mean across runs (F1 re-derived from the mean P and R)."""
    if not reports:
        raise EvalError("no reports to average")
    ks = reports[0].ks
    values = {}
    for k in ks:
        v = {m: math.fsum(r.values[k][m] for r in reports) / len(reports)
             for m in ("recall", "precision", "cosine")}
        v["f1"] = f1(v["precision"], v["recall"])
        values[k] = v
    n = round(sum(r.n_examples for r in reports) / len(reports))
    return MetricsReport(label if label is not None else reports[0].label, ks, values, n,
                         dict(reports[0].config))


# --------------------------------------------------------- bias experiment

def top_tags(examples: Iterable[TrainingExample], n: int = 2) -> list[str]:
    """Most frequent target tags (normalized), ties lexicographic."""
    c = Counter(tag_key(t) for e in examples for t in e.target)
    return [t for t, _ in sorted(c.items(), key=lambda kv: (-kv[1], kv[0]))[:n]]


def remove_top_tags(examples: Iterable[TrainingExample], tags: Sequence[str]
                    ) -> list[TrainingExample]:
    """Strip tags from every target; examples left without a target are dropped."""
    if not tags:
        raise EvalError("no tags to remove")
    drop = {tag_key(t) for t in tags}
    out = []
    for e in examples:
        kept = tuple(t for t in e.target if tag_key(t) not in drop)
        if kept:
            out.append(e if kept == e.target else replace(e, target=kept))
    return out


def strip_tags_from_users(users: Iterable[UserRecord], tags: Sequence[str]) -> list[UserRecord]:
    """Remove tags from every post's keywords (the keyword segments of input documents)."""
    drop = {tag_key(t) for t in tags}
    out = []
    for u in users:
        posts = tuple(Post(p.date, p.text, tuple(k for k in p.keywords if tag_key(k) not in drop))
                      for p in u.posts)
        out.append(UserRecord(u.user_id, u.bio, posts))
    return out


# --------------------------------------------------------------- ablations

@dataclass(frozen=True)
class GridCell:
    mode: str = "full"
    pn: int = 3
    h: int = 0
    strategy: str = "none"
    remove_top: int = 0

    @property
    def label(self) -> str:
        s = f"mode={self.mode} pn={self.pn} h={self.h} strategy={self.strategy}"
        return s + (" -2Tg" if self.remove_top == 2 else
                    f" -{self.remove_top}Tg" if self.remove_top else "")

    def to_dict(self) -> dict:
        return {"mode": self.mode, "pn": self.pn, "h": self.h, "strategy": self.strategy,
                "remove_top": self.remove_top}


def expand_grid(modes: Sequence[str] = ("full",), pn_values: Sequence[int] = (3,),
                h_values: Sequence[int] = (0,), strategies: Sequence[str] = ("none",),
                remove_top: Sequence[int] = (0,)) -> list[GridCell]:
    """Cartesian product; h=0 only pairs with strategy "none" and vice versa."""
    cells = []
    for m in modes:
        for pn in pn_values:
            for h in h_values:
                for s in strategies:
                    if (h == 0) != (s == "none"):
                        continue
                    for rt in remove_top:
                        cells.append(GridCell(m, pn, h, s, rt))
    if not cells:
        raise EvalError("grid is empty (h=0 requires strategy 'none')")
    return list(dict.fromkeys(cells))


CellRunner = Callable[[GridCell, int], Mapping[str, MetricsReport]]


def ablation_grid(cells: Sequence[GridCell], runner: CellRunner,
                  seeds: Sequence[int] = DEFAULT_SEEDS, jobs: int = 1) -> list[MetricsReport]:
    """Run every cell under every seed; one mean report per (cell, model).

    ``runner(cell, seed)`` returns {model_name: report}.  Rows are labelled
    "<model> <cell label>" and ordered by cell, then model name.
    """
    if not seeds:
        raise EvalError("at least one seed required")
    tasks = [(c, s) for c in cells for s in seeds]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(runner, *zip(*tasks)))
    else:
        results = [runner(c, s) for c, s in tasks]
    out = []
    for i, cell in enumerate(cells):
        per = results[i * len(seeds):(i + 1) * len(seeds)]
        for model in sorted(per[0]):
            rep = mean_reports([r[model] for r in per], label=f"{model} {cell.label}")
            rep.config = {**cell.to_dict(), "model": model, "seeds": list(seeds)}
            out.append(rep)
    return out

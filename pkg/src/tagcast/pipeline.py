"""End-to-end experiment wiring: split, neighbors, training, prediction, evaluation.

All randomness derives from one root seed through ``derive_seed(seed, label)``
with the labels "split", "init", "train", "tsne", "kmeans", "random:<user>"
and "ner".
"""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .corpus import (AssemblyOptions, Mode, TrainingExample, UserRecord,
                     generate_all_examples, query_date, split_examples)
from .encoder import EmbeddingVector, MaskedLMConfig, TrainHyper, hash_embed
from .evaluation import (CooccurrenceEmbedder, GridCell, MetricsReport, evaluate_run,
                         remove_top_tags, strip_tags_from_users, top_tags)
from .neighbors import (NeighborSet, averaged_distances, gap_statistic, harvest_neighbor_tags,
                        kmeans, nearest_neighbors, random_neighbors, sample_cluster_neighbors)
from .taggen import (GeneratorModel, build_documents, classify_tags, document_features,
                     generate_tags, train_classifier, train_tag_generator)
from .textprep import (Vocabulary, build_vocabulary, normalize_tag, normalize_text, stem,
                       fit_tfidf, stop_words, tfidf_vector, tokenize)
from .timeline import (NerHyper, NerTagger, labels_to_timeline, tag_bio, timeline_features,
                       train_ner)

STRATEGIES = ("none", "random", "kmeans_bio", "features_bio", "features_timeline")


def derive_seed(seed: int, label: str) -> int:
    h = hashlib.blake2b(f"{seed}:{label}".encode(), digest_size=4).digest()
    return int.from_bytes(h, "little")


@dataclass
class ModelSettings:
    layers: int = 2
    hidden_dim: int = 32
    heads: int = 4
    ffn_mult: int = 2
    max_len: int = 192
    epochs: int = 15
    lr: float = 1e-2
    batch_size: int = 32
    beam_width: int = 5
    max_tokens_per_tag: int = 4
    dropout: float = 0.0


@dataclass
class ExperimentConfig:
    train_fraction: float = 0.8
    split_by_user: bool = True
    ks: tuple[int, ...] = (1, 3, 5)
    tag_cap: int = 15
    tsne_runs: int = 4
    tsne_iters: int = 750
    perplexity: float = 10.0
    kmeans_k: int = 0              # 0: choose by gap statistic
    feature_dim: int = 64
    with_classifier: bool = False
    model: ModelSettings = field(default_factory=ModelSettings)
    ner_epochs: int = 25
    ner_seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ks"] = list(self.ks)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExperimentConfig":
        d = dict(d)
        model = ModelSettings(**d.pop("model", {}))
        if "ks" in d:
            d["ks"] = tuple(d["ks"])
        return cls(model=model, **d)


def _norm_tokens(tokens: Sequence[str]) -> list[str]:
    sw = stop_words()
    return [s for s in (stem(t) for t in tokens if t not in sw) if s and s not in sw]


class TfidfHashEmbedder:
    """Hashing embedder with TF-IDF token weights fitted on a document set."""

    def __init__(self, documents: Sequence[Sequence[str]], dim: int = 64, seed: int = 0):
        self.model = fit_tfidf(documents)
        self.dim, self.seed = dim, seed

    def __call__(self, tokens: Sequence[str]) -> EmbeddingVector:
        return hash_embed(tokens, self.dim, self.seed, weights=tfidf_vector(self.model, tokens))


def corpus_vocabulary(users: Sequence[UserRecord]) -> Vocabulary:
    docs, tag_toks = [], set()
    for u in users:
        if u.has_bio:
            docs.append(normalize_text(u.bio))
        for p in u.posts:
            docs.append(normalize_text(p.text))
            for k in p.keywords:
                toks = normalize_tag(k).split()
                docs.append(toks)
                tag_toks.update(toks)
    return build_vocabulary(docs, tag_tokens=tag_toks)


class Experiment:
    """Caches what is shared between grid cells: vocabulary, embedder, NER
    tagger and per-seed neighbor structures."""

    def __init__(self, users: Sequence[UserRecord], config: ExperimentConfig | None = None,
                 annotated_bios: Sequence | None = None, tagger: NerTagger | None = None):
        self.users = list(users)
        self.cfg = config or ExperimentConfig()
        self.vocab = corpus_vocabulary(self.users)
        self.embedder = CooccurrenceEmbedder(self.users)
        self.annotated_bios = annotated_bios
        self._tagger = tagger
        self._dist: dict = {}
        self._clusters: dict = {}
        self._features: dict = {}

    # ------------------------------------------------------------ neighbors
    @property
    def tagger(self) -> NerTagger:
        if self._tagger is None:
            if not self.annotated_bios:
                raise ValueError("features_timeline needs annotated bios or a trained tagger")
            self._tagger = train_ner(self.annotated_bios,
                                     hyper=NerHyper(epochs=self.cfg.ner_epochs,
                                                    seed=self.cfg.ner_seed))
        return self._tagger

    def bio_users(self) -> list[UserRecord]:
        return [u for u in self.users if u.has_bio]

    def features(self, kind: str) -> tuple[list[str], np.ndarray]:
        """Feature matrix over users with a bio (raw bio or NER timeline).

        Both kinds share one recipe: TF-IDF-weighted hashing of normalized
        tokens, with the TF-IDF model fitted on the documents being embedded.
        """
        if kind not in self._features:
            ids, docs, records = [], [], []
            for u in self.bio_users():
                if kind == "bio":
                    toks, rec = normalize_text(u.bio), None
                else:
                    raw = tokenize(u.bio)
                    rec = labels_to_timeline(raw, tag_bio(self.tagger, u.bio), user_id=u.user_id)
                    toks = _norm_tokens(rec.feature_tokens())
                if toks:
                    ids.append(u.user_id)
                    docs.append(toks)
                    records.append(rec)
            if len(ids) < 2:
                raise ValueError(f"too few users with {kind} features")
            emb = TfidfHashEmbedder(docs, self.cfg.feature_dim)
            if kind == "bio":
                X = np.array([emb(d).values for d in docs])
            else:
                X = np.array([timeline_features(r, lambda t: emb(_norm_tokens(t))).values
                              for r in records])
            self._features[kind] = (ids, X)
        return self._features[kind]

    def distances(self, kind: str, seed: int):
        key = (kind, seed)
        if key not in self._dist:
            ids, X = self.features(kind)
            perp = min(self.cfg.perplexity, (len(ids) - 1) / 3.0)
            D = averaged_distances(X, runs=self.cfg.tsne_runs, base_seed=derive_seed(seed, "tsne"),
                                   iters=self.cfg.tsne_iters, perplexity=perp)
            self._dist[key] = (ids, D)
        return self._dist[key]

    def neighbor_sets(self, strategy: str, h: int, seed: int) -> dict[str, NeighborSet | None]:
        if strategy not in STRATEGIES or strategy == "none":
            raise ValueError(f"unknown neighbor strategy {strategy!r}")
        if strategy == "random":
            ids = [u.user_id for u in self.users]
            return {u: random_neighbors(ids, u, h, derive_seed(seed, f"random:{u}")) for u in ids}
        if strategy == "kmeans_bio":
            key = seed
            if key not in self._clusters:
                ids, X = self.features("bio")
                k = self.cfg.kmeans_k or gap_statistic(
                    X, 2, min(40, len(ids) - 1), 10, derive_seed(seed, "kmeans")).chosen_k
                self._clusters[key] = kmeans(X, k, derive_seed(seed, "kmeans"), user_ids=ids)
            model = self._clusters[key]
            return {u: sample_cluster_neighbors(model, u, h, derive_seed(seed, f"sample:{u}"))
                    for u in model.user_ids}
        kind = "bio" if strategy == "features_bio" else "timeline"
        ids, D = self.distances(kind, seed)
        return {u: nearest_neighbors(D, ids, u, h) for u in ids}

    # -------------------------------------------------------------- cells
    def split(self, seed: int, users: Sequence[UserRecord]):
        examples = generate_all_examples(users)
        return split_examples(examples, self.cfg.train_fraction, derive_seed(seed, "split"),
                              by_user=self.cfg.split_by_user)

    def model_config(self, seed: int) -> MaskedLMConfig:
        m = self.cfg.model
        return MaskedLMConfig(vocab_size=len(self.vocab), layers=m.layers, hidden_dim=m.hidden_dim,
                              heads=m.heads, max_len=m.max_len, ffn_mult=m.ffn_mult, dropout=m.dropout,
                              seed=derive_seed(seed, "init"))

    def prepare(self, cell: GridCell, seed: int):
        users = self.users
        train, test = self.split(seed, users)
        if cell.remove_top:
            tags = top_tags(train, cell.remove_top)
            train, test = remove_top_tags(train, tags), remove_top_tags(test, tags)
            users = strip_tags_from_users(users, tags)
        umap = {u.user_id: u for u in users}
        mode = Mode(cell.mode)
        if mode is Mode.BIO_ONLY:
            train = [e for e in train if umap[e.user_id].has_bio]
            test = [e for e in test if umap[e.user_id].has_bio]
        opts = AssemblyOptions(mode if mode is not Mode.FULL_PLUS_NEIGHBORS else Mode.FULL,
                               pn=cell.pn, max_len=self.cfg.model.max_len)
        nfn = None
        if cell.h > 0:
            sets = self.neighbor_sets(cell.strategy, cell.h, seed)

            def harvest(ex: TrainingExample):
                ns = sets.get(ex.user_id)
                if ns is None:
                    return ()
                return harvest_neighbor_tags(umap, ns, query_date(umap[ex.user_id], ex),
                                             self.cfg.tag_cap)
            nfn = harvest
        return umap, train, test, opts, nfn

    def train(self, cell: GridCell, seed: int):
        umap, train, test, opts, nfn = self.prepare(cell, seed)
        m = self.cfg.model
        hyper = TrainHyper(epochs=m.epochs, lr=m.lr, batch_size=m.batch_size,
                           seed=derive_seed(seed, "train"))
        gen = train_tag_generator(umap, train, opts, self.vocab, self.model_config(seed), hyper, nfn)
        return gen, umap, train, test, opts, nfn

    def predict(self, gen: GeneratorModel, umap, examples, opts, nfn) -> list[dict]:
        k = max(self.cfg.ks)
        docs = build_documents(umap, examples, opts, self.vocab, nfn)
        out = []
        for ex, doc in zip(examples, docs):
            res = generate_tags(gen.params, doc, self.vocab, k, self.cfg.model.beam_width,
                                self.cfg.model.max_tokens_per_tag, gen.lexicon)
            out.append(res.to_record(ex.user_id, ex.target_index))
        return out

    def run_cell(self, cell: GridCell, seed: int) -> dict[str, MetricsReport]:
        gen, umap, train, test, opts, nfn = self.train(cell, seed)
        if not test:
            raise ValueError("empty test split")
        preds = self.predict(gen, umap, test, opts, nfn)
        conf = {**cell.to_dict(), "seed": seed}
        out = {"generator": evaluate_run(preds, test, self.embedder, self.cfg.ks, cell.label, conf)}
        if self.cfg.with_classifier:
            out["classifier"] = self.run_classifier(gen, umap, train, test, opts, nfn, cell, conf)
        return out

    def run_classifier(self, gen, umap, train, test, opts, nfn, cell, conf) -> MetricsReport:
        k = max(self.cfg.ks)
        feats = lambda exs: np.array([document_features(gen.params, self.vocab, d)  # noqa: E731
                                      for d in build_documents(umap, exs, opts, self.vocab, nfn)])
        clf = train_classifier(feats(train), [e.target for e in train], lexicon=gen.lexicon,
                               seed=derive_seed(conf["seed"], "classifier"))
        preds = [classify_tags(clf, f, k).to_record(e.user_id, e.target_index)
                 for f, e in zip(feats(test), test)]
        return evaluate_run(preds, test, self.embedder, self.cfg.ks, cell.label, conf)

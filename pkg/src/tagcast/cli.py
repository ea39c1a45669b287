"""tagcast command line.

Configuration is JSON.  The file named by --config (or $TAGCAST_CONFIG) is
merged over built-in defaults, then command-line flags win.  Every report
echoes the effective configuration.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric error.
"""
from __future__ import annotations

import argparse
import copy
import csv
import datetime as dt
import io
import json
import os
import sys
from pathlib import Path
from typing import Any

from . import __version__
from .corpus import (AssemblyOptions, CorpusError, Mode, TrainingExample, assemble_document,
                     corpus_stats, generate_all_examples, load_corpus, query_date, save_corpus,
                     validate_corpus)
from .encoder import CheckpointError, ConfigError, NumericError, load_checkpoint, \
    save_checkpoint
from .evaluation import (EvalError, GridCell, MetricsReport, ablation_grid, evaluate_run,
                         expand_grid, mean_reports, reports_to_csv, reports_to_json)
from .neighbors import (NeighborError, NeighborSet, neighbor_sets_to_json,
                        harvest_neighbor_tags, save_distance_matrix)
from .pipeline import STRATEGIES, Experiment, ExperimentConfig, derive_seed
from .synth import (SynthConfig, SynthError, generate_annotated_bios, generate_community,
                    other_share, save_annotated_bios)
from .taggen import GeneratorModel, TagLexicon, generate_tags
from .textprep import Vocabulary
from .timeline import (NerHyper, NerTagger, SchemaError, TimelineError, load_annotated_bios,
                       train_ner)

ENV_CONFIG = "TAGCAST_CONFIG"
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "seeds": [0, 1, 2, 3],
    "jobs": 1,
    "ks": [1, 3, 5],
    "paths": {"corpus": "corpus.jsonl", "bios": "annotated_bios.jsonl",
              "checkpoint": "generator.ckpt", "ner_checkpoint": "ner.ckpt",
              "neighbors": "", "out": "out"},
    "synth": {"n_users": 200, "n_annotated_bios": 300},
    "cell": {"mode": "full", "pn": 3, "h": 0, "strategy": "none", "remove_top": 0},
    "grid": {"modes": ["bio_only", "bio_posts", "full"], "pn_values": [3], "h_values": [0],
             "strategies": ["none"], "remove_top": [0]},
    "experiment": {},
    "ner": {"epochs": 25},
}


class ConfigurationError(Exception):
    pass


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path: str | None) -> dict:
    path = path or os.environ.get(ENV_CONFIG) or None
    cfg = copy.deepcopy(DEFAULTS)
    if path:
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise ConfigurationError(f"cannot read config {path}: {e}") from None
        try:
            user = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"config {path} is not valid JSON: {e}") from None
        if not isinstance(user, dict):
            raise ConfigurationError("config root must be a JSON object")
        unknown = sorted(set(user) - set(DEFAULTS))
        if unknown:
            raise ConfigurationError(f"unknown config sections: {unknown}")
        cfg = _merge(cfg, user)
    return cfg


def _set(cfg: dict, dotted: str, value) -> None:
    node = cfg
    *head, last = dotted.split(".")
    for h in head:
        node = node.setdefault(h, {})
    node[last] = value


# flag dest -> config key
_FLAG_KEYS = {
    "seed": "seed", "seeds": "seeds", "jobs": "jobs", "ks": "ks",
    "corpus": "paths.corpus", "bios": "paths.bios", "checkpoint": "paths.checkpoint",
    "ner_checkpoint": "paths.ner_checkpoint", "neighbors": "paths.neighbors", "out": "paths.out",
    "n_users": "synth.n_users", "n_annotated_bios": "synth.n_annotated_bios",
    "mode": "cell.mode", "pn": "cell.pn", "h": "cell.h", "strategy": "cell.strategy",
    "remove_top": "cell.remove_top", "epochs": "experiment.model.epochs",
    "ner_epochs": "ner.epochs",
    "modes": "grid.modes", "pn_values": "grid.pn_values", "h_values": "grid.h_values",
    "strategies": "grid.strategies", "remove_top_values": "grid.remove_top",
}


def effective_config(args: argparse.Namespace) -> dict:
    cfg = load_config(args.config)
    for dest, key in _FLAG_KEYS.items():
        v = getattr(args, dest, None)
        if v is not None:
            _set(cfg, key, v)
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    cell = cfg["cell"]
    try:
        Mode(cell["mode"])
    except ValueError:
        raise ConfigurationError(f"unknown mode {cell['mode']!r}") from None
    if cell["strategy"] not in STRATEGIES:
        raise ConfigurationError(f"unknown strategy {cell['strategy']!r}")
    if (cell["h"] == 0) != (cell["strategy"] == "none"):
        raise ConfigurationError("h=0 must go with strategy 'none' and h>0 with a real strategy")
    if not cfg["ks"] or min(cfg["ks"]) < 1:
        raise ConfigurationError("ks must be positive integers")
    if not cfg["seeds"]:
        raise ConfigurationError("at least one seed is required")
    if cfg["jobs"] < 1:
        raise ConfigurationError("jobs must be >= 1")
    try:
        experiment_config(cfg)
        SynthConfig.from_dict({k: v for k, v in cfg["synth"].items()
                               if k != "n_annotated_bios"}).validate()
    except (TypeError, ValueError) as e:
        raise ConfigurationError(str(e)) from None


def experiment_config(cfg: dict) -> ExperimentConfig:
    d = dict(cfg["experiment"])
    d["ks"] = tuple(cfg["ks"])
    return ExperimentConfig.from_dict(d)


def _cell(cfg: dict) -> GridCell:
    c = cfg["cell"]
    return GridCell(c["mode"], int(c["pn"]), int(c["h"]), c["strategy"], int(c["remove_top"]))


def _out(cfg: dict) -> Path:
    p = Path(cfg["paths"]["out"])
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create output directory {p}: {e}") from None
    return p


def _write(path: Path, text: str) -> None:
    path.write_text(text)
    print(f"wrote {path}")


def _experiment(cfg: dict, users=None) -> Experiment:
    users = users if users is not None else _load_users(cfg)
    tagger = None
    ner_path = Path(cfg["paths"]["ner_checkpoint"])
    if ner_path.exists():
        tagger = NerTagger.load(ner_path)
    bios = None
    bio_path = Path(cfg["paths"]["bios"])
    if tagger is None and bio_path.exists():
        bios = load_annotated_bios(bio_path)
    ecfg = experiment_config(cfg)
    ecfg.ner_epochs = int(cfg["ner"]["epochs"])
    ecfg.ner_seed = derive_seed(cfg["seed"], "ner")
    return Experiment(users, ecfg, annotated_bios=bios, tagger=tagger)


def _load_users(cfg: dict):
    return validate_corpus(load_corpus(cfg["paths"]["corpus"]))


# ----------------------------------------------------------------- commands

def cmd_synth(cfg: dict) -> None:
    out = _out(cfg)
    sd = {k: v for k, v in cfg["synth"].items() if k != "n_annotated_bios"}
    scfg = SynthConfig.from_dict({**sd, "seed": cfg["seed"]})
    users, oracle = generate_community(scfg)
    save_corpus(users, out / "corpus.jsonl")
    oracle.save(out / "oracle.json")
    bios = generate_annotated_bios(SynthConfig.from_dict({**sd, "seed": cfg["seed"] + 1}),
                                   int(cfg["synth"]["n_annotated_bios"]))
    save_annotated_bios(bios, out / "annotated_bios.jsonl")
    stats = json.loads(corpus_stats(users).to_json())
    stats["annotated_other_share"] = round(other_share(bios), 6)
    _write(out / "synth_stats.json", json.dumps({"config": cfg, "stats": stats},
                                                sort_keys=True, indent=2) + "\n")
    print(json.dumps(stats, sort_keys=True))


def cmd_ingest(cfg: dict) -> None:
    out = _out(cfg)
    raw = load_corpus(cfg["paths"]["corpus"])
    users = validate_corpus(raw)
    save_corpus(users, out / "corpus.clean.jsonl")
    exp = Experiment(users, experiment_config(cfg))
    exp.vocab.save(out / "vocab.json")
    examples = generate_all_examples(users)
    stats = json.loads(corpus_stats(users).to_json())
    stats.update({"n_examples": len(examples), "vocab_size": len(exp.vocab),
                  "n_dropped_users": len(raw) - len(users)})
    _write(out / "ingest_stats.json", json.dumps({"config": cfg, "stats": stats},
                                                 sort_keys=True, indent=2) + "\n")


def _trace_csv(trace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "loss"])
    for i, v in enumerate(trace, 1):
        w.writerow([i, f"{v:.6f}"])
    return buf.getvalue()


def cmd_train(cfg: dict) -> None:
    out = _out(cfg)
    exp = _experiment(cfg)
    cell = _cell(cfg)
    gen, *_ = exp.train(cell, cfg["seed"])
    ckpt = Path(cfg["paths"]["checkpoint"])
    save_checkpoint(gen.params, ckpt, {"kind": "generator", "vocab": list(exp.vocab.tokens),
                                       "lexicon": gen.lexicon.to_dict(), "cell": cell.to_dict(),
                                       "config": cfg})
    print(f"wrote {ckpt}")
    _write(out / "train_trace.csv", _trace_csv(gen.trace))


def cmd_train_ner(cfg: dict) -> None:
    out = _out(cfg)
    bios = load_annotated_bios(cfg["paths"]["bios"])
    tagger = train_ner(bios, hyper=NerHyper(epochs=int(cfg["ner"]["epochs"]),
                                            seed=derive_seed(cfg["seed"], "ner")))
    path = Path(cfg["paths"]["ner_checkpoint"])
    tagger.save(path)
    print(f"wrote {path}")
    _write(out / "ner_trace.csv", _trace_csv(tagger.trace))


def cmd_cluster(cfg: dict) -> None:
    out = _out(cfg)
    exp = _experiment(cfg)
    cell = _cell(cfg)
    if cell.h == 0:
        raise ConfigurationError("cluster needs h > 0 and a neighbor strategy")
    seed = cfg["seed"]
    sets = exp.neighbor_sets(cell.strategy, cell.h, seed)
    _write(out / "neighbors.json", neighbor_sets_to_json(sets) + "\n")
    if cell.strategy in ("features_bio", "features_timeline"):
        kind = "bio" if cell.strategy == "features_bio" else "timeline"
        ids, D = exp.distances(kind, seed)
        save_distance_matrix(D, ids, out / "distances.bin")
        print(f"wrote {out / 'distances.bin'}")
    if cell.strategy == "kmeans_bio":
        _write(out / "clusters.json", exp._clusters[seed].to_json() + "\n")


def _load_generator(path) -> tuple[GeneratorModel, dict]:
    params, extra = load_checkpoint(path, with_extra=True)
    if extra.get("kind") != "generator":
        raise CheckpointError(f"{path} is not a generator checkpoint")
    gen = GeneratorModel(params, Vocabulary(extra["vocab"]),
                         TagLexicon.from_dict(extra["lexicon"]))
    return gen, extra


def _load_neighbor_file(path: str) -> dict[str, NeighborSet | None]:
    data = json.loads(Path(path).read_text())
    return {q: None if v is None else NeighborSet(q, tuple((u, float(d)) for u, d in v))
            for q, v in data.items()}


def predict_user(gen: GeneratorModel, users: dict, user_id: str, cell: GridCell, k: int,
                 as_of: dt.date | None = None, neighbors: dict | None = None,
                 tag_cap: int = 15, beam_width: int = 5, max_tokens_per_tag: int = 4) -> dict:
    """Tags for the post after the user's latest window (posts up to ``as_of``)."""
    if user_id not in users:
        raise CorpusError(f"unknown user {user_id!r}")
    u = users[user_id]
    idx = [i for i, p in enumerate(u.posts) if as_of is None or p.date <= as_of]
    if not idx:
        raise CorpusError(f"user {user_id!r} has no posts on or before {as_of}")
    end = idx[-1]
    ex = TrainingExample(user_id, 0, end, u.has_bio, (), end + 1)
    mode = Mode(cell.mode)
    opts = AssemblyOptions(Mode.FULL if mode is Mode.FULL_PLUS_NEIGHBORS else mode, cell.pn,
                           max_len=gen.params.config.max_len)
    if cell.h > 0 and neighbors is not None and neighbors.get(user_id) is not None:
        opts = opts.with_neighbors(harvest_neighbor_tags(users, neighbors[user_id],
                                                         query_date(u, ex), tag_cap))
    doc = assemble_document(u, ex, opts, gen.vocab)
    res = generate_tags(gen.params, doc, gen.vocab, k, beam_width, max_tokens_per_tag,
                        gen.lexicon)
    return res.to_record(user_id, end + 1)


def cmd_predict(cfg: dict, user: str, as_of: str | None) -> None:
    gen, extra = _load_generator(cfg["paths"]["checkpoint"])
    users = {u.user_id: u for u in _load_users(cfg)}
    cell = GridCell(**extra["cell"])
    neighbors = _load_neighbor_file(cfg["paths"]["neighbors"]) if cfg["paths"]["neighbors"] else None
    date = dt.date.fromisoformat(as_of) if as_of else None
    ecfg = experiment_config(cfg)
    rec = predict_user(gen, users, user, cell, max(cfg["ks"]), date, neighbors, ecfg.tag_cap,
                       ecfg.model.beam_width, ecfg.model.max_tokens_per_tag)
    print(json.dumps(rec, sort_keys=True))


def _emit_reports(cfg: dict, reports: list[MetricsReport], stem: str) -> None:
    out = _out(cfg)
    _write(out / f"{stem}.csv", reports_to_csv(reports, echo=cfg))
    _write(out / f"{stem}.json", reports_to_json(reports, echo=cfg))


def cmd_evaluate(cfg: dict, predictions: str | None) -> None:
    cell = _cell(cfg)
    if predictions:
        exp = Experiment(_load_users(cfg), experiment_config(cfg))
        _, _, test, _, _ = exp.prepare(cell, cfg["seed"])
        preds = [json.loads(line) for line in Path(predictions).read_text().splitlines()
                 if line.strip()]
        rep = evaluate_run(preds, test, exp.embedder, tuple(cfg["ks"]), f"predictions {cell.label}",
                           {**cell.to_dict(), "seed": cfg["seed"]})
        _emit_reports(cfg, [rep], "evaluate")
        return
    exp = _experiment(cfg)
    per_model: dict[str, list[MetricsReport]] = {}
    for s in cfg["seeds"]:
        for name, rep in exp.run_cell(cell, s).items():
            per_model.setdefault(name, []).append(rep)
    reports = []
    for name in sorted(per_model):
        rep = mean_reports(per_model[name], label=f"{name} {cell.label}")
        rep.config = {**cell.to_dict(), "model": name, "seeds": list(cfg["seeds"])}
        reports.append(rep)
    _emit_reports(cfg, reports, "evaluate")


def cmd_ablate(cfg: dict) -> None:
    g = cfg["grid"]
    cells = expand_grid(g["modes"], g["pn_values"], g["h_values"], g["strategies"],
                        g["remove_top"])
    exp = _experiment(cfg)
    reports = ablation_grid(cells, exp.run_cell, cfg["seeds"], jobs=int(cfg["jobs"]))
    _emit_reports(cfg, reports, "ablation")


def render_table(reports: list[dict]) -> str:
    """Fixed-width text table of report JSON entries, one row per entry."""
    if not reports:
        return ""
    ks = sorted(int(k) for k in reports[0]["metrics"])
    head = ["config"] + [f"{m[0].upper()}@{k}" for k in ks for m in ("recall", "precision",
                                                                       "cosine", "f1")]
    rows = [[r["label"]] + [f"{r['metrics'][str(k)][m]:.3f}" for k in ks
                            for m in ("recall", "precision", "cosine", "f1")] for r in reports]
    widths = [max(len(x[i]) for x in [head] + rows) for i in range(len(head))]
    fmt = lambda row: "  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip()  # noqa: E731
    return "\n".join([fmt(head), fmt(["-" * w for w in widths])] + [fmt(r) for r in rows]) + "\n"


def cmd_report(cfg: dict, inputs: list[str]) -> None:
    entries = []
    for path in inputs:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise CorpusError(f"{path}: not a report JSON ({e})") from None
        if "reports" not in data:
            raise CorpusError(f"{path}: no 'reports' list")
        entries.extend(data["reports"])
    table = render_table(entries)
    out = _out(cfg)
    _write(out / "report.txt", table)
    sys.stdout.write(table)


# --------------------------------------------------------------------- main

def _int_list(s: str) -> list[int]:
    return [int(x) for x in s.split(",") if x.strip()]


def _str_list(s: str) -> list[str]:
    return [x.strip() for x in s.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tagcast", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"tagcast {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"JSON config (default: ${ENV_CONFIG})")
    common.add_argument("--seed", type=int)
    common.add_argument("--seeds", type=_int_list)
    common.add_argument("--jobs", type=int)
    common.add_argument("--ks", type=_int_list)
    common.add_argument("--corpus")
    common.add_argument("--bios")
    common.add_argument("--checkpoint")
    common.add_argument("--ner-checkpoint", dest="ner_checkpoint")
    common.add_argument("--neighbors")
    common.add_argument("--out")
    common.add_argument("--mode", choices=[m.value for m in Mode])
    common.add_argument("--pn", type=int)
    common.add_argument("--h", type=int)
    common.add_argument("--strategy", choices=STRATEGIES)
    common.add_argument("--remove-top", dest="remove_top", type=int)
    common.add_argument("--epochs", type=int)
    common.add_argument("--ner-epochs", dest="ner_epochs", type=int)
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("synth", parents=[common], help="generate a synthetic community")
    s.add_argument("--n-users", dest="n_users", type=int)
    s.add_argument("--n-annotated-bios", dest="n_annotated_bios", type=int)
    sub.add_parser("ingest", parents=[common], help="validate and normalize a corpus")
    sub.add_parser("train", parents=[common], help="train the tag generator")
    sub.add_parser("train-ner", parents=[common], help="train the bio NER tagger")
    sub.add_parser("cluster", parents=[common], help="compute neighbor sets")
    pr = sub.add_parser("predict", parents=[common], help="predict tags for one user")
    pr.add_argument("--user", required=True)
    pr.add_argument("--as-of", dest="as_of")
    ev = sub.add_parser("evaluate", parents=[common], help="evaluate one configuration")
    ev.add_argument("--predictions", help="score a predictions JSONL instead of training")
    ab = sub.add_parser("ablate", parents=[common], help="run an ablation grid")
    ab.add_argument("--modes", type=_str_list)
    ab.add_argument("--pn-values", dest="pn_values", type=_int_list)
    ab.add_argument("--h-values", dest="h_values", type=_int_list)
    ab.add_argument("--strategies", type=_str_list)
    ab.add_argument("--remove-top-values", dest="remove_top_values", type=_int_list)
    rp = sub.add_parser("report", parents=[common], help="render report JSON files")
    rp.add_argument("inputs", nargs="+")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = effective_config(args)
        cmd = args.command
        if cmd == "synth":
            cmd_synth(cfg)
        elif cmd == "ingest":
            cmd_ingest(cfg)
        elif cmd == "train":
            cmd_train(cfg)
        elif cmd == "train-ner":
            cmd_train_ner(cfg)
        elif cmd == "cluster":
            cmd_cluster(cfg)
        elif cmd == "predict":
            cmd_predict(cfg, args.user, args.as_of)
        elif cmd == "evaluate":
            cmd_evaluate(cfg, args.predictions)
        elif cmd == "ablate":
            cmd_ablate(cfg)
        elif cmd == "report":
            cmd_report(cfg, args.inputs)
    except (ConfigurationError, ConfigError, SynthError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CorpusError, SchemaError, TimelineError, CheckpointError, NeighborError, EvalError,
            FileNotFoundError, OSError, ValueError, KeyError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

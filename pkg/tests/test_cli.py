import json
import shutil
from pathlib import Path

import pytest

from tagcast import cli
from tagcast.corpus import AssemblyOptions, Mode, TrainingExample, load_corpus
from tagcast.encoder import load_checkpoint
from tagcast.taggen import TagLexicon, build_documents, generate_tags
from tagcast.textprep import Vocabulary

TINY = {
    "synth": {"n_users": 40, "n_annotated_bios": 40},
    "seeds": [0],
    "experiment": {"model": {"epochs": 1, "layers": 1, "hidden_dim": 16, "heads": 2,
                             "max_len": 96, "beam_width": 2},
                   "tsne_runs": 1, "tsne_iters": 60, "perplexity": 4.0},
    "ner": {"epochs": 10},
    "paths": {"corpus": "out/corpus.jsonl", "bios": "out/annotated_bios.jsonl",
              "checkpoint": "out/generator.ckpt", "ner_checkpoint": "out/ner.ckpt",
              "out": "out"},
}

RUN = [["synth"], ["ingest"], ["train"], ["train-ner"],
       ["cluster", "--h", "3", "--strategy", "features_timeline"],
       ["evaluate"], ["ablate", "--modes", "bio_posts,full"],
       ["report", "out/ablation.json", "out/evaluate.json"]]


def _setup(path: Path, monkeypatch, config=TINY):
    path.mkdir(parents=True, exist_ok=True)
    (path / "cfg.json").write_text(json.dumps(config))
    monkeypatch.chdir(path)
    monkeypatch.setenv(cli.ENV_CONFIG, "cfg.json")


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    mp = pytest.MonkeyPatch()
    d = tmp_path_factory.mktemp("cli")
    _setup(d, mp)
    for argv in RUN:
        assert cli.main(argv) == 0, argv
    mp.undo()
    return d


def test_all_commands_write_outputs(workdir):
    out = workdir / "out"
    for name in ("corpus.jsonl", "oracle.json", "corpus.clean.jsonl", "vocab.json",
                 "generator.ckpt", "train_trace.csv", "ner.ckpt", "neighbors.json",
                 "distances.bin", "evaluate.csv", "ablation.json", "report.txt"):
        assert (out / name).stat().st_size > 0, name
    assert (out / "evaluate.csv").read_text().startswith("# config: ")
    echo = json.loads((out / "ablation.json").read_text())["config"]
    assert echo["grid"]["modes"] == ["bio_posts", "full"]        # flag echoed into the report


def test_rerun_is_byte_identical(workdir, tmp_path, monkeypatch):
    _setup(tmp_path, monkeypatch)
    for argv in RUN:
        assert cli.main(argv) == 0
    for f in sorted((workdir / "out").iterdir()):
        assert (tmp_path / "out" / f.name).read_bytes() == f.read_bytes(), f.name


def test_predict_matches_library(workdir, monkeypatch, capsys):
    monkeypatch.chdir(workdir)
    monkeypatch.setenv(cli.ENV_CONFIG, "cfg.json")
    users = {u.user_id: u for u in load_corpus(workdir / "out/corpus.jsonl")}
    uid = sorted(users)[3]
    assert cli.main(["predict", "--user", uid]) == 0
    got = json.loads(capsys.readouterr().out)

    params, extra = load_checkpoint(workdir / "out/generator.ckpt", with_extra=True)
    vocab = Vocabulary(extra["vocab"])
    lex = TagLexicon.from_dict(extra["lexicon"])
    u = users[uid]
    end = len(u.posts) - 1
    ex = TrainingExample(uid, 0, end, u.has_bio, (), end + 1)
    doc = build_documents(users, [ex], AssemblyOptions(Mode.FULL, 3, max_len=96), vocab)[0]
    want = generate_tags(params, doc, vocab, 5, 2, 4, lex)
    assert got["tags"] == list(want.tags) and got["target_index"] == end + 1
    assert cli.main(["predict", "--user", "nobody"]) == cli.EXIT_DATA


def test_precedence_flags_file_defaults(tmp_path, monkeypatch):
    _setup(tmp_path, monkeypatch, {"seed": 5, "cell": {"pn": 2}})
    args = cli.build_parser().parse_args(["evaluate", "--pn", "1"])
    cfg = cli.effective_config(args)
    assert cfg["cell"]["pn"] == 1                  # flag beats file
    assert cfg["seed"] == 5                        # file beats default
    assert cfg["cell"]["mode"] == cli.DEFAULTS["cell"]["mode"]
    (tmp_path / "other.json").write_text('{"seed": 9}')
    args = cli.build_parser().parse_args(["evaluate", "--config", "other.json"])
    assert cli.effective_config(args)["seed"] == 9  # --config beats the env var


@pytest.mark.parametrize("config,argv", [
    ("{not json", ["ingest"]),
    ('{"bogus": {}}', ["ingest"]),
    ("{}", ["evaluate", "--h", "3"]),                       # h>0 without a strategy
    ("{}", ["evaluate", "--ks", "0"]),
    ('{"synth": {"n_users": 0}}', ["synth"]),
])
def test_config_errors_exit_2(tmp_path, monkeypatch, config, argv):
    _setup(tmp_path, monkeypatch)
    (tmp_path / "cfg.json").write_text(config)
    assert cli.main(argv) == cli.EXIT_CONFIG


def test_missing_config_file_exit_2(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv(cli.ENV_CONFIG, "nope.json")
    assert cli.main(["ingest"]) == cli.EXIT_CONFIG


def test_data_errors_exit_3(tmp_path, monkeypatch):
    _setup(tmp_path, monkeypatch)
    assert cli.main(["ingest"]) == cli.EXIT_DATA                 # no corpus yet
    Path("out").mkdir(exist_ok=True)
    Path("out/corpus.jsonl").write_text('{"user_id": "a", "posts": "oops"}\n')
    assert cli.main(["ingest"]) == cli.EXIT_DATA
    assert cli.main(["report", "missing.json"]) == cli.EXIT_DATA


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_error_exit_4(workdir, tmp_path, monkeypatch):
    cfg = json.loads(json.dumps(TINY))
    cfg["experiment"]["model"]["lr"] = 1e12
    _setup(tmp_path, monkeypatch, cfg)
    shutil.copytree(workdir / "out", tmp_path / "out")
    assert cli.main(["train"]) == cli.EXIT_NUMERIC

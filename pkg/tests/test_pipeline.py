import pytest

from tagcast.evaluation import GridCell
from tagcast.pipeline import Experiment, ExperimentConfig, ModelSettings, derive_seed


def test_derive_seed_stable_and_label_specific():
    assert derive_seed(0, "split") == derive_seed(0, "split")
    assert len({derive_seed(s, lab) for s in range(4) for lab in ("split", "init", "train")}) == 12


def test_experiment_config_roundtrip():
    cfg = ExperimentConfig(ks=(1, 3), model=ModelSettings(epochs=2, dropout=0.1))
    back = ExperimentConfig.from_dict(cfg.to_dict())
    assert back == cfg
    with pytest.raises(TypeError):
        ExperimentConfig.from_dict({"nonsense": 1})


@pytest.fixture(scope="module")
def experiment(small_community):
    users, _ = small_community
    cfg = ExperimentConfig(model=ModelSettings(layers=1, hidden_dim=16, heads=2, max_len=96,
                                               epochs=1, beam_width=2),
                           tsne_runs=1, tsne_iters=60, perplexity=5.0)
    return Experiment(users, cfg)


def test_run_cell_reports_every_test_example(experiment):
    cell = GridCell(h=3, strategy="random")
    out = experiment.run_cell(cell, 0)
    _, _, test = experiment.prepare(cell, 0)[:3]
    rep = out["generator"]
    assert rep.n_examples == len(test)
    assert rep.config["seed"] == 0 and rep.config["strategy"] == "random"
    assert out == experiment.run_cell(cell, 0)


def test_bio_only_cell_keeps_bio_users(experiment):
    umap, train, test, _, nfn = experiment.prepare(GridCell(mode="bio_only"), 1)
    assert nfn is None
    assert all(umap[e.user_id].has_bio for e in train + test)


def test_neighbor_strategies(experiment):
    bio_ids = {u.user_id for u in experiment.bio_users()}
    fb = experiment.neighbor_sets("features_bio", 3, 0)
    assert set(fb) == bio_ids
    assert all(ns.h == 3 and ns.query not in ns.user_ids for ns in fb.values())
    km = experiment.neighbor_sets("kmeans_bio", 2, 0)
    assert set(km) <= bio_ids
    with pytest.raises(ValueError):
        experiment.neighbor_sets("none", 3, 0)

import numpy as np
import pytest
import torch

import cmpa.trainer as trainer
from cmpa.config import RunConfig, with_overrides
from cmpa.contour import Chunk
from cmpa.data import DatasetSplit
from cmpa.evaluation import eval_chunks
from cmpa.losses import assign_bins, mse_loss, weighted_contrastive_batch_loss
from cmpa.trainer import (
    EarlyStopping,
    TrainingError,
    run_phase,
    run_seeds,
    sample_pairs,
    train_baseline,
    train_joint,
    train_two_step,
)


def tiny(regime, **overrides):
    base = {
        "chunk_len": 256,
        "batch_size": 8,
        "optimizer.contrastive.epochs": 3,
        "optimizer.regression.epochs": 3,
    }
    base.update(overrides)
    return with_overrides(RunConfig(regime=regime), base)


def _chunk(v):
    return Chunk("x", np.full(10, v), 0)


def test_sample_pairs_cross_bins():
    rng = np.random.default_rng(0)
    for _ in range(20):
        for pair in sample_pairs([(_chunk(0.1), 0.1), (_chunk(0.9), 0.9)], rng):
            if pair.rating_a != pair.rating_b:
                assert pair.label.Y == 0 and abs(pair.label.X_i - pair.label.X_j) == 4
            else:
                assert pair.label.Y == 1


def test_sample_pairs_one_bin_all_similar():
    batch = [(_chunk(r), r) for r in (0.41, 0.45, 0.5, 0.59)]
    assert all(p.label.Y == 1 for p in sample_pairs(batch, np.random.default_rng(3)))


def test_sample_pairs_deterministic_and_consistent():
    rng = np.random.default_rng(9)
    ratings = rng.uniform(0, 1, 32)
    batch = [(_chunk(r), r) for r in ratings]
    a = sample_pairs(batch, np.random.default_rng(1))
    b = sample_pairs(batch, np.random.default_rng(1))
    assert [(p.rating_a, p.rating_b) for p in a] == [(p.rating_a, p.rating_b) for p in b]
    assert sorted(p.rating_b for p in a) == sorted(ratings)
    for p in a:
        assert p.label.Y == int(p.label.X_i == p.label.X_j)


def test_sample_pairs_needs_two():
    with pytest.raises(TrainingError):
        sample_pairs([(_chunk(0.5), 0.5)], np.random.default_rng(0))


def test_early_stopping_on_plateau():
    history = run_phase("p", 500, 75, lambda e: 1.0, lambda: 0.5)
    assert history.best_epoch == 0
    assert history.last_epoch - history.best_epoch == 75
    assert len(history.val_losses) == 76


def test_early_stopping_tracks_late_improvement():
    losses = iter([5, 4, 3] + [3] * 8 + [2] + [2.5] * 100)
    history = run_phase("p", 200, 10, lambda e: 0.0, lambda: next(losses))
    assert history.best_epoch == 11
    assert history.last_epoch == 21


def test_epoch_budget_caps_training():
    values = iter(np.linspace(1, 0, 50))
    history = run_phase("p", 20, 75, lambda e: 0.0, lambda: next(values))
    assert history.last_epoch == 19


def test_early_stopping_requires_patience():
    with pytest.raises(TrainingError):
        EarlyStopping(0)


def test_best_weights_restored():
    model = torch.nn.Linear(1, 1)
    vals = iter([3.0, 1.0, 2.0, 2.0])

    def step(epoch):
        with torch.no_grad():
            model.weight.fill_(float(epoch))
        return 0.0

    run_phase("p", 4, 10, step, lambda: next(vals), model)
    assert model.weight.item() == 1.0


def test_regime_must_match(small_dataset):
    with pytest.raises(TrainingError):
        train_baseline(tiny("joint"), small_dataset)


def test_empty_split_rejected(small_dataset):
    split = DatasetSplit(tuple(small_dataset.ids), (), ())
    with pytest.raises(TrainingError):
        train_baseline(tiny("baseline"), small_dataset, split)


@pytest.mark.parametrize("regime", ["baseline", "two_step", "joint"])
def test_same_seed_same_report(regime, small_dataset):
    a = trainer.train(tiny(regime), small_dataset)
    b = trainer.train(tiny(regime), small_dataset)
    assert a.to_json() == b.to_json()
    assert a.best_epoch <= a.phases[-1].last_epoch
    assert set(a.test_metrics) >= {"r2", "mse"}


def test_different_seed_differs(small_dataset):
    a = train_baseline(tiny("baseline"), small_dataset)
    b = train_baseline(tiny("baseline", seed=1), small_dataset)
    assert a.phases[0].train_losses != b.phases[0].train_losses


def test_two_step_freezes_encoder(small_dataset, monkeypatch):
    captured = {}
    real = trainer.run_phase

    def spy(name, epochs, patience, train_epoch, validate, model=None, restore_best=True):
        if name == "regression":
            captured["before"] = {k: v.clone() for k, v in model.encoder.state_dict().items()}
            captured["head_before"] = {k: v.clone() for k, v in model.head.state_dict().items()}
        history = real(name, epochs, patience, train_epoch, validate, model, restore_best)
        if name == "regression":
            captured["after"] = {k: v.clone() for k, v in model.encoder.state_dict().items()}
            captured["head_after"] = model.head.state_dict()
        return history

    monkeypatch.setattr(trainer, "run_phase", spy)
    train_two_step(tiny("two_step", **{"optimizer.regression.epochs": 5}), small_dataset)
    assert captured["before"].keys() == captured["after"].keys()
    assert any("running_var" in k for k in captured["before"])
    for k in captured["before"]:
        assert torch.equal(captured["before"][k], captured["after"][k]), k
    assert any(not torch.equal(captured["head_before"][k], captured["head_after"][k]) for k in captured["head_before"])


def test_two_step_phase1_validation_is_contrastive_loss(small_dataset):
    cfg = tiny("two_step")
    report = train_two_step(cfg, small_dataset)
    split = trainer.split_dataset(small_dataset.ids, cfg.seed)
    x, _ = eval_chunks([small_dataset.contours[i] for i in split.val_ids], cfg.chunk_len)
    bins = assign_bins(small_dataset.ratings(split.val_ids, cfg.criterion), cfg.loss.C)
    perm = torch.as_tensor(trainer._Streams(cfg.seed).val_pairs.permutation(len(split.val_ids)))
    model = report.model.eval()
    with torch.no_grad():
        z = model.encode(x)
        expected = weighted_contrastive_batch_loss(z, z[perm], bins, bins[perm], cfg.loss).item()
    assert report.phases[0].name == "contrastive"
    assert report.phases[0].best_val_loss == pytest.approx(expected, rel=1e-6)


def test_joint_without_contrastive_matches_baseline(small_dataset):
    joint = train_joint(tiny("joint", **{"loss.contrastive_weight": 0.0}), small_dataset)
    base = train_baseline(tiny("baseline"), small_dataset)
    assert joint.phases[0].train_losses == base.phases[0].train_losses
    assert joint.phases[0].val_losses == base.phases[0].val_losses


def test_joint_validation_at_least_mse(small_dataset, monkeypatch):
    seen = []
    real = trainer._Run.validate

    def spy(self, kind):
        value = real(self, kind)
        if kind == "joint":
            seen.append((value, real(self, "mse")))
        return value

    monkeypatch.setattr(trainer._Run, "validate", spy)
    train_joint(tiny("joint"), small_dataset)
    assert seen and all(j >= m for j, m in seen)


def test_optimizer_protocol(small_dataset, monkeypatch):
    built = []
    real = trainer.OptimizerConfig.build

    def spy(self, params):
        opt = real(self, params)
        built.append(opt.param_groups[0])
        return opt

    monkeypatch.setattr(trainer.OptimizerConfig, "build", spy)
    train_two_step(tiny("two_step"), small_dataset)
    assert [g["lr"] for g in built] == [0.1, 0.005]
    for g in built:
        assert g["momentum"] == 0.9 and g["weight_decay"] == 1e-5


def test_run_seeds(small_dataset):
    reports = run_seeds(tiny("baseline"), small_dataset, [0, 1, 0])
    assert [r.seed for r in reports] == [0, 1, 0]
    assert reports[0].to_json() == reports[2].to_json()
    assert reports[0].config["seed"] == 0 and reports[1].config["seed"] == 1
    with pytest.raises(TrainingError):
        run_seeds(tiny("baseline"), small_dataset, [])


def test_report_serialization(tmp_path, small_dataset):
    import json

    report = train_baseline(tiny("baseline"), small_dataset)
    data = json.loads(report.write(tmp_path / "r.json").read_text())
    assert data["config"]["regime"] == "baseline"
    assert RunConfig.from_flat(data["config"]) == tiny("baseline")
    assert len(data["phases"][0]["train_losses"]) == 3

import csv
import json

import numpy as np
import pytest
from conftest import TINY

from jointdrive.model import InteractionNet
from jointdrive.numerics import ShapeError, Tensor
from jointdrive.training import (CorruptDatasetError, DatasetVersionError, EmptyDatasetError, generate_dataset,
                                 loss_jpp, loss_planning, loss_prediction, loss_seg, loss_total, read_dataset,
                                 write_dataset)
from jointdrive.training.checkpoint import CheckpointError, load_checkpoint, parameter_digest, save_checkpoint
from jointdrive.training.trainer import FreezeViolation, TrainConfig, Trainer, evaluate_l1


def small_train_config(**over):
    kw = dict(batch_size=4, epochs=[1, 2, 1], lr=1e-3, schedule="constant", local_layers=2, global_layers=2,
              model={k: v for k, v in TINY.items() if not k.endswith(("layers",))})
    kw.update(over)
    return TrainConfig(**kw)


# ------------------------------------------------------------- losses
def test_loss_planning_example():
    plan = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert loss_planning(plan, [[0.0, 0.0], [3.0, 5.0]]).item() == 4.0


def test_loss_prediction_example_and_empty():
    preds = Tensor(np.ones((2, 3, 2)))
    assert loss_prediction(preds, np.zeros((2, 3, 2)), n_scenes=2).item() == 6.0
    assert loss_prediction(None, np.zeros((0, 3, 2))).item() == 0.0
    with pytest.raises(ShapeError):
        loss_prediction(preds, np.zeros((3, 3, 2)))
    with pytest.raises(ShapeError):
        loss_planning(Tensor(np.zeros((3, 2))), np.zeros((4, 2)))


def test_loss_total_and_seg():
    assert loss_total(2.0, 3.0, 0.5) == 3.5
    assert loss_total(Tensor(2.0), 3.0, 2.0).item() == 8.0
    logits = Tensor(np.zeros((1, 2, 2)))
    assert loss_seg(logits, np.ones((1, 2, 2))).item() == pytest.approx(np.log(2.0), abs=1e-15)


def test_losses_match_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        t, n = rng.integers(1, 12), rng.integers(0, 5)
        plan, plan_gt = rng.normal(size=(t, 2)) * 10, rng.normal(size=(t, 2)) * 10
        preds, preds_gt = rng.normal(size=(n, t, 2)) * 10, rng.normal(size=(n, t, 2)) * 10
        lam = rng.uniform(0, 3)
        per = rng.uniform(0, 2)
        brute_plan = sum(abs(plan[i, j] - plan_gt[i, j]) for i in range(t) for j in range(2))
        brute_pred = sum(abs(preds[k, i, j] - preds_gt[k, i, j]) for k in range(n) for i in range(t) for j in range(2))
        jpp = loss_jpp(Tensor(plan), plan_gt, Tensor(preds) if n else None, preds_gt).item()
        assert abs(jpp - (brute_plan + brute_pred)) <= 1e-12 * max(1.0, jpp)
        total = loss_total(per, jpp, lam)
        assert abs(total - (per + lam * (brute_plan + brute_pred))) <= 1e-12 * max(1.0, total)


def test_planning_loss_batch_is_mean_over_scenes():
    rng = np.random.default_rng(1)
    plan, gt = rng.normal(size=(3, 4, 2)), rng.normal(size=(3, 4, 2))
    assert loss_planning(Tensor(plan), gt).item() == pytest.approx(np.abs(plan - gt).sum() / 3, abs=1e-12)


# ------------------------------------------------------------ dataset
@pytest.fixture(scope="module")
def hundred():
    ds = generate_dataset(3, 6, per_scenario=20, every=6)
    assert len(ds) >= 100
    return ds


def test_dataset_round_trip(hundred, tmp_path):
    for compress in (False, True):
        d = write_dataset(hundred, tmp_path / f"ds{compress}", compress=compress)
        back = read_dataset(d)
        assert len(back) == len(hundred)
        assert [s.to_dict() for s in back.samples] == [s.to_dict() for s in hundred.samples]
        assert back.meta == hundred.meta


def test_dataset_files_are_reproducible(small_dataset, tmp_path):
    a = write_dataset(small_dataset, tmp_path / "a", compress=True)
    b = write_dataset(generate_dataset(0, 4, per_scenario=2), tmp_path / "b", compress=True)
    for name in ("samples.jsonl.gz", "scenarios.jsonl.gz", "index.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_corrupt_line_is_named(small_dataset, tmp_path):
    d = write_dataset(small_dataset, tmp_path / "ds")
    lines = (d / "samples.jsonl").read_text().splitlines()
    lines[4] = lines[4][:-7]
    (d / "samples.jsonl").write_text("\n".join(lines) + "\n")
    with pytest.raises(CorruptDatasetError, match="line 5"):
        read_dataset(d)


def test_version_and_empty_errors(small_dataset, tmp_path):
    d = write_dataset(small_dataset, tmp_path / "ds")
    index = json.loads((d / "index.json").read_text())
    index["version"] = 99
    (d / "index.json").write_text(json.dumps(index))
    with pytest.raises(DatasetVersionError):
        read_dataset(d)
    with pytest.raises(EmptyDatasetError):
        generate_dataset(0, 0)
    empty = generate_dataset(0, 1, per_scenario=1)
    empty.samples.clear()
    with pytest.raises(EmptyDatasetError):
        Trainer(small_train_config(), empty)


# --------------------------------------------------------- checkpoints
def test_checkpoint_round_trip_is_bit_exact(small_dataset, small_features, tmp_path):
    tr = Trainer(small_train_config(), small_dataset, features=small_features)
    tr.run(stages=(1, 2), max_steps=3)
    path = tr.save(tmp_path / "a.ckpt")
    other = InteractionNet(tr.model.config, seed=99)
    assert parameter_digest(other) != parameter_digest(tr.model)
    load_checkpoint(path, other)
    assert parameter_digest(other) == parameter_digest(tr.model)
    mine = dict(tr.model.named_parameters())
    for name, p in other.named_parameters():
        assert np.array_equal(p.adam_m, mine[name].adam_m) and np.array_equal(p.adam_v, mine[name].adam_v)
        assert p.step_count == mine[name].step_count
    save_checkpoint(tmp_path / "b.ckpt", other, json.loads(json.dumps(
        {"train": tr.config.to_dict(), "model": tr.model.config.to_dict()})), tr.position["stage"], {"position": tr.position,
                                                                               "seed": 0, "frozen_digest": None})
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_checkpoint_mismatch_is_rejected(small_dataset, small_features, tmp_path):
    tr = Trainer(small_train_config(), small_dataset, features=small_features)
    path = tr.save(tmp_path / "a.ckpt")
    wider = InteractionNet(tr.model.config.__class__(**{**tr.model.config.to_dict(), "hidden": 20}))
    with pytest.raises(CheckpointError, match="shape"):
        load_checkpoint(path, wider)
    variant = InteractionNet(tr.model.config.__class__(**{**tr.model.config.to_dict(), "variant": "I"}))
    with pytest.raises(CheckpointError, match="names"):
        load_checkpoint(path, variant)
    blob = path.read_bytes()
    (tmp_path / "cut.ckpt").write_bytes(blob[:-8])
    with pytest.raises(CheckpointError, match="payload"):
        load_checkpoint(tmp_path / "cut.ckpt", tr.model)
    (tmp_path / "junk.ckpt").write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "junk.ckpt", tr.model)


# -------------------------------------------------------------- trainer
def test_stage_two_freezes_perception(small_dataset, small_features, tmp_path):
    tr = Trainer(small_train_config(), small_dataset, features=small_features, out_dir=tmp_path)
    tr.run(stages=(1,))
    before = {p.name: p.data.copy() for p in tr.model.perception_parameters()}
    planner_before = {p.name: p.data.copy() for p in tr.model.planner_parameters()}
    tr.run(stages=(2,))
    for p in tr.model.perception_parameters():
        assert np.array_equal(p.data, before[p.name])
    assert any(not np.array_equal(p.data, planner_before[p.name]) for p in tr.model.planner_parameters())
    assert (tmp_path / "stage1.ckpt").exists() and (tmp_path / "stage2.ckpt").exists()


def test_freeze_violation_detected(small_dataset, small_features):
    tr = Trainer(small_train_config(), small_dataset, features=small_features)
    snap = tr._snapshot(tr.model.perception_parameters())
    tr.model.perception_parameters()[0].tensor.data[...] += 1e-12
    with pytest.raises(FreezeViolation):
        tr.check_frozen(snap)


def test_resume_continues_exactly(small_dataset, small_features, tmp_path):
    cfg = small_train_config(seed=5, assemble_mode="training")
    straight = Trainer(cfg, small_dataset, features=small_features)
    straight.run()
    for cut in (1, 3, 5):
        first = Trainer(cfg, small_dataset, features=small_features)
        first.run(max_steps=cut)
        path = first.save(tmp_path / f"cut{cut}.ckpt")
        second = Trainer(cfg, small_dataset, features=small_features)
        second.resume(path)
        second.run()
        losses = [r.loss for r in second.history]
        expect = [r.loss for r in straight.history[cut:]]
        assert len(losses) == len(expect)
        assert abs(losses[0] - expect[0]) <= 1e-9
        assert np.abs(np.array(losses) - expect).max() <= 1e-9
        assert parameter_digest(second.model) == parameter_digest(straight.model)


def test_seeded_runs_agree_and_seeds_differ(small_dataset, small_features):
    runs = []
    for seed in (7, 7, 8):
        tr = Trainer(small_train_config(seed=seed, assemble_mode="training"), small_dataset, features=small_features)
        tr.run(max_steps=4)
        runs.append(np.array([r.loss for r in tr.history]))
    assert np.abs(runs[0] - runs[1]).max() <= 1e-9
    assert np.abs(runs[0] - runs[2]).max() > 1e-9


def test_metrics_csv(small_dataset, small_features, tmp_path):
    tr = Trainer(small_train_config(), small_dataset, features=small_features, out_dir=tmp_path)
    tr.run()
    rows = list(csv.DictReader(open(tmp_path / "metrics.csv")))
    assert [(int(r["stage"]), int(r["epoch"])) for r in rows] == [(1, 0), (2, 0), (2, 1), (3, 0)]
    for r, rec in zip(rows, tr.epoch_rows):
        assert float(r["loss"]) == rec["loss"]
    assert all(np.isfinite(float(r["loss"])) for r in rows)


def test_config_round_trip_and_unknown_keys():
    cfg = small_train_config(lam=0.5)
    assert TrainConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    with pytest.raises(ValueError):
        TrainConfig.from_dict({**cfg.to_dict(), "learning_rate": 1.0})
    with pytest.raises(ValueError):
        TrainConfig(model={"width": 3}).model_config()
    with pytest.raises(ValueError):
        TrainConfig(schedule="linear")


def test_step_schedule_halves_every_three_epochs(small_dataset, small_features):
    tr = Trainer(TrainConfig(), small_dataset, features=small_features)
    assert [tr.lr_at(2, e, 0) for e in (0, 2, 3, 6)] == [3e-4, 3e-4, 1.5e-4, 7.5e-5]


def test_evaluate_l1_sum_form(small_dataset, small_features):
    model = InteractionNet(small_train_config().model_config())
    res = evaluate_l1(model, small_dataset, features=small_features)
    assert res["joint"] == pytest.approx(res["plan"] + res["pred"], abs=1e-9)
    with pytest.raises(EmptyDatasetError):
        evaluate_l1(model, small_dataset, indices=[], features=small_features)


# -------------------------------------------------------------- overfit
def test_overfit_eight_samples(overfit_run):
    last = overfit_run.history[-1]
    assert last.plan_per_wp < 0.05 and len(overfit_run.history) <= 2000


def test_overfit_moving_average_decreases(overfit_run):
    loss = np.array([r.loss for r in overfit_run.history])
    ma = np.convolve(loss, np.ones(100) / 100, mode="valid")
    starts = np.arange(0, len(ma) - 100, 100)
    drops = [ma[s + 100] <= ma[s] for s in starts]
    assert np.mean(drops) >= 0.9

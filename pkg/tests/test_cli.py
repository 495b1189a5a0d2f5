import json
import re

import pytest
from conftest import TINY

from jointdrive.cli import main

SMALL = {"data": {"per_scenario": 3, "every": 20},
         "model": TINY,
         "train": {"batch_size": 4, "epochs": [1, 1, 1], "lr": 1e-3, "schedule": "constant"}}


def run(capsys, *argv) -> tuple[int, dict | None]:
    code = main([str(a) for a in argv])
    lines = capsys.readouterr().out.strip().splitlines()
    return code, (json.loads(lines[-1]) if code == 0 and lines else None)


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "small.json").write_text(json.dumps(SMALL))
    main(["gen-data", "--config", str(d / "small.json"), "--out", str(d / "data"), "--seed", "5",
          "--scenarios", "3"])
    return d


# ---------------------------------------------------------------- gen-data
def test_gen_data_digest_is_deterministic(capsys, tmp_path, workdir):
    _, a = run(capsys, "gen-data", "--config", workdir / "small.json", "--out", tmp_path / "a", "--seed", 7,
               "--scenarios", 4)
    _, b = run(capsys, "gen-data", "--config", workdir / "small.json", "--out", tmp_path / "b", "--seed", 7,
               "--scenarios", 4)
    assert a["digest"] == b["digest"] and a["samples"] > 0
    assert a["max_others"] <= 9


def test_gen_data_zero_scenarios_is_config_error(capsys, tmp_path):
    assert run(capsys, "gen-data", "--out", tmp_path / "x", "--scenarios", 0)[0] == 3


def test_unknown_config_key_exits_3(capsys, tmp_path, workdir):
    assert run(capsys, "train", "--data", workdir / "data", "--out", tmp_path, "--set", "train.nope=1")[0] == 3
    (tmp_path / "bad.json").write_text('{"trian": {}}')
    assert run(capsys, "gen-data", "--config", tmp_path / "bad.json", "--out", tmp_path / "d")[0] == 3


def test_usage_error_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["train"])
    assert exc.value.code == 2


# ------------------------------------------------------------------- train
def test_train_missing_dataset_exits_4(capsys, tmp_path, workdir):
    assert run(capsys, "train", "--config", workdir / "small.json", "--data", tmp_path / "none",
               "--out", tmp_path / "o")[0] == 4


def test_train_resume_matches_straight_run(capsys, tmp_path, workdir):
    base = ["train", "--config", workdir / "small.json", "--data", workdir / "data"]
    _, straight = run(capsys, *base, "--out", tmp_path / "s", "--max-steps", 6)
    _, first = run(capsys, *base, "--out", tmp_path / "r", "--max-steps", 3)
    _, second = run(capsys, *base, "--out", tmp_path / "r", "--max-steps", 3, "--resume", first["checkpoint"])
    assert second["steps"] == straight["steps"] == 6
    assert second["final_loss"] == pytest.approx(straight["final_loss"], abs=1e-9)
    assert (tmp_path / "s" / "metrics.csv").is_file()


def test_variant_iii_has_fewer_parameters(capsys, tmp_path, workdir):
    base = ["train", "--config", workdir / "small.json", "--data", workdir / "data", "--max-steps", 1]
    _, full = run(capsys, *base, "--out", tmp_path / "f")
    _, iii = run(capsys, *base, "--out", tmp_path / "t", "--variant", "III")
    assert iii["variant"] == "III" and iii["params"] < full["params"]


def test_overfit_flag_runs_stage_two(capsys, tmp_path, workdir):
    code, out = run(capsys, "train", "--data", workdir / "data", "--out", tmp_path, "--overfit", "--max-steps", 2)
    assert code == 0 and out["steps"] == 2 and out["finished"] is False


# -------------------------------------------------------------------- eval
def test_eval_same_seed_identical_report(capsys, tmp_path):
    args = ["eval", "--agent", "route", "--kinds", "straight,two_lane", "--episodes", 2, "--repeats", 2,
            "--max-time", 5]
    run(capsys, *args, "--out", tmp_path / "a")
    _, out = run(capsys, *args, "--out", tmp_path / "b")
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()
    report = json.loads((tmp_path / "a" / "report.json").read_text())
    assert re.fullmatch("[0-9a-f]{64}", report["config_hash"]) and out["config_hash"] == report["config_hash"]
    assert len(report["routes"]) == 4 and set(report["aggregate"]["DS"]) == {"mean", "std"}


def test_eval_collision_ablation_flag(capsys, tmp_path):
    args = ["eval", "--agent", "route", "--kinds", "hard_brake", "--episodes", 4, "--repeats", 1]
    _, on = run(capsys, *args, "--out", tmp_path / "on")
    _, off = run(capsys, *args, "--out", tmp_path / "off", "--no-collision-check")
    assert on["aggregate"]["collisions"] == 0 and off["aggregate"]["collisions"] > 0


def test_eval_trained_model_on_empty_road(capsys, tmp_path, toy_study):
    code, out = run(capsys, "eval", "--checkpoint", toy_study["checkpoint"], "--kinds", "empty", "--episodes", 3,
                    "--repeats", 1, "--out", tmp_path)
    assert code == 0
    assert out["aggregate"]["RC"]["mean"] == 100.0 and out["aggregate"]["IS"]["mean"] == 1.0


def test_eval_checkpoint_mismatch_exits_4(capsys, tmp_path, toy_study):
    assert run(capsys, "eval", "--checkpoint", toy_study["checkpoint"], "--set", "model.hidden=20",
               "--kinds", "empty", "--episodes", 1, "--repeats", 1, "--out", tmp_path)[0] == 4


def test_eval_missing_checkpoint_exits_4(capsys, tmp_path):
    assert run(capsys, "eval", "--checkpoint", tmp_path / "none.ckpt", "--out", tmp_path)[0] == 4


# ------------------------------------------------------ attention and plots
def test_attn_dump_has_36_cells_and_fixed_bytes(capsys, tmp_path, workdir, toy_study):
    for name in ("a", "b"):
        code, out = run(capsys, "attn-dump", "--checkpoint", toy_study["checkpoint"], "--data", workdir / "data",
                        "--vehicle", 1, "--out", tmp_path / name)
        assert code == 0 and out["cells"] == 36
    svg = (tmp_path / "a" / "attention.svg").read_text()
    assert svg.count('class="cell"') == 36 and 'class="sem"' in svg
    for f in ("attention.svg", "attention.pgm"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_attn_dump_missing_checkpoint_exits_4(capsys, tmp_path, workdir):
    assert run(capsys, "attn-dump", "--checkpoint", tmp_path / "gone.ckpt", "--data", workdir / "data",
               "--out", tmp_path)[0] == 4


def test_plot_one_plan_and_n_predictions(capsys, tmp_path, workdir, toy_study):
    outs = []
    for name in ("a.svg", "b.svg"):
        code, out = run(capsys, "plot", "--checkpoint", toy_study["checkpoint"], "--data", workdir / "data",
                        "--out", tmp_path / name)
        assert code == 0
        outs.append((tmp_path / name).read_bytes())
    svg = outs[0].decode()
    assert svg.count('class="plan"') == 1
    assert svg.count('class="prediction"') == out["predictions"]
    assert outs[0] == outs[1]


def test_rollout_writes_log_and_frames(capsys, tmp_path):
    code, out = run(capsys, "rollout", "--agent", "route", "--kind", "two_lane", "--max-time", 3, "--every", 10,
                    "--out", tmp_path / "log.jsonl", "--frames", tmp_path / "frames")
    assert code == 0 and out["ticks"] > 0
    assert (tmp_path / "log.jsonl").is_file()
    frames = sorted((tmp_path / "frames").glob("frame_*.svg"))
    assert frames and all('class="plan"' in f.read_text() for f in frames)

import json
import subprocess
import sys

import pytest

from sadm.cli import main

TINY = ["--set", "trainer.phase1_steps=12", "--set", "trainer.steps_per_round_theta=6",
        "--set", "trainer.steps_per_round_phi=3", "--set", "trainer.adversarial_rounds=2",
        "--set", "trainer.batch_size=8", "--set", "model.hidden=8", "--set", "model.enc_hidden=4",
        "--set", "eval.n_heldout=200", "--set", "sampler.n_samples=100", "--set", "sampler.nfe=5",
        "--set", "data.n_train=128", "--set", "trainer.checkpoint_every=5"]


def _train(out, *extra):
    return main(["train", *TINY, "--out", str(out), *extra])


def test_train_writes_all_artifacts(tmp_path):
    assert _train(tmp_path / "a") == 0
    files = {p.name for p in (tmp_path / "a").iterdir()}
    assert files == {"config.json", "log.csv", "checkpoint.sadm", "metrics.csv"}
    lines = (tmp_path / "a" / "log.csv").read_text().splitlines()
    assert lines[0] == "step,phase,round,t,loss_dsm,loss_struct,loss_total,wall_ms"
    assert [int(ln.split(",")[0]) for ln in lines[1:]] == list(range(1, 12 + 2 * 9 + 1))
    assert json.loads((tmp_path / "a" / "config.json").read_text())["trainer"]["batch_size"] == 8


def test_repeat_runs_are_byte_identical(tmp_path):
    _train(tmp_path / "a")
    _train(tmp_path / "b")
    for name in ("log.csv", "checkpoint.sadm", "metrics.csv", "config.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_resume_matches_uninterrupted_run(tmp_path):
    _train(tmp_path / "full")
    assert _train(tmp_path / "part", "--max-steps", "17") == 0
    assert _train(tmp_path / "part", "--resume") == 0
    for name in ("log.csv", "checkpoint.sadm"):
        assert (tmp_path / "full" / name).read_bytes() == (tmp_path / "part" / name).read_bytes()


def test_resume_needs_matching_config(tmp_path):
    _train(tmp_path / "a", "--max-steps", "5")
    assert main(["train", *TINY, "--set", "trainer.batch_size=4", "--out", str(tmp_path / "a"), "--resume"]) == 1


def test_existing_run_and_lock_are_refused(tmp_path, capsys):
    _train(tmp_path / "a")
    assert _train(tmp_path / "a") == 1
    assert "--overwrite" in capsys.readouterr().err
    assert _train(tmp_path / "a", "--overwrite") == 0
    (tmp_path / "a" / ".lock").write_text("123")
    assert _train(tmp_path / "a", "--overwrite") == 1
    assert "locked" in capsys.readouterr().err


def test_sample_eval_finetune(tmp_path):
    _train(tmp_path / "a")
    ckpt = str(tmp_path / "a" / "checkpoint.sadm")
    assert main(["sample", *TINY, "--checkpoint", ckpt, "--n", "7", "--output", str(tmp_path / "s.csv")]) == 0
    assert len((tmp_path / "s.csv").read_text().splitlines()) == 7
    assert main(["eval", *TINY, "--checkpoint", ckpt, "--out", str(tmp_path / "e")]) == 0
    assert (tmp_path / "e" / "metrics.csv").read_text().startswith("metric,value\nsliced_w,")
    assert main(["finetune", *TINY, "--set", "finetune.sg_steps=6", "--set", "finetune.adv_steps=2",
                 "--set", "finetune.freeze_mask=biases_only", "--from", str(tmp_path / "a"),
                 "--out", str(tmp_path / "f")]) == 0
    metrics = (tmp_path / "f" / "metrics.csv").read_text()
    assert "sliced_w_pretrained" in metrics and "sliced_w_finetuned" in metrics


@pytest.mark.parametrize("argv", [
    ["train", "--set", "trainer.bogus=1"],
    ["train", "--seed", "-3"],
    ["train", "--config", "/nonexistent/config.json"],
    ["sample", "--checkpoint", "/nonexistent.sadm"],
    ["nonsense"],
    [],
])
def test_usage_errors_exit_1(argv, tmp_path):
    assert main([*argv, "--out", str(tmp_path / "x")] if argv and argv[0] in ("train", "sample") else argv) == 1


def test_corrupt_checkpoint_exits_1(tmp_path):
    (tmp_path / "bad.sadm").write_bytes(b"junk")
    assert main(["eval", "--checkpoint", str(tmp_path / "bad.sadm"), "--out", str(tmp_path / "e")]) == 1


def test_divergence_exits_2(tmp_path, capsys):
    assert _train(tmp_path / "a", "--set", "trainer.lr_theta=1e300") == 2
    assert "step" in capsys.readouterr().err


def test_ablate_writes_table(tmp_path, capsys):
    assert main(["ablate", *TINY, "--seeds", "2", "--out", str(tmp_path / "ab")]) == 0
    out = capsys.readouterr().out
    assert "instance_only" in out and "full_sadm" in out
    rows = (tmp_path / "ab" / "ablation.csv").read_text().splitlines()
    assert rows[0] == "seed,mode,sliced_w,mode_coverage,heatmap_gap" and len(rows) == 7


def test_module_entry_point_exit_code(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "sadm.cli", "train", "--set", "nope=1"],
                          capture_output=True, text=True, cwd=tmp_path)
    assert proc.returncode == 1 and "unknown config key" in proc.stderr

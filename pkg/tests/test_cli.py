"""End-to-end exercises of the command line: generate -> train -> eval ->
check on a tiny dataset, plus the usage errors that should refuse to run.

Commands are invoked in-process through main(argv) so we can assert on exit
codes and parse the JSON event lines from stdout directly.
"""

import json

import pytest

from zznet.cli import main
from zznet.toydata import load_dataset


def run_cli(capsys, *argv):
    rc = main(list(argv))
    out = capsys.readouterr().out
    events = [json.loads(line) for line in out.splitlines()]
    return rc, events


def events_of(events, kind):
    return [e for e in events if e["event"] == kind]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    """A tiny generated dataset shared by the train/eval tests."""
    out = tmp_path_factory.mktemp("data")
    rc = main(["generate", "--m", "3", "--counts", "6,3,3", "--sigma", "0.01",
               "--seed", "7", "--out", str(out)])
    assert rc == 0
    return out


# ---------------------------------------------------------------------------
# generate


def test_generate_writes_splits_and_manifest(tmp_path, capsys):
    out = tmp_path / "ds"
    rc, events = run_cli(capsys, "generate", "--m", "4", "--counts", "5,2,2",
                         "--sigma", "0.02", "--seed", "3", "--out", str(out))
    assert rc == 0
    written = events_of(events, "split_written")
    assert [e["split"] for e in written] == ["train", "val", "test"]
    assert [e["count"] for e in written] == [5, 2, 2]
    for e in written:
        splits = load_dataset(e["path"])
        assert splits[e["split"]].n == e["count"]
        assert splits[e["split"]].z.shape[1] == 4

    manifest = json.loads((out / "manifest-generate.json").read_text())
    assert manifest["command"] == "generate"
    assert manifest["config"]["m"] == 4
    assert manifest["seed"] == 3
    assert len(manifest["outputs"]) == 3


def test_generate_is_deterministic_across_runs(tmp_path, capsys):
    args = ["generate", "--m", "3", "--counts", "4,2,2", "--sigma", "0.05",
            "--seed", "11"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b)]) == 0
    capsys.readouterr()
    for name in ("train.jsonl", "val.jsonl", "test.jsonl"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_generate_rejects_bad_ratio(tmp_path, capsys):
    with pytest.raises(SystemExit, match="invalid generation config"):
        main(["generate", "--outlier-ratio", "1.5", "--out", str(tmp_path)])


def test_generate_config_file_defaults_and_flag_override(tmp_path, capsys):
    cfg = tmp_path / "gen.json"
    cfg.write_text(json.dumps({"m": 9, "counts": "3,1,1", "sigma": 0.0,
                               "seed": 5}))
    out = tmp_path / "ds"
    rc, events = run_cli(capsys, "generate", "--config", str(cfg),
                         "--m", "3", "--out", str(out))
    assert rc == 0
    splits = load_dataset(out / "train.jsonl")
    assert splits["train"].z.shape == (3, 3)  # flag m=3 beats config m=9
    manifest = json.loads((out / "manifest-generate.json").read_text())
    assert manifest["config"]["sigma"] == 0.0
    assert manifest["seed"] == 5


def test_cli_requires_a_command(capsys):
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2


def test_generate_requires_out(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["generate", "--m", "3"])
    assert exc.value.code == 2


# ---------------------------------------------------------------------------
# train


def test_train_writes_metrics_checkpoint_manifest(data_dir, tmp_path, capsys):
    out = tmp_path / "run"
    rc, events = run_cli(capsys, "train", "--model", "broad", "--data",
                         str(data_dir), "--epochs", "2", "--batch-size", "3",
                         "--seed", "1", "--out", str(out))
    assert rc == 0
    epochs = events_of(events, "epoch")
    assert [e["epoch"] for e in epochs] == [1, 2]
    assert all("val_mean_error" in e and "train_loss" in e for e in epochs)

    lines = (out / "metrics.jsonl").read_text().splitlines()
    assert [json.loads(l)["epoch"] for l in lines] == [1, 2]

    done = events_of(events, "done")[0]
    assert done["checkpoint"] == str(out / "checkpoint.zzn")
    assert done["best_epoch"] in (1, 2)
    assert (out / "checkpoint.zzn").exists()

    manifest = json.loads((out / "manifest-train.json").read_text())
    assert manifest["config"]["model"] == "broad"
    assert manifest["config"]["train_config"]["epochs"] == 2


def test_train_requires_data(tmp_path, capsys):
    with pytest.raises(SystemExit, match="--data is required"):
        main(["train", "--out", str(tmp_path)])


def test_train_rejects_dataset_without_val_split(data_dir, tmp_path, capsys):
    only_train = tmp_path / "partial"
    only_train.mkdir()
    (only_train / "train.jsonl").write_bytes(
        (data_dir / "train.jsonl").read_bytes())
    with pytest.raises(SystemExit, match="no 'val' split"):
        main(["train", "--data", str(only_train), "--epochs", "1",
              "--out", str(tmp_path / "run")])


def test_train_rejects_missing_dataset(tmp_path, capsys):
    with pytest.raises(SystemExit, match="dataset not found"):
        main(["train", "--data", str(tmp_path / "nope"), "--out",
              str(tmp_path / "run")])


def test_resume_continues_epoch_numbering(data_dir, tmp_path, capsys):
    out = tmp_path / "run"
    base = ["train", "--model", "broad", "--data", str(data_dir),
            "--batch-size", "3", "--seed", "2", "--out", str(out)]
    assert main(base + ["--epochs", "1"]) == 0
    capsys.readouterr()

    rc, events = run_cli(capsys, "train", "--resume",
                         str(out / "checkpoint.zzn"), "--data", str(data_dir),
                         "--epochs", "3", "--out", str(out))
    assert rc == 0
    assert [e["epoch"] for e in events_of(events, "epoch")] == [2, 3]
    # metrics.jsonl is appended to, keeping the full trajectory in one file
    lines = (out / "metrics.jsonl").read_text().splitlines()
    assert [json.loads(l)["epoch"] for l in lines] == [1, 2, 3]
    manifest = json.loads((out / "manifest-train.json").read_text())
    assert manifest["config"]["resumed_from"] == str(out / "checkpoint.zzn")


def test_resume_refuses_early_stopped_checkpoint(data_dir, tmp_path, capsys):
    # early-stop drops the optimizer state on purpose: the saved weights are
    # the best-epoch snapshot and no longer match the final Adam moments
    out = tmp_path / "run"
    assert main(["train", "--model", "broad", "--data", str(data_dir),
                 "--epochs", "1", "--batch-size", "3", "--early-stop",
                 "--out", str(out)]) == 0
    capsys.readouterr()
    with pytest.raises(SystemExit, match="cannot resume"):
        main(["train", "--resume", str(out / "checkpoint.zzn"), "--data",
              str(data_dir), "--epochs", "2", "--out", str(out)])


def test_train_rejects_unknown_model(data_dir, tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--model", "vast", "--data", str(data_dir),
              "--out", str(tmp_path)])
    assert exc.value.code == 2  # argparse choices catch it before cmd_train


# ---------------------------------------------------------------------------
# eval


def test_eval_reports_accuracy(data_dir, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train", "--model", "broad", "--data", str(data_dir),
                 "--epochs", "1", "--batch-size", "3", "--out",
                 str(out)]) == 0
    capsys.readouterr()

    rc, events = run_cli(capsys, "eval", "--checkpoint",
                         str(out / "checkpoint.zzn"), "--data", str(data_dir),
                         "--split", "test")
    assert rc == 0
    report = events_of(events, "report")[0]
    assert report["count"] == 3
    assert report["model"] == "broad"
    for key in ("mean_error", "acc_1deg", "acc_5deg", "acc_10deg"):
        assert key in report
    # manifest lands next to the checkpoint when --out is omitted
    assert (out / "manifest-eval.json").exists()


def test_eval_rejects_missing_checkpoint(data_dir, tmp_path, capsys):
    with pytest.raises(SystemExit, match="checkpoint not found"):
        main(["eval", "--checkpoint", str(tmp_path / "none.zzn"),
              "--data", str(data_dir)])


# ---------------------------------------------------------------------------
# check


def test_check_runs_named_suite(tmp_path, capsys):
    rc, events = run_cli(capsys, "check", "--suite", "bases",
                         "--out", str(tmp_path))
    assert rc == 0
    checks = events_of(events, "check")
    assert checks and all(e["passed"] for e in checks)
    assert "catalog sizes" in {e["name"] for e in checks}
    done = events_of(events, "done")[0]
    assert done["failed"] == 0 and done["passed"] == len(checks)
    manifest = json.loads((tmp_path / "manifest-check.json").read_text())
    assert manifest["config"]["suites"] == ["bases"]


def test_check_rejects_unknown_suite(tmp_path, capsys):
    with pytest.raises(SystemExit, match="unknown suite"):
        main(["check", "--suite", "vibes", "--out", str(tmp_path)])

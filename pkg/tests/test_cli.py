import csv
import subprocess
import sys

import numpy as np
import pytest

from diffmatte.cli import main
from diffmatte.data import read_pgm

TRAIN = ["--epochs", "2", "--nd", "4", "--nf", "8", "--set", "crop=32", "--set", "batch_size=2"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen-data", "--count", "3", "--size", "32", "--seed", "1", "--out", str(root / "data")]) == 0
    assert main(["train", "--data", str(root / "data"), "--out", str(root / "run"), *TRAIN]) == 0
    return root


def _rows(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


def _manifest(directory):
    text = (directory / "manifest.txt").read_text()
    return dict(line.split(" = ", 1) for line in text.splitlines())


def test_gen_data_layout_and_manifest(workspace):
    names = sorted(p.name for p in (workspace / "data").iterdir())
    assert names == [
        "alpha_0000.pgm16", "alpha_0001.pgm16", "alpha_0002.pgm16",
        "image_0000.ppm", "image_0001.ppm", "image_0002.ppm",
        "manifest.txt",
        "trimap_0000.pgm", "trimap_0001.pgm", "trimap_0002.pgm",
    ]
    m = _manifest(workspace / "data")
    assert m["seed"] == "1" and m["command"].startswith("diffmatte gen-data")
    assert m["version"] and m["started"] and m["finished"]


def test_train_outputs(workspace):
    run = workspace / "run"
    assert {"final.dmck", "last.dmck", "losses.csv", "manifest.txt"} <= {p.name for p in run.iterdir()}
    rows = _rows(run / "losses.csv")
    assert rows[0] == ["epoch", "sp_l1", "l2", "lap", "grad", "total"] and len(rows) == 3
    assert _manifest(run)["config.decoder.n_d"] == "4"


def test_train_is_byte_deterministic(workspace, tmp_path):
    assert main(["train", "--data", str(workspace / "data"), "--out", str(tmp_path), *TRAIN]) == 0
    for name in ("final.dmck", "losses.csv"):
        assert (tmp_path / name).read_bytes() == (workspace / "run" / name).read_bytes()


def test_train_from_config_file(workspace, tmp_path):
    cfg = tmp_path / "toy.cfg"
    cfg.write_text(f"epochs = 1\ncrop = 32\ndecoder.n_d = 4\ndecoder.n_f = 8\ndata.dir = {workspace / 'data'}\n")
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o"), "--schedule", "cosine", "--input-scale", "0.5"]) == 0
    m = _manifest(tmp_path / "o")
    assert m["config.schedule.kind"] == "cosine" and m["config.schedule.b"] == "0.5"


@pytest.mark.parametrize("steps", ["1", "10"])
def test_infer_steps(workspace, tmp_path, steps):
    d = workspace / "data"
    args = ["infer", "--image", str(d / "image_0000.ppm"), "--trimap", str(d / "trimap_0000.pgm"),
            "--ckpt", str(workspace / "run" / "final.dmck"), "--steps", steps, "--seed", "3",
            "--out", str(tmp_path / "pred.pgm16"), "--trace-dir", str(tmp_path / "trace")]
    assert main(args) == 0
    alpha = read_pgm(tmp_path / "pred.pgm16")
    assert alpha.shape == (32, 32)
    trace = sorted(p.name for p in (tmp_path / "trace").glob("step_*.pgm16"))
    assert trace == [f"step_{i:03d}.pgm16" for i in range(int(steps))]
    assert (tmp_path / "manifest.txt").exists() and (tmp_path / "trace" / "manifest.txt").exists()
    first = (tmp_path / "pred.pgm16").read_bytes()
    assert main(args) == 0
    assert (tmp_path / "pred.pgm16").read_bytes() == first


def test_eval_identical_dirs_gives_zero(workspace, tmp_path):
    d = str(workspace / "data")
    assert main(["eval", "--pred", d, "--gt", d, "--trimap", d, "--out", str(tmp_path / "r.csv")]) == 0
    rows = _rows(tmp_path / "r.csv")
    assert rows[0] == ["name", "sad", "mse", "grad", "conn"]
    assert [r[0] for r in rows[1:]] == ["0000", "0001", "0002", "mean"]
    assert all(float(v) == 0.0 for r in rows[1:] for v in r[1:])


def test_eval_jobs_match_serial(workspace, tmp_path):
    d = workspace / "data"
    preds = tmp_path / "preds"
    for i in range(3):
        main(["infer", "--image", str(d / f"image_{i:04d}.ppm"), "--trimap", str(d / f"trimap_{i:04d}.pgm"),
              "--ckpt", str(workspace / "run" / "final.dmck"), "--steps", "2", "--out", str(preds / f"pred_{i:04d}.pgm16")])
    common = ["eval", "--pred", str(preds), "--gt", str(d), "--trimap", str(d)]
    assert main([*common, "--out", str(tmp_path / "a.csv")]) == 0
    assert main([*common, "--out", str(tmp_path / "b.csv"), "--jobs", "2"]) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert float(_rows(tmp_path / "a.csv")[-1][1]) > 0


def test_steps_sweep(workspace, tmp_path):
    args = ["sweep", "--kind", "steps", "--grid", "1,2,5,10", "--ckpt", str(workspace / "run" / "final.dmck"),
            "--eval-data", str(workspace / "data"), "--out", str(tmp_path / "s")]
    assert main(args) == 0
    rows = _rows(tmp_path / "s" / "sweep.csv")
    assert rows[0] == ["setting", "sad", "mse", "grad", "conn", "status"]
    assert [r[0] for r in rows[1:]] == ["1", "2", "5", "10"] and all(r[-1] == "ok" for r in rows[1:])
    svg = (tmp_path / "s" / "sweep.svg").read_text()
    assert svg.startswith("<svg") and "polyline" in svg
    assert main([*args[:-1], str(tmp_path / "s2")]) == 0
    assert (tmp_path / "s" / "sweep.csv").read_bytes() == (tmp_path / "s2" / "sweep.csv").read_bytes()
    assert svg == (tmp_path / "s2" / "sweep.svg").read_text()


def test_schedule_sweep_marks_failures(workspace, tmp_path):
    args = ["sweep", "--kind", "schedule", "--grid", "linear,cosine,sigmoid,bogus", "--data", str(workspace / "data"),
            "--eval-data", str(workspace / "data"), "--set", "epochs=1", "--set", "crop=32",
            "--set", "decoder.n_d=4", "--set", "decoder.n_f=8", "--out", str(tmp_path), "--jobs", "2"]
    assert main(args) == 0
    rows = _rows(tmp_path / "sweep.csv")
    assert [r[0] for r in rows[1:]] == ["linear", "cosine", "sigmoid", "bogus"]
    assert [r[-1] for r in rows[1:4]] == ["ok"] * 3
    assert rows[4][-1].startswith("failed") and rows[4][1] == "nan"


def test_diagnose_consistent(workspace, tmp_path):
    args = ["diagnose-consistent", "--ckpt", str(workspace / "run" / "final.dmck"), "--data", str(workspace / "data"),
            "--steps", "4", "--out", str(tmp_path)]
    assert main(args) == 0
    rows = _rows(tmp_path / "consistent.csv")
    assert rows[0] == ["step", "sad_self", "sad_consistent"] and len(rows) == 5
    assert rows[1][1] == rows[1][2]  # the first step sees identical noise
    assert (tmp_path / "consistent.svg").exists()


def test_missing_trimap_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["infer", "--image", "a.ppm", "--ckpt", "c", "--out", "o"])
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_exit_codes(workspace, tmp_path):
    d = workspace / "data"
    infer = ["infer", "--trimap", str(d / "trimap_0000.pgm"), "--ckpt", str(workspace / "run" / "final.dmck"),
             "--out", str(tmp_path / "p.pgm16")]
    assert main([*infer, "--image", str(tmp_path / "missing.ppm")]) == 3
    (tmp_path / "bad.ppm").write_bytes(b"P6\n4 4\n255\n\x00")
    assert main([*infer, "--image", str(tmp_path / "bad.ppm")]) == 3
    assert main([*infer, "--image", str(d / "image_0000.ppm"), "--steps", "0"]) == 4
    assert main(["train", "--set", "bogus=1", "--out", str(tmp_path / "t")]) == 4
    assert main(["train", "--set", "novalue", "--out", str(tmp_path / "t")]) == 4


def test_numeric_error_exit_code(monkeypatch, workspace, tmp_path):
    import diffmatte.cli as cli
    from diffmatte.errors import NumericError

    def explode(*a, **k):
        raise NumericError("loss became nan")

    monkeypatch.setattr(cli, "fit", explode)
    assert main(["train", "--data", str(workspace / "data"), "--out", str(tmp_path), *TRAIN]) == 5
    assert (tmp_path / "manifest.txt").exists()  # written before the failing computation


def test_env_seed_fallback(monkeypatch):
    import diffmatte.cli as cli

    monkeypatch.setenv("DIFFMATTE_SEED", "42")
    args = cli.build_parser().parse_args(["gen-data", "--count", "1", "--out", "x"])
    assert args.seed == 42


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "diffmatte", "gen-data", "--count", "1", "--size", "16",
                          "--out", str(tmp_path)], capture_output=True)
    assert out.returncode == 0 and (tmp_path / "image_0000.ppm").exists()
    bad = subprocess.run([sys.executable, "-m", "diffmatte", "nope"], capture_output=True)
    assert bad.returncode == 2

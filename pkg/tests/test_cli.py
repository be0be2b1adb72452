import json

import pytest

from cmpa.cli import main

TINY = """\
# tiny settings so the grid runs in seconds
chunk_len = 256
batch_size = 8
optimizer.contrastive.epochs = 2
optimizer.regression.epochs = 2
eval.perplexity = 5.0
matrix.regimes = ["baseline", "joint"]
matrix.criteria = ["note_accuracy"]
matrix.seeds = [0, 1]
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--n", "40", "--min-len", "300", "--max-len", "500", "--out", str(root / "data")]) == 0
    (root / "tiny.cfg").write_text(TINY)
    return root


def _train(workdir, out, *extra):
    return main(["train", "--config", str(workdir / "tiny.cfg"), "--manifest", str(workdir / "data" / "manifest.csv"),
                 "--out", str(out), *extra])


def test_synth_writes_manifest(workdir):
    lines = (workdir / "data" / "manifest.csv").read_text().splitlines()
    assert len(lines) == 41
    assert lines[0].startswith("recording_id,")


def test_synth_rejects_empty(tmp_path, capsys):
    assert main(["synth", "--n", "0", "--out", str(tmp_path)]) == 1
    assert "n_recordings" in capsys.readouterr().err


def test_train_evaluate_embed(workdir, tmp_path, capsys):
    assert _train(workdir, tmp_path / "run", "--regime", "two_step") == 0
    assert (tmp_path / "run" / "checkpoint.ckpt").is_file()
    report = json.loads((tmp_path / "run" / "report.json").read_text())
    assert report["regime"] == "two_step"
    capsys.readouterr()

    assert main(["evaluate", "--checkpoint", str(tmp_path / "run" / "checkpoint.ckpt"), "--out", str(tmp_path / "ev")]) == 0
    out = capsys.readouterr().out
    assert "R2" in out and "Davies-Bouldin" in out
    metrics = json.loads((tmp_path / "ev" / "metrics.json").read_text())
    assert metrics["r2"] == pytest.approx(report["test_metrics"]["r2"], abs=1e-9)

    assert main(["embed", "--checkpoint", str(tmp_path / "run" / "checkpoint.ckpt"), "--split", "all",
                 "--out", str(tmp_path / "em")]) == 0
    rows = (tmp_path / "em" / "embeddings.tsv").read_text().splitlines()
    assert len(rows) == 41
    assert len((tmp_path / "em" / "projection.tsv").read_text().splitlines()) == 41


def test_train_reruns_are_byte_identical(workdir, tmp_path):
    assert _train(workdir, tmp_path / "a", "--seed", "3") == 0
    assert _train(workdir, tmp_path / "b", "--seed", "3") == 0
    for name in ("checkpoint.ckpt", "report.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


@pytest.mark.parametrize("args, code, fragment", [
    (["--regime", "bogus"], 1, "regime"),
    (["--set", "loss.C=oops"], 1, "loss.C"),
    (["--set", "no.such.key=1"], 1, "no.such.key"),
    (["--set", "chunk_len=10"], 1, "chunk"),
])
def test_train_config_errors(workdir, tmp_path, capsys, args, code, fragment):
    assert _train(workdir, tmp_path, *args) == code
    assert fragment in capsys.readouterr().err


def test_missing_data_is_data_error(tmp_path, capsys):
    assert main(["train", "--manifest", str(tmp_path / "nope.csv"), "--out", str(tmp_path)]) == 2
    assert main(["evaluate", "--checkpoint", str(tmp_path / "nope.ckpt")]) == 2
    assert "nope" in capsys.readouterr().err


def test_unknown_command_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1


def test_run_matrix_resume_and_report(workdir, tmp_path, capsys):
    args = ["run-matrix", "--config", str(workdir / "tiny.cfg"), "--manifest", str(workdir / "data" / "manifest.csv"),
            "--out", str(tmp_path / "m")]
    assert main(args) == 0
    doc = json.loads((tmp_path / "m" / "matrix.json").read_text())
    assert len(doc["cells"]) == 4
    first = (tmp_path / "m" / "matrix.json").read_bytes()
    capsys.readouterr()
    assert main(args + ["--resume"]) == 0
    assert "0 cells to run" in capsys.readouterr().out
    assert (tmp_path / "m" / "matrix.json").read_bytes() == first

    # the two-regime grid is a valid matrix of its own
    assert main(["report", "--matrix", str(tmp_path / "m" / "matrix.json"), "--out", str(tmp_path / "r")]) == 0
    assert (tmp_path / "r" / "note_accuracy" / "r2_box.svg").is_file()


def test_run_matrix_failure_names_cell(workdir, tmp_path, capsys):
    cfg = workdir / "tiny.cfg"
    args = ["run-matrix", "--config", str(cfg), "--manifest", str(workdir / "data" / "manifest.csv"),
            "--out", str(tmp_path / "m"), "--set", "eval.n_chunks=0", "--set", "eval.chunk_policy=\"mean\""]
    assert main(args) == 3
    assert "regime=baseline criterion=note_accuracy seed=0" in capsys.readouterr().err


def test_report_on_missing_matrix(tmp_path):
    assert main(["report", "--matrix", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 2

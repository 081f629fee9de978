import hashlib

import pytest
from PIL import Image

from asgan.cli import main
from asgan.data import load_manifest


def tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth-data", "--count", "8", "--resolution", "64", "--seed", "0",
                 "--out", str(root / "data")]) == 0
    assert main(["train", "--override", "resolution=64", "--override", "max_iterations=2",
                 "--override", f"data={root / 'data'}", "--seed", "1",
                 "--out", str(root / "run")]) == 0
    return root


def test_synth_data_layout(workspace):
    data = workspace / "data"
    assert len(list((data / "images").glob("*.png"))) == 24
    assert len((data / "manifest.jsonl").read_text().splitlines()) == 8
    assert load_manifest(data, "train").ids == ["s00000", "s00001", "s00002", "s00006", "s00007"]
    assert load_manifest(data, "test").ids == ["s00003", "s00004", "s00005"]


def test_synth_data_is_byte_reproducible(workspace, tmp_path):
    main(["synth-data", "--count", "8", "--resolution", "64", "--seed", "0",
          "--out", str(tmp_path / "again")])
    assert tree_digest(tmp_path / "again") == tree_digest(workspace / "data")


def test_train_writes_config_log_and_checkpoint(workspace):
    run = workspace / "run"
    assert (run / "last.asg").is_file()
    assert len((run / "losses.csv").read_text().splitlines()) == 3
    assert "seed = 1" in (run / "config.cfg").read_text()


def test_generate_grids(workspace, tmp_path):
    args = ["generate", "--checkpoint", str(workspace / "run" / "last.asg"),
            "--data", str(workspace / "data"), "--seed", "2"]
    assert main(args + ["--attribute", "beard", "--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--attribute", "beard", "--out", str(tmp_path / "b")]) == 0
    grids = sorted((tmp_path / "a").glob("*.png"))
    assert [g.name for g in grids] == [f"s0000{i}_beard.png" for i in (3, 4, 5)]
    assert Image.open(grids[0]).size == (5 * 64, 64)
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")
    # without --attribute each sample keeps its own label
    assert main(args + ["--out", str(tmp_path / "c")]) == 0
    assert {p.name for p in (tmp_path / "c").iterdir()} == {
        "s00003_glasses.png", "s00004_beard.png", "s00005_bowtie.png"}


def test_eval_outputs(workspace, tmp_path):
    assert main(["eval", "--checkpoint", str(workspace / "run" / "last.asg"),
                 "--data", str(workspace / "data"), "--out", str(tmp_path)]) == 0
    assert len((tmp_path / "metrics.csv").read_text().splitlines()) == 4
    assert (tmp_path / "metrics.md").read_text().startswith("| Model |")


def test_ablate_table(tmp_path):
    assert main(["ablate", "--override", "resolution=64", "--override", "max_iterations=1",
                 "--override", "data=synthetic:2", "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "table.md").read_text().strip().splitlines()
    assert lines[0] == "| Model | synthetic SSIM | synthetic FLSS |"
    assert [ln.split("|")[1].strip() for ln in lines[2:6]] == [
        "attribute+sketch", "attribute+sketch+L1", "encoder-decoder", "u-net"]
    assert lines[-1].startswith("| Time (s)")
    ids = [(tmp_path / v / "metrics.csv").read_text().splitlines()[1:]
           for v in ("attribute+sketch", "u-net")]
    assert [r.split(",")[0] for r in ids[0]] == [r.split(",")[0] for r in ids[1]]


def test_errors_exit_nonzero(workspace, tmp_path, capsys):
    ckpt = str(workspace / "run" / "last.asg")
    assert main(["train", "--override", "colour=red", "--out", str(tmp_path)]) == 2
    assert "colour" in capsys.readouterr().err
    assert main(["eval", "--checkpoint", str(tmp_path / "none.asg"),
                 "--data", str(workspace / "data"), "--out", str(tmp_path)]) == 2
    assert main(["eval", "--checkpoint", ckpt, "--data", str(tmp_path / "nowhere"),
                 "--out", str(tmp_path)]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["generate", "--checkpoint", ckpt, "--data", str(workspace / "data"),
              "--attribute", "hat", "--out", str(tmp_path)])
    assert exc.value.code == 2
    assert "glasses" in capsys.readouterr().err

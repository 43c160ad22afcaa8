import json
import shutil
import subprocess
import sys

import pytest

from egostereo import training
from egostereo.cli import main

TINY = ["--C", "16", "--batch", "2", "--max-steps", "2"]
TINY_3D = ["--C", "16", "--T", "2", "--skip", "2", "--batch", "2", "--max-steps", "2"]


@pytest.fixture(scope="module")
def pipeline(tiny_dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli")
    data = str(tiny_dataset.root)
    cfg = out / "small.json"
    cfg.write_text(json.dumps({"decoder_layers": 1, "heads": 2}))
    assert main(["train-2d", "--data", data, "--out", str(out / "h.ckpt"), "--seed", "0", *TINY]) == 0
    args = ["train-3d", "--data", data, "--ckpt-2d", str(out / "h.ckpt"), "--seed", "0", "--config", str(cfg), *TINY_3D]
    assert main([*args, "--out", str(out / "p.ckpt")]) == 0
    return out, data


class TestExitCodes:
    def test_no_command(self):
        with pytest.raises(SystemExit) as info:
            main([])
        assert info.value.code == 2

    def test_unknown_flag(self, tmp_path):
        with pytest.raises(SystemExit) as info:
            main(["inspect", "--data", str(tmp_path), "--bogus"])
        assert info.value.code == 2

    def test_missing_seed(self, tmp_path):
        with pytest.raises(SystemExit) as info:
            main(["train-2d", "--data", str(tmp_path), "--out", str(tmp_path / "x")])
        assert info.value.code == 2

    def test_not_a_dataset(self, tmp_path):
        assert main(["inspect", "--data", str(tmp_path)]) == 3

    def test_missing_image(self, tiny_dataset, tmp_path):
        copy = tmp_path / "copy"
        shutil.copytree(tiny_dataset.root, copy)
        next(copy.glob("seq_000/img_l/*.png")).unlink()
        assert main(["inspect", "--data", str(copy)]) == 3
        assert main(["inspect", "--data", str(copy), "--no-check"]) == 0

    def test_bad_config_values(self, tiny_dataset, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"lr": -1.0}))
        argv = ["train-2d", "--data", str(tiny_dataset.root), "--out", str(tmp_path / "x"), "--seed", "0", "--config", str(cfg)]
        assert main(argv) == 2

    def test_bad_synth_config(self, tmp_path):
        assert main(["synth", "--out", str(tmp_path / "d"), "--depth-dropout", "2.0"]) == 2

    def test_divergence(self, tiny_dataset, tmp_path, monkeypatch):
        monkeypatch.setattr(training, "heatmap_loss", lambda pred, gt: (pred - gt).sum() * float("inf"))
        argv = ["train-2d", "--data", str(tiny_dataset.root), "--out", str(tmp_path / "x"), "--seed", "0", *TINY]
        assert main(argv) == 4

    def test_eval_window_mismatch(self, pipeline):
        out, data = pipeline
        assert main(["eval", "--data", data, "--ckpt", str(out / "p.ckpt"), "--T", "4"]) == 2

    def test_oracle_depth_with_disk_masks_needs_dir(self, pipeline):
        out, data = pipeline
        argv = ["eval", "--data", data, "--ckpt", str(out / "p.ckpt"), "--depth-provider", "oracle", "--mask-provider", "disk"]
        assert main(argv) == 2


class TestCommands:
    def test_synth_and_inspect(self, tmp_path, capsys):
        assert main(["synth", "--out", str(tmp_path / "d"), "--num-sequences", "1", "--num-frames", "3", "--seed", "4"]) == 0
        capsys.readouterr()
        assert main(["inspect", "--data", str(tmp_path / "d")]) == 0
        stats = json.loads(capsys.readouterr().out)
        assert stats["frames"] == 3 and stats["sequences"] == 1

    def test_training_outputs(self, pipeline):
        out, _ = pipeline
        assert (out / "h.ckpt").exists() and (out / "p.ckpt").exists()
        steps = [json.loads(line)["step"] for line in (out / "p.ckpt.log.jsonl").read_text().splitlines()]
        assert steps == [0, 1]

    def test_eval_and_plot(self, pipeline, capsys):
        out, data = pipeline
        argv = ["eval", "--data", data, "--ckpt", str(out / "p.ckpt"), "--report", str(out / "r.json")]
        argv += ["--text", str(out / "r.txt"), "--series", str(out / "s.json"), "--label", "full"]
        assert main(argv) == 0
        printed = capsys.readouterr().out
        assert printed == (out / "r.txt").read_text()
        report = json.loads((out / "r.json").read_text())
        assert report["count"] == 24 and report["relative"] == "device"
        assert main(["eval", "--data", data, "--ckpt", str(out / "p.ckpt"), "--depth-provider", "none"]) == 0
        assert main(["plot", "--series", str(out / "s.json"), "--out", str(out / "c.png")]) == 0
        assert (out / "c.png").read_bytes()[:4] == b"\x89PNG"

    def test_report_is_repeatable(self, pipeline):
        out, data = pipeline
        for name in ("a", "b"):
            assert main(["eval", "--data", data, "--ckpt", str(out / "p.ckpt"), "--report", str(out / f"{name}.json")]) == 0
        assert (out / "a.json").read_bytes() == (out / "b.json").read_bytes()

    def test_module_entry_point(self):
        done = subprocess.run([sys.executable, "-m", "egostereo", "--help"], capture_output=True, text=True)
        assert done.returncode == 0
        for cmd in ("synth", "train-2d", "train-3d", "eval", "plot", "inspect"):
            assert cmd in done.stdout

import json
import os
import subprocess
import sys

import numpy as np
import pytest

from energygan import formats, report, trainer
from energygan.cli import main
from energygan.energymap import estimate_energy


def synth(out, *extra):
    return main(["synth", "--seed", "5", "--n-base", "4", "--no-augment", "--split", "0.5,0.5",
                 "--out", str(out), *extra])


@pytest.fixture(scope="module")
def raw_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("raw")
    assert synth(root / "ds", "--export-raw", str(root / "raw")) == 0
    return root / "raw"


@pytest.fixture(scope="module")
def trained(tiny_dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = main(["train", "--manifest", tiny_dataset, "--out", str(out), "--epochs", "1", "--batch", "3"])
    assert code == 0
    return out


class TestSynth:
    def test_counts_and_bytes(self, tmp_path, capsys):
        assert synth(tmp_path / "a") == 0
        assert "train 2 test 2" in capsys.readouterr().out
        assert synth(tmp_path / "b") == 0
        a = (tmp_path / "a" / "manifest.json").read_bytes()
        assert a == (tmp_path / "b" / "manifest.json").read_bytes()
        man = json.loads(a)
        for rel in formats.referenced_paths(man):
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    def test_usage_errors(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["synth", "--out", str(tmp_path), "--split", "0.5"])
        assert exc.value.code == 2
        assert main(["synth", "--out", str(tmp_path), "--split", "0.5,0.6"]) == 2
        assert main(["synth", "--out", str(tmp_path), "--food-min", "0"]) == 2

    def test_unwritable_output(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert synth(blocker / "sub") == 3

    def test_module_entry_point(self, tmp_path):
        res = subprocess.run([sys.executable, "-m", "energygan", "synth", "--n-base", "1", "--no-augment",
                              "--split", "1,0", "--out", str(tmp_path)], capture_output=True, text=True)
        assert res.returncode == 0, res.stderr
        assert (tmp_path / "manifest.json").exists()


class TestBuildPairs:
    @pytest.mark.parametrize("mode", ["detect", "sidecar"])
    def test_food_sums(self, raw_dir, tmp_path, mode):
        assert main(["build-pairs", str(raw_dir), "--out", str(tmp_path), "--homography", mode]) == 0
        man = formats.read_manifest(str(tmp_path / "manifest.json"))
        assert len(man["entries"]) == 4 and not man["failures"]
        for e in man["entries"]:
            energy = formats.read_edm(str(tmp_path / e["energy_path"])).astype(np.float64)
            for a in e["annotations"]:
                mask = formats.read_edm(str(tmp_path / a["mask_path"])) > 0.5
                assert energy[mask].sum() == pytest.approx(a["energy_kcal"], rel=1e-6)
            total = sum(a["energy_kcal"] for a in e["annotations"])
            assert estimate_energy(energy) == pytest.approx(total, rel=1e-6)

    def test_identity_override(self, raw_dir, tmp_path):
        assert main(["build-pairs", str(raw_dir), "--out", str(tmp_path), "--homography", "identity"]) == 0
        man = formats.read_manifest(str(tmp_path / "manifest.json"))
        assert all(e["homography"] == np.eye(3).ravel().tolist() for e in man["entries"])

    def test_blank_scene_skipped(self, raw_dir, tmp_path):
        import shutil
        src = tmp_path / "in"
        shutil.copytree(raw_dir, src)
        formats.write_edm(str(src / "scene0001_scene.edm"), np.full((64, 64, 3), 0.5))
        assert main(["build-pairs", str(src), "--out", str(tmp_path / "out")]) == 0
        man = formats.read_manifest(str(tmp_path / "out" / "manifest.json"))
        assert [f["item"] for f in man["failures"]] == ["scene0001"]
        assert len(man["entries"]) == 3

    def test_all_failed(self, raw_dir, tmp_path):
        src = tmp_path / "in"
        src.mkdir()
        meta = json.loads((raw_dir / "scene0000.json").read_text())
        formats.write_edm(str(src / meta["scene"]), np.full((64, 64, 3), 0.5))
        for f in meta["foods"]:
            (src / f["mask"]).write_bytes((raw_dir / f["mask"]).read_bytes())
        (src / "scene0000.json").write_text(json.dumps(meta))
        assert main(["build-pairs", str(src), "--out", str(tmp_path / "out")]) == 1

    def test_empty_input(self, tmp_path):
        assert main(["build-pairs", str(tmp_path), "--out", str(tmp_path / "out")]) == 2


class TestTrainEval:
    def test_zero_epochs(self, tiny_dataset, tmp_path):
        assert main(["train", "--manifest", tiny_dataset, "--out", str(tmp_path), "--epochs", "0"]) == 0
        assert sorted(os.listdir(tmp_path)) == ["ckpt_epoch0000.kckp", "last.kckp", "metrics.csv"]

    def test_bad_hyperparameters(self, tiny_dataset, tmp_path):
        assert main(["train", "--manifest", tiny_dataset, "--out", str(tmp_path), "--beta1", "0.9999"]) == 2

    def test_missing_manifest(self, tmp_path):
        assert main(["train", "--manifest", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 3

    def test_abort_exit_code(self, tiny_dataset, tmp_path, monkeypatch):
        monkeypatch.setattr(trainer, "d_loss_from_scores", lambda a, b: (a.sum() * float("nan")))
        code = main(["train", "--manifest", tiny_dataset, "--out", str(tmp_path), "--epochs", "2"])
        assert code == 4
        assert (tmp_path / "last.kckp").exists()

    def test_eval_rows(self, trained, tiny_dataset, tmp_path, capsys):
        out = tmp_path / "rows.csv"
        code = main(["eval", "--checkpoint", str(trained / "last.kckp"), "--manifest", tiny_dataset,
                     "--split", "train", "--out", str(out)])
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "id,true_kcal,est_kcal,signed_error"
        assert len(lines) - 1 == 6
        assert all(np.isfinite(float(r.split(",")[3])) for r in lines[1:])

    def test_oracle(self, tiny_dataset, tmp_path, capsys):
        out = tmp_path / "rows.csv"
        assert main(["eval", "--oracle", "--manifest", tiny_dataset, "--out", str(out)]) == 0
        assert all(float(r.split(",")[3]) == 0 for r in out.read_text().splitlines()[1:])
        assert "mean_abs 0.000000" in capsys.readouterr().out

    def test_digest_mismatch(self, trained, tmp_path):
        other = tmp_path / "other"
        assert synth(other) == 0
        code = main(["eval", "--checkpoint", str(trained / "last.kckp"),
                     "--manifest", str(other / "manifest.json")])
        assert code == 5

    def test_eval_needs_checkpoint(self, tiny_dataset):
        assert main(["eval", "--manifest", tiny_dataset]) == 2


class TestReport:
    def test_curves(self, trained, tmp_path):
        assert main(["report", str(trained / "metrics.csv"), "--out", str(tmp_path)]) == 0
        assert sorted(os.listdir(tmp_path)) == ["error_curves.png"]

    def test_overlay_labels(self, trained, tmp_path):
        for name in ("unet", "encdec"):
            (tmp_path / f"{name}.csv").write_bytes((trained / "metrics.csv").read_bytes())
        assert report.run_label(str(tmp_path / "unet.csv")) == "unet"
        assert report.run_label(str(trained / "metrics.csv")) == trained.name
        assert main(["report", str(tmp_path / "unet.csv"), str(tmp_path / "encdec.csv"),
                     "--out", str(tmp_path / "r")]) == 0
        assert os.listdir(tmp_path / "r") == ["error_curves.png"]

    def test_triptychs(self, trained, tiny_dataset, tmp_path):
        code = main(["report", str(trained / "metrics.csv"), "--out", str(tmp_path),
                     "--checkpoint", str(trained / "last.kckp"), "--manifest", tiny_dataset, "--samples", "2"])
        assert code == 0
        assert len([f for f in os.listdir(tmp_path) if f.startswith("triptych_")]) == 2

    def test_malformed_csv(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text(",".join(trainer.CSV_COLUMNS) + "\n1,0,0,0,0,0,0\n2,0,0\n")
        assert main(["report", str(bad), "--out", str(tmp_path / "r")]) == 2
        assert "row 3" in capsys.readouterr().err


class TestHeatmaps:
    def test_identical_panels(self):
        rng = np.random.default_rng(0)
        truth = rng.uniform(0, 3, (16, 16))
        img = report.triptych(rng.uniform(0, 1, (16, 16, 3)), truth, truth.copy(), 3.0)
        _, mid, right = report.panel_slices(16)
        assert np.array_equal(img[:, mid], img[:, right])
        assert img.shape == (64, 3 * 64 + 2 * report.GUTTER, 3)

    def test_lut_fixed(self):
        lut = report.heat_lut()
        assert lut.shape == (256, 3) and tuple(lut[0]) == (0, 0, 0) and tuple(lut[-1]) == (255, 255, 230)
        assert np.array_equal(report.heatmap(np.array([[0.0, 10.0]]), 5.0)[0], lut[[0, 255]])

    def test_png_bytes_reproducible(self, tmp_path):
        img = report.triptych(np.zeros((8, 8, 3)), np.ones((8, 8)), np.zeros((8, 8)), 2.0)
        report.save_png(str(tmp_path / "a.png"), img)
        report.save_png(str(tmp_path / "b.png"), img)
        assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()

import os

import numpy as np
import pandas as pd
import pytest

from perimkit import io
from perimkit.cli import main
from perimkit.config import SynthConfig
from perimkit.models import Perimeter, PointCloud
from perimkit.pipeline import generate_dataset

RANSAC_FLAGS = ["--cluster-method", "ransac", "--workers", "1"]


@pytest.fixture
def scene_dir(tmp_path):
    directory = tmp_path / "scenes"
    generate_dataset(SynthConfig(noise_sigma=0.0, hole_count_range=(0, 0), seed=4), str(directory), 1,
                     shape="Rectangle")
    return directory


class TestGen:
    def test_writes_scenes(self, tmp_path, capsys):
        out = tmp_path / "gen"
        assert main(["gen", str(out), "--count", "2", "--noise-sigma", "0", "--hole-count-range", "0 0"]) == 0
        assert sorted(os.listdir(out)) == ["scene_000.ply", "scene_000_gt.txt", "scene_001.ply", "scene_001_gt.txt"]
        assert capsys.readouterr().out.count("Saved:") == 2

    def test_frames(self, tmp_path):
        out = tmp_path / "frames"
        assert main(["gen", str(out), "--frames", "3", "--shape", "L"]) == 0
        frames, gt = io.read_frames(str(out / "scene_000"))
        assert len(frames) == 3 and len(gt.corners) == 6

    def test_seed_from_environment(self, tmp_path, monkeypatch):
        contents = {}
        for name, seed in (("a", "5"), ("b", "5"), ("c", "6")):
            monkeypatch.setenv("PERIMKIT_SEED", seed)
            assert main(["gen", str(tmp_path / name)]) == 0
            contents[name] = (tmp_path / name / "scene_000.ply").read_bytes()
        assert contents["a"] == contents["b"]
        assert contents["a"] != contents["c"]

    def test_explicit_seed_beats_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv("PERIMKIT_SEED", "5")
        main(["gen", str(tmp_path / "env")])
        main(["gen", str(tmp_path / "flag"), "--seed", "6"])
        monkeypatch.setenv("PERIMKIT_SEED", "6")
        main(["gen", str(tmp_path / "six")])
        assert (tmp_path / "flag" / "scene_000.ply").read_bytes() == (tmp_path / "six" / "scene_000.ply").read_bytes()


class TestStages:
    def test_cull(self, scene_dir, tmp_path, capsys):
        out = tmp_path / "culled.ply"
        assert main(["cull", str(scene_dir / "scene_000.ply"), str(out)]) == 0
        assert len(io.read_ply(str(out))) > 0
        assert "kept" in capsys.readouterr().out

    @pytest.mark.parametrize("flags", [RANSAC_FLAGS, []], ids=["ransac", "optimizer"])
    def test_cluster_then_fit(self, scene_dir, tmp_path, flags):
        labeled, perimeter = tmp_path / "labels.ply", tmp_path / "perimeter.txt"
        assert main(["cluster", str(scene_dir / "scene_000.ply"), str(labeled)] + flags) == 0
        assert io.read_ply(str(labeled)).labels is not None
        assert main(["fit", str(labeled), str(perimeter)]) == 0
        corners = io.read_perimeter(str(perimeter)).corners
        gt = io.read_perimeter(str(scene_dir / "scene_000_gt.txt")).corners
        assert len(corners) == 4
        assert np.max(np.min(np.linalg.norm(corners[:, None] - gt[None], axis=2), axis=0)) <= 1e-6

    def test_fit_needs_labels(self, tmp_path, capsys):
        path = tmp_path / "bare.ply"
        io.write_ply(str(path), PointCloud(points=[(0, 0, 0), (1, 0, 0), (0, 1, 0)]))
        assert main(["fit", str(path), str(tmp_path / "out.txt")]) == 1
        assert "no label property" in capsys.readouterr().err

    def test_eval_writes_a_row(self, tmp_path, capsys):
        io.write_perimeter(str(tmp_path / "pred.txt"), Perimeter(corners=[(0.1, 0), (1.1, 0), (1.1, 1), (0.1, 1)]))
        io.write_perimeter(str(tmp_path / "gt.txt"), Perimeter(corners=[(0, 0), (1, 0), (1, 1), (0, 1)]))
        csv = tmp_path / "row.csv"
        assert main(["eval", str(tmp_path / "pred.txt"), str(tmp_path / "gt.txt"), "--output", str(csv)]) == 0
        row = pd.read_csv(csv).iloc[0]
        assert row["scene_id"] == "pred"
        assert row["corner_error_m"] == pytest.approx(0.1)
        assert "iou2d=" in capsys.readouterr().out

    def test_render(self, tmp_path):
        io.write_perimeter(str(tmp_path / "p.txt"), Perimeter(corners=[(0, 0), (4, 0), (4, 3), (0, 3)]))
        out = tmp_path / "p.svg"
        assert main(["render", str(tmp_path / "p.txt"), str(out), "--gt", str(tmp_path / "p.txt")]) == 0
        assert "<svg" in out.read_text()


class TestRuns:
    def test_pipeline(self, scene_dir, tmp_path, capsys):
        out = tmp_path / "out"
        assert main(["pipeline", str(scene_dir), "--out", str(out), "--skip-alpha"] + RANSAC_FLAGS) == 0
        printed = capsys.readouterr().out
        assert "scene_000: 4 corners" in printed
        for suffix in ("_culled.ply", "_labels.ply", "_perimeter.txt", ".svg", ".csv"):
            assert (out / f"scene_000{suffix}").exists()

    def test_ablate(self, scene_dir, tmp_path):
        out, plot = tmp_path / "ablation", tmp_path / "ablation.png"
        argv = ["ablate", str(scene_dir), "--out", str(out), "--variants", "baseline", "no-alpha",
                "--strides", "1", "--plot", str(plot)] + RANSAC_FLAGS
        assert main(argv) == 0
        table = pd.read_csv(out / "ablation.csv")
        assert sorted(table["variant"]) == ["baseline", "no-alpha"]
        assert plot.exists()


class TestErrors:
    def test_missing_input(self, tmp_path, capsys):
        assert main(["pipeline", str(tmp_path / "nope"), "--out", str(tmp_path)]) == 1
        err = capsys.readouterr().err
        assert err.startswith("error:") and "nope" in err

    def test_unknown_config_key(self, scene_dir, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("alpha = 0.5\nbogus = 1\n")
        assert main(["pipeline", str(scene_dir), "--out", str(tmp_path), "--config", str(cfg)]) == 1
        assert "bogus" in capsys.readouterr().err

    def test_invalid_value(self, scene_dir, tmp_path, capsys):
        assert main(["pipeline", str(scene_dir), "--out", str(tmp_path), "--alpha", "-1"]) == 1
        assert "alpha" in capsys.readouterr().err

    def test_config_file_values_apply(self, scene_dir, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# oracle run\ncluster_method = ransac\nuse_alpha = false\nn_points = 4000\n"
                       "ransac_min_inliers = 20\nworkers = 1\n")
        assert main(["pipeline", str(scene_dir), "--out", str(tmp_path / "out"), "--config", str(cfg)]) == 0

"""End-to-end runs through the command-line entry point."""
import json
import os
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from soglab.circles import Trajectory, save_trajectories
from soglab.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, derived_seed, main
from soglab.io import atomic_write_text, csv_text
from soglab.svg import PALETTE

SMALL_TOY = """experiment = toy-em
seed = 0
toy.n = 300
em.epochs = 20
"""


def write_cfg(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


class TestRun:
    def test_toy_em_outputs(self, tmp_path):
        out = tmp_path / "a"
        assert main(["run", write_cfg(tmp_path, SMALL_TOY), "--out", str(out)]) == EXIT_OK
        for name in ("config.resolved", "metrics.csv", "summary.json", "loss_curves.svg", "onehotness.svg"):
            assert (out / name).exists()
        summary = json.loads((out / "summary.json").read_text())
        assert [m["method"] for m in summary["methods"]] == ["soft-em", "soft-em", "hard-em", "sog"]
        assert not (out / "failure.json").exists()

    def test_byte_identical_reruns(self, tmp_path):
        cfg = write_cfg(tmp_path, SMALL_TOY)
        main(["run", cfg, "--out", str(tmp_path / "a")])
        main(["run", cfg, "--out", str(tmp_path / "b")])
        for name in ("metrics.csv", "summary.json", "loss_curves.svg"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_resolved_snapshot_reproduces(self, tmp_path):
        main(["run", write_cfg(tmp_path, SMALL_TOY), "--out", str(tmp_path / "a")])
        snapshot = str(tmp_path / "a" / "config.resolved")
        assert main(["run", snapshot, "--out", str(tmp_path / "b")]) == EXIT_OK
        assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()

    def test_seed_override(self, tmp_path):
        cfg = write_cfg(tmp_path, SMALL_TOY)
        main(["run", cfg, "--out", str(tmp_path / "a"), "--seed", "4"])
        assert "seed = 4" in (tmp_path / "a" / "config.resolved").read_text().splitlines()
        main(["run", cfg, "--out", str(tmp_path / "b")])
        assert (tmp_path / "a" / "metrics.csv").read_bytes() != (tmp_path / "b" / "metrics.csv").read_bytes()

    def test_default_output_directory(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        assert main(["run", write_cfg(tmp_path, SMALL_TOY)]) == EXIT_OK
        assert (tmp_path / "runs" / "toy-em-seed0" / "summary.json").exists()

    def test_unknown_key_exit_code(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, SMALL_TOY + "em.bogus = 1\n")
        assert main(["run", cfg, "--out", str(tmp_path / "a")]) == EXIT_CONFIG
        assert "run.cfg:5: unknown key 'em.bogus'" in capsys.readouterr().err
        assert not (tmp_path / "a").exists()

    def test_bad_seed_and_jobs(self, tmp_path):
        cfg = write_cfg(tmp_path, SMALL_TOY)
        assert main(["run", cfg, "--seed", "-1", "--out", str(tmp_path / "a")]) == EXIT_CONFIG
        assert main(["run", cfg, "--jobs", "0", "--out", str(tmp_path / "a")]) == EXIT_CONFIG

    def test_bad_expert_file(self, tmp_path, capsys):
        bad = tmp_path / "bad.jsonl"
        bad.write_text(json.dumps({"latent": [1, 0, 0], "states": []}) + "\n")
        cfg = write_cfg(tmp_path, f"experiment = sog-bc\nseed = 0\nexpert.file = {bad}\n")
        assert main(["run", cfg, "--out", str(tmp_path / "a")]) == EXIT_CONFIG
        assert "record 0: missing key 'actions'" in capsys.readouterr().err

    def test_divergence_writes_failure_record(self, tmp_path):
        text = (
            "experiment = sog-bc\nseed = 0\nenv.episode_length = 50\nexpert.per_mode = 1\n"
            "bc.iterations = 50\nbc.learning_rate = 1e6\npolicy.hidden = 8, 8\n"
        )
        out = tmp_path / "a"
        assert main(["run", write_cfg(tmp_path, text), "--out", str(out)]) == EXIT_RUNTIME
        rec = json.loads((out / "failure.json").read_text())
        assert rec["error"] == "RunFailure"
        assert rec["iteration"] >= 1
        assert rec["traceback"]

    def test_eval_checkpoint_required(self, tmp_path):
        cfg = write_cfg(tmp_path, "experiment = eval\nseed = 0\neval.policy = checkpoint\n")
        assert main(["run", cfg, "--out", str(tmp_path / "a")]) == EXIT_CONFIG
        assert (tmp_path / "a" / "failure.json").exists()

    def test_missing_config_file(self, tmp_path):
        assert main(["run", str(tmp_path / "none.cfg")]) == EXIT_CONFIG


class TestPlot:
    def test_empty_file_gives_valid_svg(self, tmp_path):
        src = tmp_path / "t.jsonl"
        src.write_text("")
        out = tmp_path / "t.svg"
        assert main(["plot", str(src), "--out", str(out)]) == EXIT_OK
        root = ET.fromstring(out.read_text())
        assert root.tag.endswith("svg")

    def test_single_points_become_markers(self, tmp_path):
        trajs = [
            Trajectory(np.zeros((0, 10)), np.zeros((0, 2)), np.eye(3)[i], final_state=np.full(10, 0.1 * i))
            for i in range(3)
        ]
        src = save_trajectories(tmp_path / "t.jsonl", trajs)
        out = tmp_path / "t.svg"
        assert main(["plot", str(src), "--out", str(out)]) == EXIT_OK
        ns = "{http://www.w3.org/2000/svg}"
        markers = [c for c in ET.fromstring(out.read_text()).iter(ns + "circle") if c.get("r") == "3"]
        assert len(markers) == 3
        assert [m.get("fill") for m in markers] == list(PALETTE[:3])

    def test_malformed_file(self, tmp_path, capsys):
        src = tmp_path / "t.jsonl"
        src.write_text("{not json}\n")
        assert main(["plot", str(src), "--out", str(tmp_path / "t.svg")]) == EXIT_CONFIG
        assert "record 0" in capsys.readouterr().err
        assert not (tmp_path / "t.svg").exists()


class TestOutputHelpers:
    def test_atomic_write_leaves_no_temp_files(self, tmp_path):
        p = atomic_write_text(tmp_path / "sub" / "f.txt", "hello")
        assert p.read_text() == "hello"
        atomic_write_text(p, "again")
        assert p.read_text() == "again"
        assert os.listdir(p.parent) == ["f.txt"]

    def test_atomic_write_keeps_old_file_on_error(self, tmp_path):
        p = atomic_write_text(tmp_path / "f.txt", "old")
        with pytest.raises(TypeError):
            atomic_write_text(p, None)
        assert p.read_text() == "old"
        assert os.listdir(tmp_path) == ["f.txt"]

    def test_csv_number_formatting(self):
        text = csv_text(("a", "b", "c"), [(np.float64(0.1), np.int64(3), np.bool_(True))])
        assert text == "a,b,c\n0.1,3,true\n"

    def test_derived_seeds_distinct_and_stable(self):
        seeds = [derived_seed(0, i) for i in range(5)]
        assert len(set(seeds)) == 5
        assert seeds == [derived_seed(0, i) for i in range(5)]
        assert derived_seed(1, 0) != seeds[0]

"""
End-to-end tests of the command-line front end
"""
import json

import numpy as np
import pandas as pd
import pytest

from billiard_lab import __version__
from billiard_lab.cli import build_parser, main
from billiard_lab.io.csv_export import read_metadata
from billiard_lab.io.scene_file import dump_scene, two_spheres

PAIR_LAMBDA = (5.0 - 2.0 * np.sqrt(6.0)) ** 2


def read_frame(path):
    return pd.read_csv(path, comment="#")


class TestSceneCheck:
    def test_triangle_passes(self, capsys):
        assert main(["scene-check", "--preset", "equilateral_spheres"]) == 0
        assert "pass (margin" in capsys.readouterr().out

    def test_eclipse_fails(self, capsys):
        assert main(["scene-check", "--preset", "eclipsing_triple"]) == 1
        assert "FAIL" in capsys.readouterr().out

    def test_pair_is_vacuous(self, capsys, tmp_path):
        out = tmp_path / "check.json"
        assert main(["scene-check", "--preset", "two_spheres", "--out", str(out)]) == 0
        assert "vacuous" in capsys.readouterr().out
        report = json.loads(out.read_text())
        assert report["vacuous"] and report["passed"]
        assert report["d_min"] == pytest.approx(4.0)

    def test_scene_file(self, tmp_path):
        path = tmp_path / "pair.json"
        dump_scene(two_spheres(), path)
        assert main(["scene-check", "--scene", str(path)]) == 0


class TestOrbits:
    def test_pair_table(self, tmp_path):
        out = tmp_path / "orbits.csv"
        assert main(["orbits", "--preset", "two_spheres", "--max-len", "4", "--out", str(out)]) == 0
        frame = read_frame(out)
        assert len(frame) == 1
        assert frame["d_gamma"][0] == pytest.approx(8.0)

    def test_triangle_table(self, tmp_path):
        out = tmp_path / "orbits.csv"
        assert main(["orbits", "--preset", "equilateral_spheres", "--max-len", "3", "--out", str(out)]) == 0
        assert len(read_frame(out)) == 5

    def test_length_one_is_empty(self, tmp_path):
        out = tmp_path / "orbits.csv"
        assert main(["orbits", "--preset", "equilateral_spheres", "--max-len", "1", "--out", str(out)]) == 0
        assert len(read_frame(out)) == 0

    def test_byte_identical_reruns(self, tmp_path):
        first, second = tmp_path / "a.csv", tmp_path / "b.csv"
        args = ["orbits", "--preset", "equilateral_spheres", "--max-len", "4"]
        assert main(args + ["--out", str(first)]) == 0
        assert main(args + ["--out", str(second), "--workers", "3"]) == 0
        assert first.read_bytes() == second.read_bytes()
        meta = read_metadata(first)
        assert meta["billiard_lab"] == __version__
        assert json.loads(meta["config"])["max_word_len"] == 4

    def test_stdout(self, capsys):
        assert main(["orbits", "--preset", "two_spheres", "--max-len", "2"]) == 0
        out = capsys.readouterr().out
        assert out.startswith("# billiard_lab")
        assert "1-2" in out

    def test_failures_sidecar(self, tmp_path):
        out = tmp_path / "orbits.csv"
        assert main(["orbits", "--preset", "eclipsing_triple", "--max-len", "2", "--out", str(out)]) == 0
        sidecar = out.with_suffix(".failures.log")
        assert sidecar.exists()
        assert "1-2" in sidecar.read_text()


class TestIkawa:
    def test_triangle_outputs(self, tmp_path):
        out = tmp_path / "ikawa.csv"
        assert main(["ikawa", "--preset", "equilateral_spheres", "--max-len", "6", "--out", str(out)]) == 0
        frame = read_frame(out)
        assert list(frame["k"]) == [1, 2, 3, 4, 5, 6]
        report = json.loads(out.with_suffix(".json").read_text())
        assert report["verdict"] == "converges"
        assert "verdict: converges" in out.with_suffix(".txt").read_text()

    def test_text_to_stdout(self, capsys):
        assert main(["ikawa", "--preset", "two_spheres", "--max-len", "4"]) == 0
        assert "verdict: converges" in capsys.readouterr().out

    def test_too_few_shells(self):
        assert main(["ikawa", "--preset", "two_spheres", "--max-len", "2"]) == 2


class TestDecay:
    ARGS = ["decay", "--preset", "two_spheres", "--max-len", "4", "--t-max", "40"]

    def test_pair_outputs(self, tmp_path):
        out = tmp_path / "decay.csv"
        assert main(self.ARGS + ["--out", str(out)]) == 0
        frame = read_frame(out)
        assert list(frame.columns) == ["t", "D", "active_story_count"]
        assert len(frame) == 400
        summary = json.loads(read_metadata(out)["decay"])
        assert summary["mu"] == pytest.approx(abs(np.log(PAIR_LAMBDA)) / 8.0, rel=0.02)
        assert summary["flags"] == []
        assert json.loads(out.with_suffix(".json").read_text()) == summary

    def test_byte_identical_reruns(self, tmp_path):
        first, second = tmp_path / "a.csv", tmp_path / "b.csv"
        assert main(self.ARGS + ["--out", str(first)]) == 0
        assert main(self.ARGS + ["--out", str(second)]) == 0
        assert first.read_bytes() == second.read_bytes()
        assert first.with_suffix(".json").read_bytes() == second.with_suffix(".json").read_bytes()

    def test_story_series(self, capsys):
        assert main(self.ARGS + ["--series", "story"]) == 0
        header = [line for line in capsys.readouterr().out.splitlines() if line.startswith("# decay ")]
        assert json.loads(header[0][len("# decay "):])["series"] == "story"

    def test_short_table_is_flagged(self, tmp_path):
        out = tmp_path / "decay.csv"
        args = ["decay", "--preset", "equilateral_spheres", "--max-len", "4", "--t-max", "20"]
        assert main(args + ["--out", str(out)]) == 0
        summary = json.loads(out.with_suffix(".json").read_text())
        assert "orbit table incomplete" in summary["flags"]
        assert summary["mu"] > 0.0

    def test_empty_table(self):
        assert main(["decay", "--preset", "equilateral_spheres", "--max-len", "1"]) == 2


class TestSweeps:
    ARGS = ["probe", "--preset", "equilateral_spheres", "--seed", "3"]

    def test_tangency(self, tmp_path):
        out = tmp_path / "tangency.csv"
        assert main(self.ARGS + ["--probe", "tangency", "--samples", "50", "--out", str(out)]) == 0
        frame = read_frame(out)
        assert list(frame.columns) == ["sample", "crossings"]
        assert len(frame) == 50
        assert frame["crossings"].max() <= 2

    def test_divergence(self, tmp_path):
        out = tmp_path / "divergence.csv"
        args = ["--probe", "divergence", "--samples", "40", "--time", "5", "--out", str(out)]
        assert main(self.ARGS + args) == 0
        frame = read_frame(out)
        assert list(frame.columns) == ["sample", "initial_distance", "t_prime", "distance", "flagged"]
        assert len(frame) == 40

    def test_trapped(self, tmp_path):
        out = tmp_path / "trapped.csv"
        args = ["--probe", "trapped", "--samples", "100", "--t-max", "10", "--out", str(out)]
        assert main(self.ARGS + args) == 0
        frame = read_frame(out)
        assert list(frame.columns) == ["T", "trapped", "fraction"]
        assert len(frame) == 9
        assert frame["fraction"].iloc[0] == 1.0
        assert frame["fraction"].is_monotonic_decreasing


class TestTrace:
    def test_axis_trace(self, tmp_path):
        out = tmp_path / "trace.csv"
        code = main(["trace", "--preset", "two_spheres", "--pos", "3,0,0", "--dir", "1,0,0",
                     "--time", "9", "--out", str(out)])
        assert code == 0
        frame = read_frame(out)
        assert list(frame["obstacle"]) == [2, 1]
        assert list(frame["time"]) == pytest.approx([2.0, 6.0])


class TestInputErrors:
    def test_unknown_preset(self):
        assert main(["orbits", "--preset", "hexagon"]) == 2

    def test_bad_preset_parameter(self):
        assert main(["orbits", "--preset", "two_spheres:wide"]) == 2

    def test_bad_config(self):
        assert main(["decay", "--preset", "two_spheres", "--t-step", "-1"]) == 2

    def test_missing_scene_file(self, tmp_path):
        assert main(["scene-check", "--scene", str(tmp_path / "missing.json")]) == 2

    def test_scene_and_preset_exclusive(self):
        with pytest.raises(SystemExit) as info:
            build_parser().parse_args(["orbits", "--preset", "two_spheres", "--scene", "x.json"])
        assert info.value.code == 2

    def test_bad_vector(self):
        with pytest.raises(SystemExit):
            main(["trace", "--preset", "two_spheres", "--pos", "1,2"])

import csv
import io

import numpy as np
import pytest
from click.testing import CliRunner

from deepthin.cli import main, read_shapes_file
from deepthin.core import matmul
from deepthin.factor import decompress
from deepthin.model_io import load_model
from deepthin.planner import plan_layer


@pytest.fixture
def runner():
    return CliRunner()


def write_shapes(tmp_path, text):
    path = tmp_path / "shapes.txt"
    path.write_text(text)
    return str(path)


class TestShapesFile:
    def test_parses_triples_and_comments(self, tmp_path):
        path = write_shapes(tmp_path, "# comment\nfc1 2048 2048\nfc2 64 64  # inline\n\n")
        assert read_shapes_file(path) == [("fc1", 2048, 2048), ("fc2", 64, 64)]

    def test_malformed_line_reports_line_number(self, runner, tmp_path):
        path = write_shapes(tmp_path, "ok 4 4\nbroken 4\n")
        result = runner.invoke(main, ["plan", path, "--ratio", "0.5"])
        assert result.exit_code == 1
        assert ":2:" in result.output

    def test_non_integer_dims(self, runner, tmp_path):
        path = write_shapes(tmp_path, "w 4 x\n")
        result = runner.invoke(main, ["plan", path, "--ratio", "0.5"])
        assert result.exit_code == 1


class TestPlan:
    def test_single_matrix_matches_library(self, runner, tmp_path):
        path = write_shapes(tmp_path, "fc 2048 2048\n")
        result = runner.invoke(main, ["plan", path, "--ratio", "0.01"])
        assert result.exit_code == 0
        plan = plan_layer(2048, 2048, 1, 0.01)
        row = next(line for line in result.output.splitlines() if line.startswith("fc"))
        fields = row.split()
        assert int(fields[3]) == plan.m and int(fields[4]) == plan.n

    def test_generous_ratio_small_n(self, runner, tmp_path):
        path = write_shapes(tmp_path, "fc 256 256\n")
        result = runner.invoke(main, ["plan", path, "--ratio", "0.9"])
        assert result.exit_code == 0
        row = next(line for line in result.output.splitlines() if line.startswith("fc"))
        assert int(row.split()[4]) < 10

    def test_hopeless_ratio_exits_2_with_bounds(self, runner, tmp_path):
        path = write_shapes(tmp_path, "fc 2048 2048\n")
        result = runner.invoke(main, ["plan", path, "--ratio", "0.000001"])
        assert result.exit_code == 2
        assert "lower bound" in result.output


class TestCompressDecompress:
    def test_compress_then_decompress_round_trip(self, runner, tmp_path):
        shapes = write_shapes(tmp_path, "a 40 30\nb 24 24\n")
        model_path = str(tmp_path / "model.dthn")
        result = runner.invoke(main, ["compress", shapes, "--ratio", "0.3",
                                      "--seed", "3", "-o", model_path])
        assert result.exit_code == 0, result.output

        model = load_model(model_path)
        assert model.layer_names == ["a", "b"]
        assert model.metadata["seed"] == "3"

        out_path = str(tmp_path / "dense.npz")
        result = runner.invoke(main, ["decompress", model_path, "-o", out_path])
        assert result.exit_code == 0
        arrays = np.load(out_path)
        assert np.array_equal(arrays["a"], decompress(model.factors[0]))
        assert arrays["a__bias"].shape == (30,)

    def test_compress_infeasible_exits_2(self, runner, tmp_path):
        shapes = write_shapes(tmp_path, "tiny 8 8\n")
        result = runner.invoke(main, ["compress", shapes, "--ratio", "0.01",
                                      "-o", str(tmp_path / "x.dthn")])
        assert result.exit_code == 2

    def test_decompress_rejects_garbage(self, runner, tmp_path):
        bad = tmp_path / "bad.dthn"
        bad.write_bytes(b"not a model at all")
        result = runner.invoke(main, ["decompress", str(bad), "-o", str(tmp_path / "o.npz")])
        assert result.exit_code == 1


class TestBench:
    def test_csv_structure_and_instrumentation(self, runner):
        result = runner.invoke(main, [
            "bench", "--q", "128", "--r", "128", "--ratio", "0.1",
            "--ratio", "0.05", "--batch", "2", "--repeat", "2"])
        assert result.exit_code == 0, result.output
        rows = list(csv.DictReader(io.StringIO(result.output)))
        assert len(rows) == 2
        for row in rows:
            assert int(row["multiplies_fused"]) < int(row["multiplies_dense"]) * 2
            assert int(row["reuse_hits"]) > 0
            assert float(row["fused_ms"]) > 0

    def test_default_ratio_grid_granularity(self):
        from deepthin.cli import BENCH_RATIOS

        # the default grid must include the fine-grained 0.0040 point where
        # reuse-driven speedups typically crest
        assert 0.0040 in BENCH_RATIOS


class TestTrainCommand:
    def test_emits_history_csv(self, runner):
        result = runner.invoke(main, [
            "train", "--task", "spiral_classification", "--method", "dense",
            "--ratio", "1.0", "--epochs", "2", "--seed", "1"])
        assert result.exit_code == 0, result.output
        rows = list(csv.DictReader(io.StringIO(result.output)))
        assert [r["epoch"] for r in rows] == ["1", "2"]
        assert all(float(r["val_loss"]) > 0 for r in rows)

    def test_deterministic_output(self, runner):
        args = ["train", "--task", "spiral_classification", "--method", "deepthin",
                "--ratio", "0.05", "--epochs", "2", "--seed", "7"]
        a = runner.invoke(main, args)
        b = runner.invoke(main, args)
        assert a.output == b.output

    def test_infeasible_exits_2(self, runner):
        result = runner.invoke(main, [
            "train", "--task", "spiral_classification", "--method", "rank_fact",
            "--ratio", "0.005", "--epochs", "1"])
        assert result.exit_code == 2


class TestCompare:
    def test_grid_with_skips(self, runner):
        result = runner.invoke(main, [
            "compare", "--task", "spiral_classification",
            "--method", "deepthin", "--method", "rank_fact", "--method", "dense",
            "--ratio", "0.04", "--ratio", "0.01", "--seeds", "1", "--epochs", "1"])
        assert result.exit_code == 0, result.output
        rows = list(csv.DictReader(io.StringIO(result.output)))
        # 2 ratios x (deepthin, rank_fact) + 1 dense row
        assert len(rows) == 5
        skipped = [r for r in rows if r["note"].startswith("skipped")]
        assert any(r["method"] == "rank_fact" and r["ratio"] == "0.01" for r in skipped)
        dense_rows = [r for r in rows if r["method"] == "dense"]
        assert len(dense_rows) == 1 and dense_rows[0]["ratio"] == "1.0"


class TestCheckGrad:
    def test_passes_on_default_instance(self, runner):
        result = runner.invoke(main, ["check-grad"])
        assert result.exit_code == 0, result.output
        assert "PASS" in result.output

    def test_rank3(self, runner):
        result = runner.invoke(main, ["check-grad", "--rank", "3", "--loss",
                                      "softmax_cross_entropy"])
        assert result.exit_code == 0, result.output

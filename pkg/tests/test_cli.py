"""End-to-end tests of the command line."""

import csv
from pathlib import Path

import numpy as np
import pytest

from aind_compressed_regularization import __version__
from aind_compressed_regularization.scripts.cli import (
    EXIT_FORMAT,
    EXIT_NUMERIC,
    EXIT_OK,
    EXIT_USAGE,
    load_operator,
    main,
)
from aind_compressed_regularization.sidecar import RunManifest
from aind_compressed_regularization.sparse_core import SparseMatrix, read_vector, write_sparse, write_vector


@pytest.fixture
def problem(tmp_path: Path) -> Path:
    """Directory holding a generated 40x64 kernel problem."""
    out = tmp_path / "problem"
    assert main(["gen", "--rows", "40", "--grid", "8", "8", "--noise", "0.01", "--out", str(out)]) == EXIT_OK
    return out


@pytest.fixture
def compressed(problem: Path) -> Path:
    """SPC1 file of the generated matrix."""
    out = problem / "matrix.spc"
    assert main(["compress", "--matrix", str(problem / "matrix.spr"), "--out", str(out)]) == EXIT_OK
    return out


@pytest.fixture
def factors(compressed: Path) -> Path:
    """Rank-6 factors of the compressed operator."""
    out = compressed.parent / "factors.lrk"
    assert main(["svd", "--matrix", str(compressed), "--out", str(out), "--k", "6"]) == EXIT_OK
    return out


class TestPipeline:
    """Test gen, compress, svd, solve, validate and bench chained together."""

    def test_gen_outputs(self, problem: Path) -> None:
        """Test gen writes the matrix, model, rhs and a manifest."""
        a = load_operator(problem / "matrix.spr")
        assert isinstance(a, SparseMatrix)
        assert a.shape == (40, 64)
        assert read_vector(problem / "model.vec").shape == (64,)
        assert read_vector(problem / "rhs.vec").shape == (40,)
        manifest = RunManifest.from_text((problem / "matrix.manifest").read_text())
        assert manifest.command == "gen"
        assert manifest.version == __version__
        assert manifest.seed == 0
        assert manifest.parameters["noise"] == "0.01"
        assert manifest.outputs["matrix"] == str(problem / "matrix.spr")

    def test_compress_prints_report(self, problem: Path, capsys: pytest.CaptureFixture[str]) -> None:
        """Test compress reports sizes and errors."""
        out = problem / "matrix.spc"
        assert main(["compress", "--matrix", str(problem / "matrix.spr"), "--out", str(out)]) == EXIT_OK
        text = capsys.readouterr().out
        assert "bytes:" in text
        assert "row reconstruction error" in text
        assert load_operator(out).shape == (40, 64)

    def test_streamed_compress_matches(self, problem: Path, capsys: pytest.CaptureFixture[str]) -> None:
        """Test compressing in row blocks writes the same file and report."""
        matrix = str(problem / "matrix.spr")
        whole, streamed = problem / "whole.spc", problem / "streamed.spc"
        capsys.readouterr()
        assert main(["compress", "--matrix", matrix, "--out", str(whole)]) == EXIT_OK
        whole_report = capsys.readouterr().out
        assert main(["compress", "--matrix", matrix, "--out", str(streamed), "--block-rows", "7"]) == EXIT_OK
        assert streamed.read_bytes() == whole.read_bytes()
        assert capsys.readouterr().out == whole_report

    def test_schemes_agree(self, problem: Path, compressed: Path, factors: Path) -> None:
        """Test x1 by CG and x3 by the reduced solve give the same solution."""
        solutions = {}
        for scheme in ("x1", "x3"):
            out = problem / f"{scheme}.vec"
            args = ["solve", "--scheme", scheme, "--factors", str(factors), "--matrix", str(compressed)]
            args += ["--rhs", str(problem / "rhs.vec"), "--out", str(out), "--lambda1", "10", "--tol", "1e-13"]
            assert main(args) == EXIT_OK
            assert out.with_suffix(".csv").exists()
            assert out.with_suffix(".manifest").exists()
            solutions[scheme] = read_vector(out)
        np.testing.assert_allclose(solutions["x1"], solutions["x3"], rtol=1e-7, atol=1e-12)

    def test_solve_history(self, problem: Path) -> None:
        """Test the exact solve records a history with a manifest."""
        out = problem / "true.vec"
        args = ["solve", "--scheme", "true", "--matrix", str(problem / "matrix.spr"), "--rhs", str(problem / "rhs.vec")]
        args += ["--out", str(out), "--lambda1", "1", "--lambda2", "0.1", "--grid", "8", "8"]
        assert main(args) == EXIT_OK
        with open(out.with_suffix(".csv"), newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["iteration", "norm", "chi2", "cg_residual"]
        assert len(rows) > 1
        manifest = RunManifest.from_text(out.with_suffix(".manifest").read_text())
        assert manifest.parameters["scheme"] == "true"
        assert manifest.parameters["grid"] == "8 8"
        assert manifest.inputs["rhs"] == str(problem / "rhs.vec")

    def test_validate_passes(self, problem: Path, factors: Path, capsys: pytest.CaptureFixture[str]) -> None:
        """Test the validation suite passes on a generated instance."""
        out = problem / "checks.csv"
        args = ["validate", "--matrix", str(problem / "matrix.spr"), "--rhs", str(problem / "rhs.vec")]
        args += ["--factors", str(factors), "--lambda", "1", "--out", str(out)]
        assert main(args) == EXIT_OK
        assert "FAIL" not in capsys.readouterr().out
        with open(out, newline="") as fh:
            rows = list(csv.reader(fh))
        assert {row[3] for row in rows[1:]} == {"true"}

    def test_validate_failure(self, problem: Path, factors: Path) -> None:
        """Test an unreachable tolerance fails validation with exit code 3."""
        args = ["validate", "--matrix", str(problem / "matrix.spr"), "--rhs", str(problem / "rhs.vec")]
        args += ["--factors", str(factors), "--tol", "1e-30", "--out", str(problem / "checks.csv")]
        assert main(args) == EXIT_NUMERIC

    def test_bench(self, problem: Path, compressed: Path, capsys: pytest.CaptureFixture[str]) -> None:
        """Test error table, timings and a checkerboard sweep."""
        out = problem / "errors.csv"
        args = ["bench", "--matrix", str(problem / "matrix.spr"), "--approx", str(compressed), "--out", str(out)]
        args += ["--trials", "3", "--repeats", "1", "--cell-sizes", "2", "4", "--grid", "8", "8"]
        assert main(args) == EXIT_OK
        text = capsys.readouterr().out
        assert "A^TAx" in text
        assert "correlation" in text
        with open(out, newline="") as fh:
            assert len(list(csv.reader(fh))) == 4


class TestReproducibility:
    """Test that the seed fixes every output."""

    def test_same_seed_same_bytes(self, tmp_path: Path) -> None:
        """Test two runs with one seed write identical files."""
        outputs = []
        for run in ("a", "b"):
            out = tmp_path / run
            args = ["gen", "--rows", "20", "--grid", "4", "8", "--noise", "0.1", "--seed", "7", "--out", str(out)]
            assert main(args) == EXIT_OK
            lrk = out / "f.lrk"
            args = ["svd", "--matrix", str(out / "matrix.spr"), "--out", str(lrk), "--k", "3", "--seed", "7"]
            assert main(args) == EXIT_OK
            outputs.append([(out / name).read_bytes() for name in ("matrix.spr", "rhs.vec", "f.lrk")])
        assert outputs[0] == outputs[1]

    def test_seed_changes_problem(self, tmp_path: Path) -> None:
        """Test a different seed gives a different matrix."""
        for seed in ("1", "2"):
            args = ["gen", "--rows", "5", "--grid", "4", "4", "--seed", seed, "--out", str(tmp_path / seed)]
            assert main(args) == EXIT_OK
        assert (tmp_path / "1" / "matrix.spr").read_bytes() != (tmp_path / "2" / "matrix.spr").read_bytes()

    def test_spectrum_kind(self, tmp_path: Path) -> None:
        """Test the prescribed-spectrum generator."""
        out = tmp_path / "spec"
        args = ["gen", "--kind", "spectrum", "--rows", "12", "--grid", "2", "5", "--rank", "4", "--out", str(out)]
        assert main(args) == EXIT_OK
        a = load_operator(out / "matrix.spr")
        assert isinstance(a, SparseMatrix)
        s = np.linalg.svd(a.to_dense(), compute_uv=False)
        np.testing.assert_allclose(s[:4], [1.0, 0.9, 0.81, 0.729], rtol=1e-10)


class TestExitCodes:
    """Test error reporting through exit codes."""

    def test_unknown_command(self, capsys: pytest.CaptureFixture[str]) -> None:
        """Test bad usage exits with 1."""
        assert main(["frobnicate"]) == EXIT_USAGE
        assert "usage error" in capsys.readouterr().err

    def test_missing_flag(self) -> None:
        """Test a missing required flag exits with 1."""
        assert main(["svd", "--matrix", "a.spr", "--out", "f.lrk"]) == EXIT_USAGE

    def test_conflicting_thresholds(self, problem: Path) -> None:
        """Test --keep-fraction and --alpha are exclusive."""
        args = ["compress", "--matrix", str(problem / "matrix.spr"), "--out", str(problem / "x.spc")]
        assert main(args + ["--keep-fraction", "0.5", "--alpha", "0.1"]) == EXIT_USAGE

    def test_scheme_needs_factors(self, problem: Path) -> None:
        """Test x1 without a factor file."""
        args = ["solve", "--scheme", "x1", "--rhs", str(problem / "rhs.vec"), "--out", str(problem / "x.vec")]
        assert main(args) == EXIT_USAGE

    def test_smoothing_needs_grid(self, problem: Path) -> None:
        """Test --lambda2 without --grid."""
        args = ["solve", "--scheme", "true", "--matrix", str(problem / "matrix.spr"), "--rhs", str(problem / "rhs.vec")]
        assert main(args + ["--out", str(problem / "x.vec"), "--lambda2", "1"]) == EXIT_USAGE

    def test_wrong_rhs_length(self, problem: Path) -> None:
        """Test a data vector of the wrong length exits with 1."""
        rhs = problem / "short.vec"
        write_vector(np.ones(3), rhs)
        args = ["solve", "--scheme", "true", "--matrix", str(problem / "matrix.spr"), "--rhs", str(rhs)]
        assert main(args + ["--out", str(problem / "x.vec")]) == EXIT_USAGE

    def test_bad_magic(self, tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
        """Test an unknown file type exits with 2."""
        bogus = tmp_path / "bogus.spr"
        bogus.write_bytes(b"NOPE" + bytes(40))
        assert main(["svd", "--matrix", str(bogus), "--out", str(tmp_path / "f.lrk"), "--k", "1"]) == EXIT_FORMAT
        assert "byte offset 0" in capsys.readouterr().err

    def test_truncated_matrix(self, problem: Path, tmp_path: Path) -> None:
        """Test a cut-off SPR1 file exits with 2."""
        cut = tmp_path / "cut.spr"
        cut.write_bytes((problem / "matrix.spr").read_bytes()[:-5])
        assert main(["compress", "--matrix", str(cut), "--out", str(tmp_path / "cut.spc")]) == EXIT_FORMAT

    def test_diverging_solve(self, tmp_path: Path) -> None:
        """Test a numerical failure exits with 3."""
        matrix = tmp_path / "big.spr"
        rhs = tmp_path / "b.vec"
        write_sparse(SparseMatrix.from_dense(3.0 * np.eye(3)), matrix)
        write_vector(np.ones(3), rhs)
        args = ["solve", "--scheme", "ista", "--matrix", str(matrix), "--rhs", str(rhs), "--tau", "0"]
        assert main(args + ["--out", str(tmp_path / "x.vec")]) == EXIT_NUMERIC

    def test_version(self, capsys: pytest.CaptureFixture[str]) -> None:
        """Test --version prints the package version."""
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        assert __version__ in capsys.readouterr().out

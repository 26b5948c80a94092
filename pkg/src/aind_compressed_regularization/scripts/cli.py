"""
``aind-compressed-regularization`` command line.

Subcommands ``gen``, ``compress``, ``svd``, ``solve``, ``validate`` and ``bench``
wire the library into reproducible batch runs. Every run writes one
``.manifest`` file next to its primary output. All randomness derives from
``--seed``.

Exit codes: 0 success, 1 usage or invalid input, 2 malformed file, 3 numerical
failure or failed validation check.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from collections.abc import Callable, Sequence
from pathlib import Path
from typing import NoReturn, TypeAlias

import numpy as np
from pydantic import ValidationError

from aind_compressed_regularization import __version__
from aind_compressed_regularization.analysis import (
    ValidationSuite,
    matvec_error_report,
    write_error_csv,
    write_validation_csv,
)
from aind_compressed_regularization.compressed_operator import (
    SPC_MAGIC,
    CompressedMatrix,
    compress_blocks,
    compress_rows,
    compression_report,
    merge_reports,
    read_compressed,
    stack_compressed,
    write_compressed,
)
from aind_compressed_regularization.errors import FormatError, NumericalError
from aind_compressed_regularization.linear_operator import densify
from aind_compressed_regularization.lowrank_svd import (
    LRK_MAGIC,
    LowRankSVD,
    randomized_lowrank_svd,
    read_lowrank,
    write_lowrank,
)
from aind_compressed_regularization.problems import (
    CheckerboardConfig,
    SpectrumConfig,
    SyntheticKernelConfig,
    add_noise,
    checkerboard_experiment,
    gen_checkerboard,
    gen_kernel_matrix,
    gen_spectrum_matrix,
)
from aind_compressed_regularization.regularization import (
    LaplacianOperator,
    RegConfig,
    SolveReport,
    ista_solve,
    solve_scheme_x1,
    solve_scheme_x1hat,
    solve_scheme_x2,
    solve_scheme_x3,
    solve_true,
    write_report_csv,
)
from aind_compressed_regularization.rng import STREAM_TRIALS, generator
from aind_compressed_regularization.sidecar import RunManifest
from aind_compressed_regularization.sparse_core import (
    SPR_MAGIC,
    SparseMatrix,
    read_sparse,
    read_sparse_blocks,
    read_vector,
    write_sparse,
    write_vector,
)
from aind_compressed_regularization.wavelet import Absolute, KeepFraction, WaveletSpec

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FORMAT = 2
EXIT_NUMERIC = 3

Operator: TypeAlias = SparseMatrix | CompressedMatrix | LowRankSVD


class UsageError(Exception):
    """Bad flags or flag combinations."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        raise UsageError(f"{self.prog}: {message}")


# --------- run bookkeeping ---------
def _stringify(value: object) -> str:
    if value is None:
        return "none"
    if isinstance(value, (list, tuple)):
        return " ".join(str(v) for v in value)
    return str(value)


class _Run:
    """Collects input/output paths and writes the manifest when the command finishes."""

    _NOT_PARAMETERS = frozenset({"func", "command", "seed", "verbose"})

    def __init__(self, args: argparse.Namespace) -> None:
        self.args = args
        self.inputs: dict[str, str] = {}
        self.outputs: dict[str, str] = {}
        self.started = time.perf_counter()

    def finish(self, primary: Path) -> Path:
        params = {k: _stringify(v) for k, v in vars(self.args).items() if k not in self._NOT_PARAMETERS}
        manifest = RunManifest(
            command=self.args.command,
            version=__version__,
            seed=self.args.seed,
            parameters=params,
            inputs=self.inputs,
            outputs=self.outputs,
            duration_seconds=time.perf_counter() - self.started,
        )
        path = primary.with_suffix(".manifest")
        path.write_text(manifest.to_text())
        logger.info("wrote manifest %s", path)
        return path


def load_operator(path: str | Path) -> Operator:
    """Read an operator file, dispatching on its magic bytes (SPR1, SPC1 or LRK1)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == SPR_MAGIC:
        return read_sparse(path)
    if magic == SPC_MAGIC:
        return read_compressed(path)
    if magic == LRK_MAGIC:
        return read_lowrank(path)
    raise FormatError(f"{path}: unrecognized magic {magic!r}", 0)


# --------- subcommands ---------
def cmd_gen(args: argparse.Namespace, run: _Run) -> int:
    """Synthetic matrix, checkerboard model and right-hand side."""
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grid = (args.grid[0], args.grid[1])
    if args.kind == "kernel":
        kernel = SyntheticKernelConfig(
            n_rows=args.rows,
            grid_shape=grid,
            bump_count=args.bumps,
            bump_width=(args.width[0], args.width[1]),
            seed=args.seed,
        )
        a = gen_kernel_matrix(kernel, threads=args.threads)
    else:
        n = grid[0] * grid[1]
        rank = args.rank if args.rank is not None else min(args.rows, n)
        spectrum = SpectrumConfig.geometric(args.rows, n, rank=rank, ratio=args.decay, seed=args.seed)
        a = SparseMatrix.from_dense(gen_spectrum_matrix(spectrum))
    band = (args.band[0], args.band[1]) if args.band else None
    x_chk = gen_checkerboard(CheckerboardConfig(grid_shape=grid, cell_size=args.cell_size, active_band=band))
    b = add_noise(a.apply(x_chk), args.noise, args.seed)

    paths = {"matrix": out / "matrix.spr", "model": out / "model.vec", "rhs": out / "rhs.vec"}
    write_sparse(a, paths["matrix"])
    write_vector(x_chk, paths["model"])
    write_vector(b, paths["rhs"])
    run.outputs.update({k: str(v) for k, v in paths.items()})
    run.finish(paths["matrix"])
    print(f"wrote {a.nrows}x{a.ncols} matrix ({a.nnz} nonzeros), model and rhs to {out}")
    return EXIT_OK


def cmd_compress(args: argparse.Namespace, run: _Run) -> int:
    """Wavelet-compress the rows of an SPR1 matrix into an SPC1 file."""
    spec = WaveletSpec(family=args.family, levels=args.levels)
    policy: KeepFraction | Absolute = (
        Absolute(alpha=args.alpha) if args.alpha is not None else KeepFraction(fraction=args.keep_fraction)
    )
    run.inputs["matrix"] = args.matrix
    if args.block_rows:
        blocked = compress_blocks(read_sparse_blocks(args.matrix, args.block_rows), spec, policy, threads=args.threads)
        parts = [blk for blk in blocked.blocks if isinstance(blk, CompressedMatrix)]
        c = stack_compressed(parts)
        sources = read_sparse_blocks(args.matrix, args.block_rows)
        report = merge_reports([compression_report(src, part) for src, part in zip(sources, parts, strict=True)])
    else:
        a = read_sparse(args.matrix)
        c = compress_rows(a, spec, policy, threads=args.threads)
        report = compression_report(a, c)

    out = Path(args.out)
    write_compressed(c, out)
    run.outputs["compressed"] = str(out)
    run.finish(out)
    for line in report.summary_lines():
        print(line)
    return EXIT_OK


def cmd_svd(args: argparse.Namespace, run: _Run) -> int:
    """Randomized rank-k factors of any operator file."""
    op = load_operator(args.matrix)
    run.inputs["matrix"] = args.matrix
    f = randomized_lowrank_svd(op, args.k, args.seed, oversample=args.oversample)
    out = Path(args.out)
    write_lowrank(f, out)
    run.outputs["factors"] = str(out)
    run.finish(out)
    print(f"rank {f.k} factors of a {f.shape[0]}x{f.shape[1]} operator")
    print("sigma: " + " ".join(f"{s:.6e}" for s in f.sigma))
    return EXIT_OK


def _solve(args: argparse.Namespace, op: Operator | None, factors: list[LowRankSVD], b: np.ndarray) -> SolveReport:
    scheme = args.scheme
    if scheme in ("true", "x1hat", "ista") and op is None:
        raise UsageError(f"--scheme {scheme} needs --matrix")
    if scheme in ("x1", "x1hat", "x3") and len(factors) != 1:
        raise UsageError(f"--scheme {scheme} needs exactly one --factors file")
    if scheme == "x2" and not factors:
        raise UsageError("--scheme x2 needs at least one --factors file")
    if scheme == "ista":
        if args.tau is None:
            raise UsageError("--scheme ista needs --tau")
        assert op is not None
        return ista_solve(op, b, args.tau, step=args.step, iters=args.iters, tol=args.tol)

    cfg = RegConfig(
        lambda1=args.lambda1,
        lambda2=args.lambda2,
        max_iters=args.iters,
        cg_tol=args.tol,
        hat_lambda_multiplier=args.hat_multiplier,
    )
    laplacian = None
    if cfg.lambda2 > 0:
        if args.grid is None:
            raise UsageError("--lambda2 > 0 needs --grid ROWS COLS")
        laplacian = LaplacianOperator(grid_shape=(args.grid[0], args.grid[1]))
    if scheme == "true":
        assert op is not None
        return solve_true(op, b, cfg, laplacian)
    if scheme == "x1":
        return solve_scheme_x1(factors[0], b, cfg, laplacian, residual_op=op)
    if scheme == "x1hat":
        assert op is not None
        return solve_scheme_x1hat(factors[0], op, b, cfg, laplacian)
    if scheme == "x2":
        return solve_scheme_x2(factors, b, cfg, laplacian, residual_op=op)
    return solve_scheme_x3(factors[0], b, cfg, laplacian, residual_op=op)


def cmd_solve(args: argparse.Namespace, run: _Run) -> int:
    """Regularized solve with one of the schemes; writes the solution, a CSV history and a manifest."""
    op = load_operator(args.matrix) if args.matrix else None
    factors = [read_lowrank(p) for p in args.factors or []]
    b = read_vector(args.rhs)
    run.inputs.update({"rhs": args.rhs} | ({"matrix": args.matrix} if args.matrix else {}))
    run.inputs.update({f"factors{j}": p for j, p in enumerate(args.factors or [])})

    report = _solve(args, op, factors, b)

    out = Path(args.out)
    csv_path = out.with_suffix(".csv")
    write_vector(report.solution, out)
    write_report_csv(report, csv_path)
    run.outputs.update({"solution": str(out), "report": str(csv_path)})
    run.finish(out)
    print(
        f"{report.scheme}: {report.iterations} iterations, converged={report.converged}, "
        f"|x|={np.linalg.norm(report.solution):.6e}, chi2={report.final_chi2}"
    )
    return EXIT_OK


def cmd_validate(args: argparse.Namespace, run: _Run) -> int:
    """Identity, equivalence and bound checks on one instance; exit 3 on any failure."""
    factors = read_lowrank(args.factors) if args.factors else None
    k = args.k if args.k is not None else (factors.k if factors is not None else None)
    if k is None:
        raise UsageError("validate needs --k or --factors")
    a = densify(load_operator(args.matrix))
    b = read_vector(args.rhs)
    run.inputs.update({"matrix": args.matrix, "rhs": args.rhs} | ({"factors": args.factors} if args.factors else {}))

    checks = ValidationSuite(a, b, k, args.lam, factors=factors, tol=args.tol, seed=args.seed).run()
    out = Path(args.out)
    write_validation_csv(checks, out)
    run.outputs["checks"] = str(out)
    run.finish(out)
    for c in checks:
        print(f"{c.check:32s} {c.value:.3e} <= {c.tolerance:.3e}  {'ok' if c.passed else 'FAIL'}")
    failed = [c.check for c in checks if not c.passed]
    if failed:
        print(f"{len(failed)} of {len(checks)} checks failed", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def _seconds_per_product(op: Operator, seed: int, repeats: int) -> tuple[float, float]:
    rng = generator(seed, STREAM_TRIALS)
    x = rng.standard_normal(op.shape[1])
    y = rng.standard_normal(op.shape[0])
    start = time.perf_counter()
    for _ in range(repeats):
        op.apply(x)
    forward = (time.perf_counter() - start) / repeats
    start = time.perf_counter()
    for _ in range(repeats):
        op.apply_transpose(y)
    return forward, (time.perf_counter() - start) / repeats


def cmd_bench(args: argparse.Namespace, run: _Run) -> int:
    """Matvec percent errors of an approximate operator, timings and an optional checkerboard sweep."""
    exact = load_operator(args.matrix)
    approx = load_operator(args.approx)
    run.inputs.update({"matrix": args.matrix, "approx": args.approx})
    report = matvec_error_report(exact, approx, trials=args.trials, seed=args.seed, label=Path(args.approx).name)
    out = Path(args.out)
    write_error_csv(report, out)
    run.outputs["errors"] = str(out)

    print(f"{'product':8s} {'mean %':>12s} {'max %':>12s}")
    for name, column in (("Ax", "ax_percent"), ("A^Ty", "aty_percent"), ("A^TAx", "atax_percent")):
        print(f"{name:8s} {report.mean(column):12.4e} {report.max(column):12.4e}")
    print(f"{'operator':8s} {'apply s':>12s} {'apply_T s':>12s}")
    for name, op in (("exact", exact), ("approx", approx)):
        fwd, adj = _seconds_per_product(op, args.seed, args.repeats)
        print(f"{name:8s} {fwd:12.4e} {adj:12.4e}")

    if args.cell_sizes:
        if args.grid is None:
            raise UsageError("--cell-sizes needs --grid ROWS COLS")
        reg = RegConfig(lambda1=args.lambda1)
        print(f"{'cell':>6s} {'correlation':>12s} {'leakage':>12s}")
        for size in args.cell_sizes:
            cfg = CheckerboardConfig(grid_shape=(args.grid[0], args.grid[1]), cell_size=size)
            result = checkerboard_experiment(approx, cfg, reg)
            print(f"{size:6d} {result.correlation:12.6f} {result.leakage:12.4e}")
    run.finish(out)
    return EXIT_OK


# --------- parser ---------
def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="root seed for every random stream")
    common.add_argument("--threads", type=int, default=None, help="worker cap for block-parallel steps")
    common.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG")

    parser = _Parser(prog="aind-compressed-regularization", description="Compressed operators and regularized solves.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name: str, func: Callable[[argparse.Namespace, _Run], int]) -> argparse.ArgumentParser:
        p = sub.add_parser(name, parents=[common], help=(func.__doc__ or "").strip())
        p.set_defaults(func=func)
        return p

    p = command("gen", cmd_gen)
    p.add_argument("--kind", choices=("kernel", "spectrum"), default="kernel")
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--grid", type=int, nargs=2, metavar=("ROWS", "COLS"), required=True)
    p.add_argument("--bumps", type=int, default=3)
    p.add_argument("--width", type=float, nargs=2, metavar=("LO", "HI"), default=[2.0, 5.0])
    p.add_argument("--rank", type=int, default=None, help="spectrum rank (default: full)")
    p.add_argument("--decay", type=float, default=0.9, help="geometric singular value ratio")
    p.add_argument("--cell-size", type=int, default=4)
    p.add_argument("--band", type=int, nargs=2, metavar=("LO", "HI"), default=None)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--out", required=True, help="output directory")

    p = command("compress", cmd_compress)
    p.add_argument("--matrix", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--family", choices=("haar", "cdf97"), default="cdf97")
    p.add_argument("--levels", type=int, default=3)
    thr = p.add_mutually_exclusive_group()
    thr.add_argument("--keep-fraction", type=float, default=0.3)
    thr.add_argument("--alpha", type=float, default=None, help="absolute threshold instead of a keep fraction")
    p.add_argument("--block-rows", type=int, default=None, help="stream the input in row blocks")

    p = command("svd", cmd_svd)
    p.add_argument("--matrix", required=True, help=".spr, .spc or .lrk operator")
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--oversample", type=int, default=0)

    p = command("solve", cmd_solve)
    p.add_argument("--scheme", choices=("true", "x1", "x1hat", "x2", "x3", "ista"), required=True)
    p.add_argument("--matrix", default=None)
    p.add_argument("--factors", nargs="+", default=None, help="one .lrk per row block")
    p.add_argument("--rhs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lambda1", type=float, default=1.0)
    p.add_argument("--lambda2", type=float, default=0.0)
    p.add_argument("--grid", type=int, nargs=2, metavar=("ROWS", "COLS"), default=None)
    p.add_argument("--iters", type=int, default=500)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--hat-multiplier", type=float, default=1.0)
    p.add_argument("--tau", type=float, default=None, help="l1 weight for ista")
    p.add_argument("--step", type=float, default=1.0)

    p = command("validate", cmd_validate)
    p.add_argument("--matrix", required=True)
    p.add_argument("--rhs", required=True)
    p.add_argument("--factors", default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--tol", type=float, default=1e-7)
    p.add_argument("--out", required=True)

    p = command("bench", cmd_bench)
    p.add_argument("--matrix", required=True)
    p.add_argument("--approx", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--cell-sizes", type=int, nargs="+", default=None)
    p.add_argument("--grid", type=int, nargs=2, metavar=("ROWS", "COLS"), default=None)
    p.add_argument("--lambda1", type=float, default=1.0)
    return parser


def _configure_logging(verbose: int) -> None:
    level = max(logging.WARNING - 10 * verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    logging.captureWarnings(True)


def main(argv: Sequence[str] | None = None) -> int:
    """Run one subcommand and return its exit code."""
    try:
        args = build_parser().parse_args(argv)
        _configure_logging(args.verbose)
        return int(args.func(args, _Run(args)))
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValidationError, ValueError, OSError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

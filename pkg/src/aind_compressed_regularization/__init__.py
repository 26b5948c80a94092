"""Wavelet-compressed and low-rank operators for regularized least squares"""

__version__ = "0.1.0"

from aind_compressed_regularization.analysis import (
    BoundReport,
    ErrorReport,
    FilterDiagonal,
    ValidationSuite,
    evaluate_bounds,
    inverse_identity_check,
    matvec_error_report,
    woodbury_check,
)
from aind_compressed_regularization.compressed_operator import (
    BlockedOperator,
    CompressedMatrix,
    CompressionReport,
    compress_blocks,
    compress_rows,
    compression_report,
)
from aind_compressed_regularization.errors import (
    CompressedRegularizationError,
    DimensionMismatchError,
    FormatError,
    IllConditionedWarning,
    NumericalError,
)
from aind_compressed_regularization.lowrank_svd import LowRankSVD, randomized_lowrank_svd
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
)
from aind_compressed_regularization.sidecar import RunManifest, dump_sidecar, load_sidecar
from aind_compressed_regularization.sparse_core import SparseMatrix, read_sparse, write_sparse
from aind_compressed_regularization.wavelet import Absolute, KeepFraction, WaveletSpec

__all__ = [
    "Absolute",
    "BlockedOperator",
    "BoundReport",
    "CheckerboardConfig",
    "CompressedMatrix",
    "CompressedRegularizationError",
    "CompressionReport",
    "DimensionMismatchError",
    "ErrorReport",
    "FilterDiagonal",
    "FormatError",
    "IllConditionedWarning",
    "KeepFraction",
    "LaplacianOperator",
    "LowRankSVD",
    "NumericalError",
    "RegConfig",
    "RunManifest",
    "SolveReport",
    "SparseMatrix",
    "SpectrumConfig",
    "SyntheticKernelConfig",
    "ValidationSuite",
    "WaveletSpec",
    "add_noise",
    "checkerboard_experiment",
    "compress_blocks",
    "compress_rows",
    "compression_report",
    "dump_sidecar",
    "evaluate_bounds",
    "gen_checkerboard",
    "gen_kernel_matrix",
    "gen_spectrum_matrix",
    "inverse_identity_check",
    "ista_solve",
    "load_sidecar",
    "matvec_error_report",
    "randomized_lowrank_svd",
    "read_sparse",
    "solve_scheme_x1",
    "solve_scheme_x1hat",
    "solve_scheme_x2",
    "solve_scheme_x3",
    "solve_true",
    "woodbury_check",
    "write_sparse",
]

"""Fast sampling from determinantal point processes over the rows of a tall matrix.

After a one-off preprocessing pass, each draw costs time independent of the
number of rows: an i.i.d. proposal weighted by ridge leverage scores is
accepted or rejected with a determinant ratio, and the accepted handful of
rows is downsampled by an exact DPP.
"""
from .exact import expected_size, sample_dpp_exact
from .linalg import RowMatrix, cholesky, eigh, quad_form
from .mmio import read_matrix, write_csv, write_mtx
from .preprocessing import (PreprocessedState, build_state, calibrate_scale, read_state,
                            write_state)
from .rng import make_rng
from .sampler import (diagnostics, sample_dpp, sample_dpp_batch, sample_dpp_draw, sample_rdpp,
                      sample_rdpp_batch)

__all__ = [
    "RowMatrix", "cholesky", "eigh", "quad_form",
    "read_matrix", "write_mtx", "write_csv",
    "PreprocessedState", "build_state", "calibrate_scale", "read_state", "write_state",
    "make_rng", "sample_dpp", "sample_dpp_draw", "sample_dpp_batch", "sample_rdpp",
    "sample_rdpp_batch", "diagnostics",
    "sample_dpp_exact", "expected_size",
]

"""Desk-scale multilingual speech recognition toolkit."""

import os as _os

# Pin BLAS to one thread before numpy loads anywhere in the package.
# Multi-threaded GEMM reorders float reductions, which breaks the
# bit-for-bit reproducibility the training pipeline promises.
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
             "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
    _os.environ.setdefault(_var, "1")

__version__ = "0.1.0"

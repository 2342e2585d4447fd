"""Benchmark suite for neural decoding backbones.

Four sequence models (GRU, encoder/decoder Transformer, RWKV, selective
state-space) share one training and evaluation harness for decoding 2D
cursor velocity from binned spike counts.  Everything numerical runs on
a small reverse-mode autodiff engine over numpy arrays, so results are
reproducible bit for bit on a fixed thread count.
"""

import os

# Pin BLAS thread pools before numpy is imported anywhere in the package.
# Reductions change summation order with thread count, which breaks the
# bitwise reproducibility contract, so default to a single thread unless
# the user asks otherwise.
_threads = os.environ.get("NDBENCH_THREADS", "1")
for _var in (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
    "NUMEXPR_NUM_THREADS",
):
    os.environ.setdefault(_var, _threads)
del _var

__version__ = "0.1.0"

from . import tensor  # noqa: E402,F401  (imports numpy after the env setup)

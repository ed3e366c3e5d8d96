"""mcdk: desk-scale adaptive-sampling Monte Carlo denoising kit."""

import os

# Pin BLAS worker counts before numpy loads. MCDK_THREADS=1 guarantees
# bit-exact reductions; unset leaves the BLAS default (all cores).
_threads = os.environ.get("MCDK_THREADS")
if _threads:
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

from .errors import (  # noqa: E402
    AutodiffError,
    ConfigError,
    DataError,
    DimensionError,
    McdkError,
    TrainingError,
)
from .tensor import Tensor, no_grad  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "no_grad",
    "McdkError",
    "DimensionError",
    "ConfigError",
    "DataError",
    "AutodiffError",
    "TrainingError",
    "__version__",
]

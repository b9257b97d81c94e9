"""Parallel-MRI reconstruction with an unrolled proximal-gradient network.

Multi-coil images are reconstructed directly from undersampled k-space
without coil sensitivity maps: a fixed number of phases alternate a
data-fidelity gradient step with a learned residual update built from a
coil-combination operator, a sparse feature encoder, soft shrinkage and
mirrored decoder/expander stacks.
"""

import os as _os

# Cap worker threads before numpy loads its BLAS. Best effort: a no-op if
# numpy is already imported in this process.
if "PMRI_THREADS" in _os.environ:
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _os.environ["PMRI_THREADS"])

from .backend import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]

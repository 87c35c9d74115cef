"""Robustness scores, margin estimation, adversarial co-training and transfer maps."""

import os as _os

__version__ = "0.1.0"


def _cap_threads():
    # must run before numpy loads its BLAS
    cap = _os.environ.get("ROBUSTA_THREADS")
    if cap and cap.isdigit() and int(cap) > 0:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            _os.environ.setdefault(var, cap)


_cap_threads()

from .errors import RobustaError  # noqa: E402
from .model_core import DifferentiableModel, LabeledDataset, LinearClassifier, ConstantClassifier  # noqa: E402

__all__ = ["__version__", "RobustaError", "DifferentiableModel", "LabeledDataset", "LinearClassifier",
           "ConstantClassifier"]

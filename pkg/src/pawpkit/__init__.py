"""Tensor-based multimodal classification pipeline for elevated
pulmonary arterial wedge pressure.

Core pieces: third-order tensor algebra (pawpkit.tensor), landmark-based
affine registration (pawpkit.registration), uncertainty quantile binning
(pawpkit.binning), multilinear PCA feature learning (pawpkit.mpca),
multimodal fusion (pawpkit.fusion), a linear max-margin classifier
(pawpkit.svm), evaluation metrics and decision curves (pawpkit.evaluation),
plus data IO, a synthetic cohort generator, and the end-to-end pipeline
behind the ``pawpkit`` CLI.
"""

__version__ = "0.1.0"

from .tensor import (  # noqa: F401
    Modality,
    TensorSample,
    fold,
    maxpool_downsample,
    mode_product,
    unfold,
    zscore_normalize,
)

"""Gated multimodal fusion toolkit.

Correlation-structure features, unimodal segment-to-session classifiers,
a three-way bimodal gated fusion network, the training protocol around them,
evaluation metrics, and a synthetic cohort generator, all on a minimal
float64 autodiff core.
"""

__version__ = "0.1.0"

from .tensor import Tensor  # noqa: F401

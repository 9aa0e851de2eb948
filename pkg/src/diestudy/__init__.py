"""Die-analysis toolkit: cluster coin-face images by the die that struck them.

Stages: image normalization, uncertainty-driven keypoint extraction,
pairwise dissimilarity computation, Bayesian distance microclustering,
evaluation metrics, and an HTTP service for the human verification loop.
"""

__version__ = "0.1.0"

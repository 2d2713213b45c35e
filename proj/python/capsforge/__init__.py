"""Capsule-network primitives backed by the C++ core."""

try:
    from ._capsforge import *  # noqa: F401,F403  (installed layout)
    from ._capsforge import Model  # noqa: F401
except ImportError:  # build-tree layout: extension lives on sys.path directly
    from _capsforge import *  # noqa: F401,F403
    from _capsforge import Model  # noqa: F401

__all__ = [
    "Model",
    "squash",
    "softmax",
    "relu",
    "conv2d",
    "dense",
    "predict_vectors",
    "route",
    "margin_loss",
    "pca",
    "apply_affine",
    "load_idx",
]

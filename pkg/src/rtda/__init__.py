"""Real-time adversarial domain adaptation for semantic segmentation.

A small, deterministic, numpy-backed stack: a reverse-mode tensor engine,
the layers and discriminators it trains, an analytical cost model, and a
synthetic two-domain segmentation benchmark to exercise the whole loop.
"""

from rtda.tensor import Tensor, backward

__all__ = ["Tensor", "backward"]
__version__ = "0.1.0"

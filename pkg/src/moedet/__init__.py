"""Attention-gated mixture-of-experts speech deepfake detector.

Spectrogram experts (LCNN and ResNet variants) are fused through a
transformer gating network; everything — tensor autodiff, DSP frontend,
training loop, metrics, synthetic corpus — runs on CPU from this package.
"""

from ._kernels import BACKEND as kernel_backend

__version__ = "0.1.0"
__all__ = ["kernel_backend", "__version__"]

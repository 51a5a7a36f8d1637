"""Desk-scale multimodal EEG decoding: contrastive modality experts aligned
to image/text/depth embedding spaces, an embedding diffusion prior, retrieval
and reconstruction-proxy evaluation, and Grad-CAM attribution, all driven by
synthetic data with a controllable shared-information knob."""

from cogcap.autodiff import Tensor, grad, finite_diff_check, NumericalError, ShapeError

__all__ = ["Tensor", "grad", "finite_diff_check", "NumericalError", "ShapeError"]

__version__ = "0.1.0"

"""Reference-volume preparation: bias correction, masking and resampling."""

from .bias import BiasField, BiasParams, correct_bias, sharpen_histogram
from .reference import PreprocParams, PreprocResult, head_mask, preprocess_reference

__all__ = ["BiasField", "BiasParams", "correct_bias", "sharpen_histogram", "PreprocParams", "PreprocResult",
           "head_mask", "preprocess_reference"]

"""Noise-robust speech front end: MFCC, NMF subspace projection, HEQ and SPLICE-family compensation."""

from .frontend import FeatureKind, FeatureSequence, FrontendConfig, extract_composite, extract_lmfb, extract_mfcc
from .gmm import GaussianMixture, em_fit
from .compensation import SpliceKind, SpliceModel, enhance, train_msplice, train_splice

__version__ = "0.1.0"

__all__ = [
    "FeatureKind", "FeatureSequence", "FrontendConfig", "extract_composite", "extract_lmfb", "extract_mfcc",
    "GaussianMixture", "em_fit", "SpliceKind", "SpliceModel", "enhance", "train_msplice", "train_splice",
]

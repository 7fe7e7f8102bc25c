"""
Imaging: SPAM features, manipulations, image files and feature caches
"""
from .spam import (SPAM_DIM, FeatureNormalizer, SpamCache, apply_normalizer, extract_spam,
                   fit_normalizer, incremental_update)
from .manipulations import (DistortionReport, ManipulationKind, apply_manipulation, clahe,
                            downsample4, feature_snr, median_filter, psnr, to_grayscale)
from .image_io import read_image, write_image

__all__ = [
    'SPAM_DIM', 'FeatureNormalizer', 'SpamCache', 'apply_normalizer', 'extract_spam',
    'fit_normalizer', 'incremental_update',
    'DistortionReport', 'ManipulationKind', 'apply_manipulation', 'clahe', 'downsample4',
    'feature_snr', 'median_filter', 'psnr', 'to_grayscale',
    'read_image', 'write_image',
]

"""
Gaussian theory of randomized feature detectors
"""
from .models import GaussianHypothesisModel, Hypothesis, Regime, make_model, sample
from .reduction import ReductionKind, ReductionMap, draw_map, draw_rfs, draw_rp, reduce_model
from .detector import (DetectorAnalytics, LinearDetector, analyze, build_detector, decide,
                       error_probability, eta, z_value)
from .attack import (AttackConfig, AttackedStatistics, angle_mismatch, attacked_statistics,
                     decompose_attack, optimal_attack, transfer_factor, z_att_iid)

__all__ = [
    'GaussianHypothesisModel', 'Hypothesis', 'Regime', 'make_model', 'sample',
    'ReductionKind', 'ReductionMap', 'draw_map', 'draw_rfs', 'draw_rp', 'reduce_model',
    'DetectorAnalytics', 'LinearDetector', 'analyze', 'build_detector', 'decide',
    'error_probability', 'eta', 'z_value',
    'AttackConfig', 'AttackedStatistics', 'angle_mismatch', 'attacked_statistics',
    'decompose_attack', 'optimal_attack', 'transfer_factor', 'z_att_iid',
]

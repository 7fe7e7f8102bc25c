"""
Kernel SVM detectors, attacks against them and RFS security evaluation
"""
from .svm import (KernelKind, KernelSpec, SvmModel, TrainConfig, load_model, save_model,
                  select_gamma, train)
from .attacks import (AttackOutcome, AttackStatus, EotAttackConfig, FeatureAttackConfig,
                      PixelAttackConfig, attack_eot, attack_feature_domain, attack_pixel_domain)
from .evaluation import EvaluationSet, SecurityTable, evaluate_rfs_security

__all__ = [
    'KernelKind', 'KernelSpec', 'SvmModel', 'TrainConfig', 'load_model', 'save_model',
    'select_gamma', 'train',
    'AttackOutcome', 'AttackStatus', 'EotAttackConfig', 'FeatureAttackConfig',
    'PixelAttackConfig', 'attack_eot', 'attack_feature_domain', 'attack_pixel_domain',
    'EvaluationSet', 'SecurityTable', 'evaluate_rfs_security',
]

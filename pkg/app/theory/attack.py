"""
Optimal feature-space attack against the full detector and its effect on reduced detectors
"""
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from ..errors import DegenerateInputError, ParameterError
from .detector import LinearDetector, error_probability
from .models import GaussianHypothesisModel
from .reduction import ReductionMap, reduce_model

DETERMINISTIC_TOLERANCE = 1e-12
# Cosines this close to 1 are parallel directions
COSINE_SNAP = 1e-12


@dataclass(frozen=True)
class AttackConfig:
    alpha: float = 1.0

    def __post_init__(self):
        if not self.alpha >= 1:
            raise ParameterError("alpha must be >= 1", {'alpha': self.alpha})


@dataclass(frozen=True)
class AttackedStatistics:
    x: float
    y: float
    theta: float
    mean_rho_r: float
    var_rho_r: float
    z_att: float

    @property
    def p_md_attack(self) -> float:
        """Missed detection of the reduced detector when every H0 sample is attacked"""
        return error_probability(self.z_att)

    @property
    def p_md_no_attack(self) -> float:
        return error_probability(math.sqrt(self.y))


def _check_alpha(alpha: float):
    if not alpha >= 1:
        raise ParameterError("alpha must be >= 1", {'alpha': alpha})


def _weight_norm_sq(detector: LinearDetector) -> float:
    norm_sq = float(detector.weights @ detector.weights)
    if norm_sq == 0:
        raise DegenerateInputError("Detector weight vector is zero")
    return norm_sq


def optimal_attack(detector: LinearDetector, v: np.ndarray, alpha: float) -> np.ndarray:
    """
    v* = v - alpha (w^T v / ||w||^2) w

    Applied whatever the sign of w^T v. Works row-wise on a batch (m, n).
    """
    _check_alpha(alpha)
    norm_sq = _weight_norm_sq(detector)
    v = np.asarray(v, dtype=float)
    scores = detector.score(v)
    return v - alpha * np.multiply.outer(scores / norm_sq, detector.weights)


def decompose_attack(detector: LinearDetector, v: np.ndarray, alpha: float) -> Tuple[float, np.ndarray]:
    """Scale a and unit direction e with optimal_attack(v) == v - a e"""
    _check_alpha(alpha)
    norm = math.sqrt(_weight_norm_sq(detector))
    direction = detector.weights / norm
    scale = alpha * float(detector.score(v)) / norm
    return scale, direction


def attacked_statistics(model: GaussianHypothesisModel, reduction: ReductionMap,
                        alpha: float) -> AttackedStatistics:
    """Mean, variance and z-value of the reduced score after the full-detector attack, under H0"""
    _check_alpha(alpha)
    reduced = reduce_model(reduction, model)
    w = model.solve(model.mean)
    w_r = reduced.solve(reduced.mean)
    x = float(model.mean @ w)
    y = float(reduced.mean @ w_r)
    norm_sq = float(w @ w)
    if norm_sq == 0:
        raise DegenerateInputError("Detector weight vector is zero")

    theta = alpha * float(w_r @ reduction.apply(w)) / norm_sq
    mean = y - theta * x
    variance = y + theta ** 2 * x - 2 * theta * y
    if variance > DETERMINISTIC_TOLERANCE * x:
        z_att = mean / math.sqrt(variance)
    elif abs(mean) <= DETERMINISTIC_TOLERANCE * x:
        # Deterministic score sitting on the boundary
        z_att = 0.0
    else:
        z_att = math.copysign(math.inf, mean)
    return AttackedStatistics(x=x, y=y, theta=theta, mean_rho_r=mean,
                              var_rho_r=max(variance, 0.0), z_att=z_att)


def z_att_iid(eta: float, alpha: float, z: float) -> float:
    """Closed form of z_att for iid features"""
    if not 0 < eta <= 1:
        raise ParameterError("eta must lie in (0, 1]", {'eta': eta})
    _check_alpha(alpha)
    denominator = eta + alpha ** 2 * eta ** 2 - 2 * alpha * eta ** 2
    if denominator <= 0:
        raise DegenerateInputError("z_att denominator is not positive",
                                   {'eta': eta, 'alpha': alpha})
    return z * eta * (1 - alpha) / math.sqrt(denominator)


def transfer_factor(eta: float, alpha: float) -> float:
    """1 / sqrt(1/eta + alpha^2 - 2 alpha), the eta-dependent part of |z_att| for iid features"""
    if not 0 < eta <= 1:
        raise ParameterError("eta must lie in (0, 1]", {'eta': eta})
    _check_alpha(alpha)
    inner = 1.0 / eta + alpha ** 2 - 2 * alpha
    if inner <= 0:
        raise DegenerateInputError("Transfer factor is undefined", {'eta': eta, 'alpha': alpha})
    return 1.0 / math.sqrt(inner)


def _unit(v: np.ndarray, what: str) -> np.ndarray:
    norm = np.linalg.norm(v)
    if norm == 0:
        raise DegenerateInputError(f"{what} is the zero vector")
    return v / norm


def angle_mismatch(model: GaussianHypothesisModel, reduction: ReductionMap) -> float:
    """Angle in degrees [0, 90] between the reduced detector normal and the projected attack direction"""
    reduced = reduce_model(reduction, model)
    e_rfs = _unit(reduced.solve(reduced.mean), "Reduced detector direction")
    e_att = _unit(reduction.apply(model.solve(model.mean)), "Projected attack direction")
    cosine = float(np.clip(abs(e_rfs @ e_att), -1.0, 1.0))
    if cosine > 1.0 - COSINE_SNAP:
        return 0.0
    return math.degrees(math.acos(cosine))

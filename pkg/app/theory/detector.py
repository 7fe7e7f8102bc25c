"""
Optimal linear detection under the Gaussian hypothesis model
"""
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from ..errors import DegenerateInputError, ParameterError
from .models import GaussianHypothesisModel, Hypothesis
from .reduction import ReductionMap, reduce_model


@dataclass(frozen=True, eq=False)
class LinearDetector:
    """Decides H0 iff w^T v > 0, with w = Sigma^-1 u"""
    weights: np.ndarray
    source_model: GaussianHypothesisModel

    @property
    def dim(self) -> int:
        return self.weights.size

    def score(self, v: np.ndarray) -> np.ndarray:
        """rho = w^T v, row-wise for a batch"""
        v = np.asarray(v, dtype=float)
        if v.shape[-1] != self.dim:
            raise ParameterError("Dimension mismatch", {'expected': self.dim, 'got': v.shape[-1]})
        return v @ self.weights


@dataclass(frozen=True)
class DetectorAnalytics:
    z: float
    z_r: float
    eta: float
    p_error_no_attack: float


def build_detector(model: GaussianHypothesisModel) -> LinearDetector:
    weights = model.solve(model.mean)
    weights.setflags(write=False)
    return LinearDetector(weights=weights, source_model=model)


def decide(detector: LinearDetector, v: np.ndarray) -> Hypothesis:
    # A zero score goes to H1
    if detector.score(v) > 0:
        return Hypothesis.H0_MANIPULATED
    return Hypothesis.H1_ORIGINAL


def decide_batch(detector: LinearDetector, samples: np.ndarray) -> np.ndarray:
    """Boolean array, True where H0 is decided"""
    return detector.score(samples) > 0


def squared_z(model: GaussianHypothesisModel) -> float:
    """u^T Sigma^-1 u"""
    return float(model.mean @ model.solve(model.mean))


def z_value(model: GaussianHypothesisModel) -> float:
    return float(np.sqrt(max(squared_z(model), 0.0)))


def eta(model: GaussianHypothesisModel, reduction: ReductionMap) -> float:
    full = squared_z(model)
    if full <= 0:
        raise DegenerateInputError("eta is undefined for a zero mean vector")
    return squared_z(reduce_model(reduction, model)) / full


def error_probability(z: float) -> float:
    """Standard normal upper tail Q(z)"""
    return float(norm.sf(z))


def analyze(model: GaussianHypothesisModel, reduction: ReductionMap) -> DetectorAnalytics:
    z = z_value(model)
    ratio = eta(model, reduction)
    z_r = float(np.sqrt(ratio) * z)
    return DetectorAnalytics(z=z, z_r=z_r, eta=ratio, p_error_no_attack=error_probability(z_r))

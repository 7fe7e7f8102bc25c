"""
Gaussian hypothesis models
Feature statistics under H0 (mean u) and H1 (mean -u) with a shared covariance
"""
import json
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy import linalg
from scipy.stats import special_ortho_group

from ..errors import ModelInvalidError, ParameterError, ParseError
from ..monitoring import get_logger

logger = get_logger('theory')

PIVOT_TOLERANCE = 1e-10
MODEL_SCHEMA_VERSION = 1


class Regime(Enum):
    IID = "iid"
    DEPENDENT = "dependent"
    DEPENDENT_NORMALIZED = "dependent_normalized"


class Hypothesis(Enum):
    H0_MANIPULATED = "H0"
    H1_ORIGINAL = "H1"


def cholesky_factor(covariance: np.ndarray) -> Tuple[np.ndarray, bool]:
    """Lower Cholesky factor usable with cho_solve; rejects pivots below tolerance"""
    try:
        factor = linalg.cho_factor(covariance, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as e:
        raise ModelInvalidError(f"Covariance is not positive definite: {e}")
    pivots = np.diag(factor[0]) ** 2
    if pivots.size and pivots.min() < PIVOT_TOLERANCE:
        raise ModelInvalidError("Covariance is numerically singular",
                                {'min_pivot': float(pivots.min())})
    return factor


def solve(covariance: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve covariance @ x = rhs through Cholesky, never by explicit inversion"""
    return linalg.cho_solve(cholesky_factor(covariance), rhs)


@dataclass(frozen=True, eq=False)
class GaussianHypothesisModel:
    """H0: v ~ N(u, Sigma), H1: v ~ N(-u, Sigma)"""
    mean: np.ndarray
    covariance: np.ndarray
    regime: Regime = Regime.IID
    seed: Optional[int] = None
    provenance: Dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float)
        covariance = np.array(self.covariance, dtype=float)
        if mean.ndim != 1 or mean.size < 1:
            raise ParameterError("Mean must be a non-empty vector")
        if covariance.shape != (mean.size, mean.size):
            raise ParameterError("Covariance must be dim x dim",
                                 {'dim': mean.size, 'shape': covariance.shape})
        if not np.array_equal(covariance, covariance.T):
            raise ModelInvalidError("Covariance is not symmetric")
        mean.setflags(write=False)
        covariance.setflags(write=False)
        object.__setattr__(self, 'mean', mean)
        object.__setattr__(self, 'covariance', covariance)

    @property
    def dim(self) -> int:
        return self.mean.size

    @cached_property
    def cholesky(self) -> Tuple[np.ndarray, bool]:
        return cholesky_factor(self.covariance)

    @cached_property
    def lower_factor(self) -> np.ndarray:
        """L with L @ L.T == covariance"""
        return np.tril(self.cholesky[0])

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return linalg.cho_solve(self.cholesky, rhs)

    def hypothesis_mean(self, h: Hypothesis) -> np.ndarray:
        return self.mean if h is Hypothesis.H0_MANIPULATED else -self.mean

    def to_dict(self) -> Dict[str, Any]:
        return {
            'schema_version': MODEL_SCHEMA_VERSION,
            'dim': self.dim,
            'mean': self.mean.tolist(),
            'covariance': self.covariance.ravel().tolist(),
            'regime': self.regime.value,
            'seed': self.seed,
            'provenance': self.provenance,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'GaussianHypothesisModel':
        for key in ('dim', 'mean', 'covariance', 'regime'):
            if key not in data:
                raise ParseError(f"Model JSON is missing '{key}'", field=key)
        dim = int(data['dim'])
        covariance = np.asarray(data['covariance'], dtype=float)
        if covariance.size != dim * dim:
            raise ParseError("Covariance length does not match dim", field='covariance')
        try:
            regime = Regime(data['regime'])
        except ValueError:
            raise ParseError(f"Unknown regime {data['regime']!r}", field='regime')
        return cls(mean=np.asarray(data['mean'], dtype=float),
                   covariance=covariance.reshape(dim, dim),
                   regime=regime,
                   seed=data.get('seed'),
                   provenance=data.get('provenance', {}))

    def save(self, path: Path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: Path) -> 'GaussianHypothesisModel':
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ParseError(f"Invalid model JSON: {e.msg}", offset=e.pos)
        return cls.from_dict(data)


def haar_rotation(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed rotation (orthogonal, determinant +1)"""
    if n < 1:
        raise ParameterError("Rotation dimension must be positive", {'n': n})
    if n == 1:
        return np.ones((1, 1))
    return special_ortho_group.rvs(n, random_state=rng)


def make_iid_model(n: int, target_z: float) -> GaussianHypothesisModel:
    """Identity covariance, equal-magnitude mean with ||u|| = target_z"""
    if n < 1:
        raise ParameterError("n must be at least 1", {'n': n})
    if not target_z > 0:
        raise ParameterError("target_z must be positive", {'target_z': target_z})
    mean = np.full(n, target_z / np.sqrt(n))
    return GaussianHypothesisModel(mean=mean, covariance=np.eye(n), regime=Regime.IID,
                                   provenance={'target_z': target_z})


def make_dependent_model(n: int, normalized: bool, rng: np.random.Generator,
                         diag_range: Tuple[float, float] = (0.5, 1.5),
                         z_window: Tuple[float, float] = (4.5, 5.5),
                         target_z: Optional[float] = None,
                         mean_kind: str = 'constant',
                         max_condition: float = 1e8,
                         max_redraws: int = 100,
                         seed: Optional[int] = None) -> GaussianHypothesisModel:
    """
    Randomly rotated diagonal covariance, optionally with unequal feature scales

    Args:
        n: Feature dimension (>= 2)
        normalized: Skip the per-feature sqrt(s_i) scaling when True
        rng: Random source
        diag_range: Uniform range of the diagonal entries before rotation
        z_window: The mean is calibrated so z lands at the window midpoint
        target_z: Explicit calibration target, overrides the window
        mean_kind: 'constant' or 'random' (entries Uniform(0.5, 1.5)) before calibration
        max_condition: Draws with a larger condition number are rejected
        seed: Recorded as provenance only

    Returns:
        GaussianHypothesisModel with realized z stored in provenance
    """
    if n < 2:
        raise ParameterError("Dependent models need n >= 2", {'n': n})
    lo, hi = diag_range
    if not 0 < lo < hi:
        raise ParameterError("diag_range must satisfy 0 < lo < hi", {'diag_range': diag_range})
    if mean_kind not in ('constant', 'random'):
        raise ParameterError(f"Unknown mean_kind {mean_kind!r}")
    z_goal = target_z if target_z is not None else 0.5 * (z_window[0] + z_window[1])
    if not z_goal > 0:
        raise ParameterError("Calibration target must be positive", {'target_z': z_goal})

    for attempt in range(max_redraws):
        rotation = haar_rotation(n, rng)
        diagonal = rng.uniform(lo, hi, size=n)
        covariance = (rotation.T * diagonal) @ rotation
        covariance = 0.5 * (covariance + covariance.T)

        base_mean = np.ones(n) if mean_kind == 'constant' else rng.uniform(0.5, 1.5, size=n)
        if not normalized:
            scale = np.sqrt(rng.uniform(0.0, 1.0, size=n))
            covariance = covariance * np.outer(scale, scale)
            covariance = 0.5 * (covariance + covariance.T)
            base_mean = scale * base_mean

        condition = np.linalg.cond(covariance)
        if not np.isfinite(condition) or condition > max_condition:
            logger.debug("Rejected ill-conditioned covariance draw",
                         attempt=attempt, condition=float(condition))
            continue

        base_z = float(np.sqrt(base_mean @ solve(covariance, base_mean)))
        mean = base_mean * (z_goal / base_z)
        regime = Regime.DEPENDENT_NORMALIZED if normalized else Regime.DEPENDENT
        model = GaussianHypothesisModel(
            mean=mean, covariance=covariance, regime=regime, seed=seed,
            provenance={
                'realized_z': float(np.sqrt(mean @ solve(covariance, mean))),
                'condition_number': float(condition),
                'diag_range': list(diag_range),
                'mean_kind': mean_kind,
                'redraws': attempt,
            })
        logger.debug("Dependent model drawn", n=n, regime=regime.value,
                     realized_z=model.provenance['realized_z'], redraws=attempt)
        return model

    raise ModelInvalidError("Could not draw a well-conditioned covariance",
                            {'n': n, 'max_redraws': max_redraws})


def make_model(regime: Regime, n: int, target_z: float, rng: np.random.Generator,
               seed: Optional[int] = None, **kwargs) -> GaussianHypothesisModel:
    """Dispatch on regime; target_z is exact for IID, the calibration target otherwise"""
    if regime is Regime.IID:
        return make_iid_model(n, target_z)
    return make_dependent_model(n, normalized=regime is Regime.DEPENDENT_NORMALIZED, rng=rng,
                                target_z=target_z, seed=seed, **kwargs)


def sample(model: GaussianHypothesisModel, h: Hypothesis, rng: np.random.Generator,
           size: Optional[int] = None) -> np.ndarray:
    """
    Draw +-u + L g with g standard normal

    Returns a vector of length n, or an array (size, n) when size is given.
    """
    count = 1 if size is None else int(size)
    if count < 1:
        raise ParameterError("size must be positive", {'size': size})
    gaussian = rng.standard_normal((count, model.dim))
    draws = model.hypothesis_mean(h) + gaussian @ model.lower_factor.T
    return draws[0] if size is None else draws

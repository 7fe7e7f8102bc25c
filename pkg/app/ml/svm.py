"""
Two-class kernel SVM
Training (LibSVM's SMO through scikit-learn), discriminant, analytic gradients,
calibrated probability, cross-validated hyperparameters and JSON persistence.

Labels: +1 = manipulated (H0), -1 = original (H1); g(v) > 0 means manipulated.
A model may carry a feature normalizer and a reduction map, in which case it takes
full raw feature vectors v and evaluates g(S (v / scale)).
"""
import json
import warnings
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit
from sklearn.exceptions import ConvergenceWarning as SklearnConvergenceWarning
from sklearn.linear_model import LogisticRegression
from sklearn.metrics.pairwise import linear_kernel, polynomial_kernel, rbf_kernel
from sklearn.model_selection import StratifiedKFold
from sklearn.svm import SVC

from ..errors import ConvergenceWarning, ParameterError, ParseError, TrainingError
from ..imaging.spam import FeatureNormalizer
from ..monitoring import get_logger
from ..theory.reduction import ReductionMap

logger = get_logger('svm')

MODEL_SCHEMA_VERSION = 1
MANIPULATED = 1
ORIGINAL = -1
DEFAULT_GAMMA_GRID = tuple(2.0 ** e for e in range(-15, 4, 2))
DEFAULT_C_GRID = (1.0, 10.0, 100.0, 1000.0)
DUAL_SUM_TOLERANCE = 1e-6


class KernelKind(Enum):
    LINEAR = "linear"
    POLYNOMIAL = "polynomial"
    RBF = "rbf"


@dataclass(frozen=True)
class KernelSpec:
    kind: KernelKind = KernelKind.RBF
    gamma: float = 1.0
    coef0: float = 0.0
    degree: int = 3

    def __post_init__(self):
        if self.kind is KernelKind.RBF and not self.gamma > 0:
            raise ParameterError("RBF gamma must be positive", {'gamma': self.gamma})
        if self.kind is KernelKind.POLYNOMIAL and self.degree < 1:
            raise ParameterError("Polynomial degree must be >= 1", {'degree': self.degree})

    def matrix(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """Kernel values k(x_i, y_j)"""
        if self.kind is KernelKind.RBF:
            return rbf_kernel(X, Y, gamma=self.gamma)
        if self.kind is KernelKind.POLYNOMIAL:
            return polynomial_kernel(X, Y, degree=self.degree, gamma=1.0, coef0=self.coef0)
        return linear_kernel(X, Y)

    def sklearn_params(self) -> Dict[str, Any]:
        if self.kind is KernelKind.RBF:
            return {'kernel': 'rbf', 'gamma': self.gamma}
        if self.kind is KernelKind.POLYNOMIAL:
            return {'kernel': 'poly', 'degree': self.degree, 'gamma': 1.0, 'coef0': self.coef0}
        return {'kernel': 'linear'}

    def to_dict(self) -> Dict[str, Any]:
        return {'kind': self.kind.value, 'gamma': self.gamma, 'coef0': self.coef0,
                'degree': self.degree}


@dataclass(frozen=True)
class TrainConfig:
    C: float = 100.0
    gamma: Optional[float] = None
    gamma_grid: Tuple[float, ...] = DEFAULT_GAMMA_GRID
    c_grid: Optional[Tuple[float, ...]] = None
    folds: int = 5
    smo_tolerance: float = 1e-3
    max_passes: int = 1_000_000
    seed: int = 0
    kernel: KernelKind = KernelKind.RBF
    degree: int = 3
    coef0: float = 0.0

    def __post_init__(self):
        errors = []
        if not self.C > 0:
            errors.append("C must be positive")
        if self.folds < 2:
            errors.append("folds must be >= 2")
        if self.gamma is None and not self.gamma_grid:
            errors.append("gamma_grid must not be empty")
        if any(not g > 0 for g in self.gamma_grid):
            errors.append("gamma_grid values must be positive")
        if self.c_grid is not None and (not self.c_grid or any(not c > 0 for c in self.c_grid)):
            errors.append("c_grid values must be positive")
        if not self.smo_tolerance > 0:
            errors.append("smo_tolerance must be positive")
        if errors:
            raise ParameterError(f"Invalid training configuration: {'; '.join(errors)}")


@dataclass(frozen=True, eq=False)
class SvmModel:
    """g(v) = sum_i coef_i k(x(v), sv_i) + bias, with x(v) = S (v / scale)"""
    support_vectors: np.ndarray
    coefficients: np.ndarray
    bias: float
    kernel: KernelSpec
    prob_slope: float
    feature_dim: int
    normalizer: Optional[FeatureNormalizer] = None
    feature_map: Optional[ReductionMap] = None
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        sv = np.array(self.support_vectors, dtype=float)
        coef = np.array(self.coefficients, dtype=float).ravel()
        if sv.size == 0:
            sv = sv.reshape(0, self.input_dim)
        elif sv.ndim != 2:
            raise ParameterError("Support vectors must form a matrix", {'shape': sv.shape})
        if sv.shape[0] != coef.size:
            raise ParameterError("Coefficient count differs from support vector count",
                                 {'support_vectors': sv.shape[0], 'coefficients': coef.size})
        if sv.shape[1] != self.input_dim:
            raise ParameterError("Support vector length differs from model input",
                                 {'expected': self.input_dim, 'got': sv.shape[1]})
        if not self.prob_slope > 0:
            raise ParameterError("prob_slope must be positive", {'prob_slope': self.prob_slope})
        if self.normalizer is not None and self.normalizer.dim != self.feature_dim:
            raise ParameterError("Normalizer dimension differs from feature_dim")
        if self.feature_map is not None and self.feature_map.cols != self.feature_dim:
            raise ParameterError("Feature map dimension differs from feature_dim")
        sv.setflags(write=False)
        coef.setflags(write=False)
        object.__setattr__(self, 'support_vectors', sv)
        object.__setattr__(self, 'coefficients', coef)

    @property
    def input_dim(self) -> int:
        """Length of the vectors the kernel sees"""
        return self.feature_map.rows if self.feature_map is not None else self.feature_dim

    @property
    def n_support(self) -> int:
        return self.coefficients.size

    def _check(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape[-1] != self.feature_dim:
            raise ParameterError("Dimension mismatch", {'expected': self.feature_dim, 'got': v.shape[-1]})
        return v

    def encode(self, v: np.ndarray) -> np.ndarray:
        """Full raw features to the normalized full space (identity without normalizer)"""
        v = self._check(v)
        return self.normalizer.apply(v) if self.normalizer is not None else v

    def decode(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return self.normalizer.invert(u) if self.normalizer is not None else u

    def prepare(self, v: np.ndarray) -> np.ndarray:
        """x(v), the kernel input"""
        return self._select(self.encode(v))

    def _select(self, u: np.ndarray) -> np.ndarray:
        return self.feature_map.apply(u) if self.feature_map is not None else u

    def _kernel_discriminant(self, x: np.ndarray) -> np.ndarray:
        single = x.ndim == 1
        X = np.atleast_2d(x)
        if self.n_support == 0:
            scores = np.full(X.shape[0], self.bias)
        else:
            scores = self.kernel.matrix(X, self.support_vectors) @ self.coefficients + self.bias
        return float(scores[0]) if single else scores

    def _kernel_gradient(self, x: np.ndarray) -> np.ndarray:
        if self.n_support == 0:
            return np.zeros_like(x)
        sv, coef = self.support_vectors, self.coefficients
        if self.kernel.kind is KernelKind.LINEAR:
            return coef @ sv
        if self.kernel.kind is KernelKind.POLYNOMIAL:
            p = self.kernel.degree
            weights = coef * p * (sv @ x + self.kernel.coef0) ** (p - 1)
            return weights @ sv
        k = self.kernel.matrix(x[None, :], sv)[0]
        weights = coef * k
        return -2 * self.kernel.gamma * (weights.sum() * x - weights @ sv)

    def discriminant_encoded(self, u: np.ndarray):
        return self._kernel_discriminant(self._select(np.asarray(u, dtype=float)))

    def gradient_encoded(self, u: np.ndarray) -> np.ndarray:
        """Gradient of g with respect to the normalized full vector u"""
        grad = self._kernel_gradient(self._select(np.asarray(u, dtype=float)))
        return self.feature_map.lift(grad) if self.feature_map is not None else grad

    def discriminant(self, v: np.ndarray):
        """g(v) for one vector (float) or row-wise for a matrix"""
        return self._kernel_discriminant(self.prepare(v))

    def gradient(self, v: np.ndarray) -> np.ndarray:
        """Gradient of g with respect to the raw full vector v"""
        grad = self.gradient_encoded(self.encode(v))
        return grad / self.normalizer.scale if self.normalizer is not None else grad

    def probability_from_score(self, g):
        return expit(self.prob_slope * np.asarray(g, dtype=float))

    def probability(self, v: np.ndarray):
        p = self.probability_from_score(self.discriminant(v))
        return float(p) if np.ndim(p) == 0 else p

    def decide(self, v: np.ndarray):
        """True where the model says manipulated"""
        g = self.discriminant(v)
        return g > 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            'schema_version': MODEL_SCHEMA_VERSION,
            'kernel': self.kernel.to_dict(),
            'support_vectors': self.support_vectors.tolist(),
            'coefficients': self.coefficients.tolist(),
            'bias': self.bias,
            'prob_slope': self.prob_slope,
            'feature_dim': self.feature_dim,
            'normalizer': self.normalizer.to_dict() if self.normalizer is not None else None,
            'feature_map': self.feature_map.to_dict() if self.feature_map is not None else None,
            'meta': self.meta,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'SvmModel':
        required = ('schema_version', 'kernel', 'support_vectors', 'coefficients', 'bias',
                    'prob_slope', 'feature_dim')
        for key in required:
            if key not in data:
                raise ParseError(f"SVM model JSON is missing '{key}'", field=key)
        if data['schema_version'] != MODEL_SCHEMA_VERSION:
            raise ParseError(f"Unsupported model schema {data['schema_version']!r}",
                             field='schema_version')
        try:
            kernel_data = data['kernel']
            kernel = KernelSpec(kind=KernelKind(kernel_data['kind']),
                                gamma=float(kernel_data.get('gamma', 1.0)),
                                coef0=float(kernel_data.get('coef0', 0.0)),
                                degree=int(kernel_data.get('degree', 3)))
        except (KeyError, ValueError) as e:
            raise ParseError(f"Invalid kernel specification: {e}", field='kernel')

        coefficients = np.asarray(data['coefficients'], dtype=float)
        support_vectors = np.asarray(data['support_vectors'], dtype=float)
        if coefficients.ndim != 1 or len(support_vectors) != coefficients.size:
            raise ParseError("Coefficient count differs from support vector count",
                             field='coefficients')
        if abs(coefficients.sum()) > DUAL_SUM_TOLERANCE * max(1.0, np.abs(coefficients).sum()):
            raise ParseError("Coefficients violate the dual equality constraint",
                             field='coefficients')
        if not float(data['prob_slope']) > 0:
            raise ParseError("prob_slope must be positive", field='prob_slope')

        normalizer = None
        if data.get('normalizer') is not None:
            normalizer = FeatureNormalizer.from_dict(data['normalizer'])
        feature_map = None
        if data.get('feature_map') is not None:
            feature_map = ReductionMap.from_dict(data['feature_map'])
        try:
            return cls(support_vectors=support_vectors, coefficients=coefficients,
                       bias=float(data['bias']), kernel=kernel,
                       prob_slope=float(data['prob_slope']), feature_dim=int(data['feature_dim']),
                       normalizer=normalizer, feature_map=feature_map,
                       meta=data.get('meta', {}))
        except ParameterError as e:
            raise ParseError(f"Invalid SVM model: {e.message}", field='support_vectors')


def save_model(model: SvmModel, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model.to_dict()))
    return path


def load_model(path: Path) -> SvmModel:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"Invalid model JSON: {e.msg}", offset=e.pos)
    return SvmModel.from_dict(data)


def _check_labels(labels: np.ndarray, folds: int = 2) -> np.ndarray:
    labels = np.asarray(labels).astype(int).ravel()
    if not np.all(np.isin(labels, (MANIPULATED, ORIGINAL))):
        raise TrainingError("Labels must be +1 (manipulated) or -1 (original)")
    for label in (MANIPULATED, ORIGINAL):
        count = int(np.count_nonzero(labels == label))
        if count < max(2, folds):
            raise TrainingError("Not enough examples of one class",
                                {'label': label, 'count': count, 'needed': max(2, folds)})
    return labels


def canonical_order(X: np.ndarray, y: np.ndarray, seed: int) -> np.ndarray:
    """Row order that depends on the data and the seed only, never on the input order"""
    keys = [y] + [X[:, j] for j in range(X.shape[1] - 1, -1, -1)]
    sorted_idx = np.lexsort(keys)
    permutation = np.random.default_rng(seed).permutation(len(sorted_idx))
    return sorted_idx[permutation]


def _fit_svc(X: np.ndarray, y: np.ndarray, kernel: KernelSpec, C: float,
             config: TrainConfig) -> Tuple[SVC, bool]:
    svc = SVC(C=C, tol=config.smo_tolerance, max_iter=config.max_passes, shrinking=True,
              cache_size=500, **kernel.sklearn_params())
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter('always', SklearnConvergenceWarning)
        svc.fit(X, y)
    converged = not any(issubclass(w.category, SklearnConvergenceWarning) for w in caught)
    return svc, converged


def _kernel_for(config: TrainConfig, gamma: float) -> KernelSpec:
    return KernelSpec(kind=config.kernel, gamma=gamma, coef0=config.coef0, degree=config.degree)


@dataclass
class GridSearchResult:
    gamma: float
    C: float
    accuracy: Dict[Tuple[float, float], float]


def select_hyperparameters(X: np.ndarray, labels: np.ndarray, config: TrainConfig) -> GridSearchResult:
    """
    Stratified k-fold accuracy over the gamma grid (and the C grid when given)

    X are kernel inputs. Ties go to the smaller gamma, then the smaller C.
    """
    X = np.asarray(X, dtype=float)
    y = _check_labels(labels, config.folds)
    gammas = sorted(set(config.gamma_grid)) if config.gamma is None else [config.gamma]
    cs = sorted(set(config.c_grid)) if config.c_grid else [config.C]
    folds = StratifiedKFold(n_splits=config.folds, shuffle=True,
                            random_state=config.seed % (2 ** 32))
    order = canonical_order(X, y, config.seed)
    X, y = X[order], y[order]
    splits = list(folds.split(X, y))

    accuracy = {}
    best = None
    for gamma in gammas:
        kernel = _kernel_for(config, gamma)
        for C in cs:
            correct = 0
            for train_idx, test_idx in splits:
                svc, _ = _fit_svc(X[train_idx], y[train_idx], kernel, C, config)
                correct += int(np.count_nonzero(svc.predict(X[test_idx]) == y[test_idx]))
            score = correct / len(y)
            accuracy[(gamma, C)] = score
            # Strict improvement only, so earlier (smaller) values win ties
            if best is None or score > best[0]:
                best = (score, gamma, C)
            logger.debug("Grid point evaluated", gamma=gamma, C=C, accuracy=score)

    logger.info("Hyperparameters selected", gamma=best[1], C=best[2], accuracy=best[0])
    return GridSearchResult(gamma=best[1], C=best[2], accuracy=accuracy)


def select_gamma(features: np.ndarray, labels: np.ndarray, config: TrainConfig) -> float:
    return select_hyperparameters(features, labels, config).gamma


def fit_probability_slope(scores: np.ndarray, labels: np.ndarray) -> float:
    """Slope A of p = 1 / (1 + exp(-A g)), intercept pinned to zero; 1.0 if the fit is not positive"""
    regression = LogisticRegression(fit_intercept=False)
    regression.fit(np.asarray(scores, dtype=float).reshape(-1, 1), np.asarray(labels))
    slope = float(regression.coef_[0, 0])
    if not np.isfinite(slope) or slope <= 0:
        logger.warning("Probability slope fit not positive, using 1.0", slope=slope)
        return 1.0
    return slope


def train(features: np.ndarray, labels: Sequence[int], config: TrainConfig = TrainConfig(),
          normalizer: Optional[FeatureNormalizer] = None,
          feature_map: Optional[ReductionMap] = None) -> SvmModel:
    """
    Train an SVM on raw full feature vectors

    The normalizer and feature map are applied before the kernel and stored in the model.

    Raises:
        TrainingError: single-class data or too few examples for the folds
    Warns:
        ConvergenceWarning: the SMO iteration cap was hit; the model is still returned
    """
    features = np.asarray(features, dtype=float)
    if features.ndim != 2:
        raise ParameterError("features must be a matrix", {'shape': features.shape})
    needed_folds = config.folds if config.gamma is None or config.c_grid else 2
    y = _check_labels(labels, needed_folds)
    if len(y) != features.shape[0]:
        raise ParameterError("features and labels differ in length")

    X = features / normalizer.scale if normalizer is not None else features
    if feature_map is not None:
        X = feature_map.apply(X)

    if config.gamma is None or config.c_grid:
        choice = select_hyperparameters(X, y, config)
        gamma, C = choice.gamma, choice.C
    else:
        gamma, C = config.gamma, config.C

    order = canonical_order(X, y, config.seed)
    kernel = _kernel_for(config, gamma)
    svc, converged = _fit_svc(X[order], y[order], kernel, C, config)
    if not converged:
        warnings.warn(f"SMO stopped at max_passes={config.max_passes}; returning best-so-far model",
                      ConvergenceWarning)
        logger.warning("SVM training did not converge", max_passes=config.max_passes)

    coefficients = svc.dual_coef_[0].copy()
    bias = float(svc.intercept_[0])
    support_vectors = svc.support_vectors_.copy()
    scores = kernel.matrix(X, support_vectors) @ coefficients + bias
    slope = fit_probability_slope(scores, y)

    model = SvmModel(support_vectors=support_vectors, coefficients=coefficients, bias=bias,
                     kernel=kernel, prob_slope=slope, feature_dim=features.shape[1],
                     normalizer=normalizer, feature_map=feature_map,
                     meta={'C': C, 'gamma': gamma, 'training_size': int(len(y)),
                           'converged': converged, 'seed': config.seed,
                           'training_accuracy': float(np.mean(np.where(scores > 0, 1, -1) == y))})
    logger.info("SVM trained", gamma=gamma, C=C, support_vectors=model.n_support,
                training_size=len(y), converged=converged, prob_slope=slope)
    return model


def kkt_residual(model: SvmModel, features: np.ndarray, labels: Sequence[int], C: float) -> float:
    """
    Largest KKT violation of the trained dual over the training set

    alpha = 0 needs y g >= 1, 0 < alpha < C needs y g = 1, alpha = C needs y g <= 1.
    """
    X = model.prepare(features)
    y = np.asarray(labels, dtype=float)
    margins = y * model._kernel_discriminant(X)
    alpha = np.zeros(len(y))
    sv = model.support_vectors
    for coef, vector in zip(model.coefficients, sv):
        matches = np.where(np.all(X == vector, axis=1))[0]
        alpha[matches] = abs(coef)
    bound = C * (1 - 1e-9)
    residual = np.where(alpha <= 0, np.maximum(0, 1 - margins),
                        np.where(alpha >= bound, np.maximum(0, margins - 1), np.abs(margins - 1)))
    return float(residual.max()) if residual.size else 0.0


def support_vector_fraction(model: SvmModel) -> float:
    size = model.meta.get('training_size')
    return model.n_support / size if size else float('nan')


def training_summary(models: Dict[str, SvmModel]) -> List[Dict[str, Any]]:
    """Support vector statistics per named model"""
    return [{'manipulation': name, 'support_vectors': model.n_support,
             'training_size': model.meta.get('training_size'),
             'sv_fraction': support_vector_fraction(model),
             'gamma': model.kernel.gamma, 'C': model.meta.get('C')}
            for name, model in sorted(models.items())]

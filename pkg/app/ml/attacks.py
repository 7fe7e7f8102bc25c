"""
Attacks against SVM detectors
Feature-domain gradient descent, pixel-domain greedy search over +-1 changes,
and descent on the average of an ensemble of reduced detectors
"""
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import AttackStalledError, ParameterError
from ..imaging.manipulations import DistortionReport, distortion_report
from ..imaging.spam import SpamCache, extract_spam
from ..monitoring import get_logger
from .svm import SvmModel

logger = get_logger('attacks')

GRADIENT_FLOOR = 1e-12
MAX_HALVINGS = 40


class AttackStatus(Enum):
    SUCCESS = "success"
    ALREADY_EVADED = "already_evaded"
    STALLED = "stalled"
    BUDGET_EXHAUSTED = "budget_exhausted"


def _check_epsilon(epsilon: float):
    if not 0 < epsilon <= 0.5:
        raise ParameterError("epsilon must lie in (0, 0.5]", {'epsilon': epsilon})


@dataclass(frozen=True)
class FeatureAttackConfig:
    epsilon: float = 0.5
    step_size: Optional[float] = None
    max_iterations: int = 5000
    record_trace: bool = False
    margin: Optional[float] = None

    def __post_init__(self):
        _check_epsilon(self.epsilon)
        if self.step_size is not None and not self.step_size > 0:
            raise ParameterError("step_size must be positive", {'step_size': self.step_size})
        if self.max_iterations < 1:
            raise ParameterError("max_iterations must be >= 1")
        if self.margin is not None and self.margin < 0:
            raise ParameterError("margin must be >= 0", {'margin': self.margin})


@dataclass(frozen=True)
class PixelAttackConfig:
    epsilon: float = 0.5
    pixel_fraction: float = 0.20
    max_iterations: int = 50
    chunk_size: int = 2048

    def __post_init__(self):
        _check_epsilon(self.epsilon)
        if not 0 < self.pixel_fraction <= 1:
            raise ParameterError("pixel_fraction must lie in (0, 1]",
                                 {'pixel_fraction': self.pixel_fraction})
        if self.max_iterations < 1:
            raise ParameterError("max_iterations must be >= 1")


@dataclass(frozen=True)
class EotAttackConfig:
    ensemble_size: int = 50
    k: int = 100
    epsilon: float = 0.5
    seed: int = 0
    step_size: Optional[float] = None
    max_iterations: int = 5000

    def __post_init__(self):
        _check_epsilon(self.epsilon)
        if self.ensemble_size < 1:
            raise ParameterError("ensemble_size must be >= 1")
        if self.k < 1:
            raise ParameterError("k must be >= 1")

    def as_feature_config(self) -> FeatureAttackConfig:
        return FeatureAttackConfig(epsilon=self.epsilon, step_size=self.step_size,
                                   max_iterations=self.max_iterations)


@dataclass
class AttackOutcome:
    attacked: np.ndarray
    status: AttackStatus
    iterations: int
    initial_probability: float
    final_probability: float
    distortion: DistortionReport
    trace: List[float] = field(default_factory=list)
    backoffs: int = 0

    @property
    def success(self) -> bool:
        return self.status in (AttackStatus.SUCCESS, AttackStatus.ALREADY_EVADED)

    def to_dict(self):
        return {
            'status': self.status.value,
            'success': self.success,
            'iterations': self.iterations,
            'initial_probability': self.initial_probability,
            'final_probability': self.final_probability,
            'psnr_db': self.distortion.psnr_db,
            'feature_snr_db': self.distortion.feature_snr_db,
            'euclidean_distortion': self.distortion.euclidean,
            'backoffs': self.backoffs,
        }


def _reached(probability: float, score: float, epsilon: float, margin: Optional[float]) -> bool:
    if probability > epsilon:
        return False
    return margin is None or score <= -margin


@dataclass
class _DescentResult:
    x: np.ndarray
    status: AttackStatus
    iterations: int
    probability: float
    trace: List[float]


def _descend(x0: np.ndarray, evaluate: Callable[[np.ndarray], Tuple[float, float]],
             gradient: Callable[[np.ndarray], np.ndarray], config: FeatureAttackConfig) -> _DescentResult:
    """
    Normalized-gradient descent on a score with backtracking

    evaluate(x) returns (score, probability); steps are accepted only if the score
    strictly decreases, halving the step until it does.
    """
    x = np.array(x0, dtype=float)
    score, probability = evaluate(x)
    trace = [probability] if config.record_trace else []
    if _reached(probability, score, config.epsilon, config.margin):
        return _DescentResult(x, AttackStatus.ALREADY_EVADED, 0, probability, trace)

    base_step = config.step_size or 0.01 * float(np.linalg.norm(x)) or 0.01
    step = base_step
    iteration = 0
    try:
        for iteration in range(1, config.max_iterations + 1):
            grad = gradient(x)
            norm = float(np.linalg.norm(grad))
            if norm < GRADIENT_FLOOR:
                raise AttackStalledError("Gradient vanished", iterations=iteration)
            direction = grad / norm
            for _ in range(MAX_HALVINGS):
                candidate = x - step * direction
                new_score, new_probability = evaluate(candidate)
                if new_score < score:
                    break
                step /= 2
            else:
                raise AttackStalledError("No decreasing step found", iterations=iteration)

            x, score, probability = candidate, new_score, new_probability
            step = min(2 * step, base_step)
            if config.record_trace:
                trace.append(probability)
            if _reached(probability, score, config.epsilon, config.margin):
                return _DescentResult(x, AttackStatus.SUCCESS, iteration, probability, trace)
    except AttackStalledError as e:
        logger.info("Attack stalled", reason=e.message, iterations=e.iterations)
        return _DescentResult(x, AttackStatus.STALLED, e.iterations, probability, trace)
    return _DescentResult(x, AttackStatus.BUDGET_EXHAUSTED, iteration, probability, trace)


def _outcome(v: np.ndarray, attacked: np.ndarray, result: _DescentResult,
             initial_probability: float) -> AttackOutcome:
    outcome = AttackOutcome(attacked=attacked, status=result.status, iterations=result.iterations,
                            initial_probability=initial_probability,
                            final_probability=result.probability,
                            distortion=distortion_report(v, attacked), trace=result.trace)
    return outcome


def attack_feature_domain(model: SvmModel, v: np.ndarray,
                          config: FeatureAttackConfig = FeatureAttackConfig()) -> AttackOutcome:
    """
    Move v against the gradient of g until p(v) <= epsilon

    For models with a normalizer the descent runs in normalized space and the result is
    mapped back to raw features.
    """
    v = np.asarray(v, dtype=float)
    u0 = model.encode(v)

    def evaluate(u):
        g = model.discriminant_encoded(u)
        return g, float(model.probability_from_score(g))

    result = _descend(u0, evaluate, model.gradient_encoded, config)
    attacked = v.copy() if result.status is AttackStatus.ALREADY_EVADED else model.decode(result.x)
    outcome = _outcome(v, attacked, result, evaluate(u0)[1])
    logger.debug("Feature attack finished", status=outcome.status.value,
                 iterations=outcome.iterations, probability=outcome.final_probability)
    return outcome


def _shared_normalizer(models: Sequence[SvmModel]):
    first = models[0].normalizer
    for model in models[1:]:
        other = model.normalizer
        if (first is None) != (other is None):
            return None
        if first is not None and not np.array_equal(first.scale, other.scale):
            return None
    return first


def attack_eot(models: Sequence[SvmModel], v: np.ndarray,
               config: EotAttackConfig = EotAttackConfig()) -> AttackOutcome:
    """
    Descend on the average discriminant of reduced detectors

    Every model carries its own reduction map and sees S_i v; the gradient is the
    average of the lifted gradients. Success means the average probability is <= epsilon.
    """
    if not models:
        raise ParameterError("EOT attack needs at least one model")
    dims = {model.feature_dim for model in models}
    if len(dims) != 1:
        raise ParameterError("Ensemble models differ in feature dimension", {'dims': sorted(dims)})
    v = np.asarray(v, dtype=float)
    normalizer = _shared_normalizer(models)
    if normalizer is not None:
        # Descend in the shared normalized space
        start = normalizer.apply(v)
        to_raw = normalizer.invert
        scores = lambda u: np.array([m.discriminant_encoded(u) for m in models])
        grads = lambda u: np.mean([m.gradient_encoded(u) for m in models], axis=0)
    else:
        start = v
        to_raw = lambda x: x
        scores = lambda x: np.array([m.discriminant(x) for m in models])
        grads = lambda x: np.mean([m.gradient(x) for m in models], axis=0)

    def evaluate(x):
        g = scores(x)
        mean_p = float(np.mean([m.probability_from_score(gi) for m, gi in zip(models, g)]))
        return float(g.mean()), mean_p

    result = _descend(start, evaluate, grads, config.as_feature_config())
    attacked = v.copy() if result.status is AttackStatus.ALREADY_EVADED else to_raw(result.x)
    outcome = _outcome(v, attacked, result, evaluate(start)[1])
    logger.debug("EOT attack finished", ensemble=len(models), status=outcome.status.value,
                 iterations=outcome.iterations)
    return outcome


def _candidate_edits(pixels: np.ndarray):
    """Every in-range +1 / -1 single-pixel change: (flat index, rows, cols, new values)"""
    height, width = pixels.shape
    flat = np.arange(height * width)
    rows, cols = np.divmod(flat, width)
    values = pixels.ravel().astype(np.int64)
    edits = []
    for delta in (1, -1):
        new = values + delta
        valid = (new >= 0) & (new <= 255)
        edits.append((flat[valid], rows[valid], cols[valid], new[valid]))
    return tuple(np.concatenate(parts) for parts in zip(*edits))


def _candidate_probabilities(model: SvmModel, cache: SpamCache, rows: np.ndarray, cols: np.ndarray,
                             values: np.ndarray, chunk_size: int) -> np.ndarray:
    probabilities = np.empty(rows.size)
    for start in range(0, rows.size, chunk_size):
        part = slice(start, start + chunk_size)
        features = cache.candidate_features(rows[part], cols[part], values[part], chunk_size)
        probabilities[part] = model.probability(features)
    return probabilities


def attack_pixel_domain(model: SvmModel, image: np.ndarray,
                        config: PixelAttackConfig = PixelAttackConfig()) -> AttackOutcome:
    """
    Greedy +-1 pixel changes chosen by their exact effect on p(f(I))

    Each iteration scores every candidate change with incremental SPAM updates, keeps the
    best change per pixel, applies the top pixel_fraction of pixels with a negative
    effect, and recomputes the features. If the joint change does not lower p, the number
    of applied pixels is halved until it does.
    """
    image = np.asarray(image)
    if image.ndim != 2:
        raise ParameterError("Pixel attack needs a grayscale image", {'shape': image.shape})
    original = image.astype(np.uint8)
    cache = SpamCache(original)
    v0 = cache.features()
    probability = float(model.probability(v0))
    initial_probability = probability
    if probability <= config.epsilon:
        return AttackOutcome(attacked=original.copy(), status=AttackStatus.ALREADY_EVADED,
                             iterations=0, initial_probability=probability,
                             final_probability=probability,
                             distortion=distortion_report(v0, v0, original, original))

    n_pixels = original.size
    budget = max(1, math.ceil(config.pixel_fraction * n_pixels))
    status = AttackStatus.BUDGET_EXHAUSTED
    backoffs = 0
    trace = [probability]
    iteration = 0
    for iteration in range(1, config.max_iterations + 1):
        flat, rows, cols, values = _candidate_edits(cache.pixels)
        delta_p = _candidate_probabilities(model, cache, rows, cols, values,
                                           config.chunk_size) - probability

        # Best change per pixel, ties resolved by candidate order
        order = np.lexsort((np.arange(flat.size), delta_p))
        _, first = np.unique(flat[order], return_index=True)
        best = order[first]
        best = best[delta_p[best] < 0]
        if best.size == 0:
            logger.info("Pixel attack stalled", iterations=iteration, probability=probability)
            status = AttackStatus.STALLED
            break
        best = best[np.lexsort((flat[best], delta_p[best]))]

        count = min(budget, best.size)
        while True:
            chosen = best[:count]
            trial = cache.pixels.copy()
            trial[rows[chosen], cols[chosen]] = values[chosen]
            new_probability = float(model.probability(extract_spam(trial)))
            if new_probability < probability or count == 1:
                break
            count //= 2
            backoffs += 1

        if not new_probability < probability:
            status = AttackStatus.STALLED
            break
        cache = SpamCache(trial)
        probability = new_probability
        trace.append(probability)
        logger.debug("Pixel attack iteration", iteration=iteration, changed=count,
                     probability=probability)
        if probability <= config.epsilon:
            status = AttackStatus.SUCCESS
            break

    attacked = cache.image()
    outcome = AttackOutcome(attacked=attacked, status=status, iterations=iteration,
                            initial_probability=initial_probability,
                            final_probability=probability,
                            distortion=distortion_report(v0, cache.features(), original, attacked),
                            trace=trace, backoffs=backoffs)
    logger.info("Pixel attack finished", status=status.value, iterations=iteration,
                psnr_db=outcome.distortion.psnr_db, backoffs=backoffs)
    return outcome


def success_rate(outcomes: Sequence[AttackOutcome]) -> float:
    """Fraction of successful outcomes; stalled and exhausted attacks count as failures"""
    if not outcomes:
        return math.nan
    return sum(o.success for o in outcomes) / len(outcomes)

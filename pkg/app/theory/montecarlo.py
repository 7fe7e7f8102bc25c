"""
Monte Carlo studies of the reduced detectors
Error probability as a function of k (with and without the full-detector attack)
and histograms of the angle mismatch between reduced detector and attack direction
"""
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import ParameterError, RfsError
from ..monitoring import get_logger, log_performance
from ..services.batch_processor import TaskPool
from ..services.results import write_table
from ..services.seeds import derive_rng, derive_seed
from .attack import angle_mismatch, attacked_statistics, optimal_attack
from .detector import build_detector, eta, z_value
from .models import GaussianHypothesisModel, Hypothesis, Regime, make_model, sample
from .reduction import ReductionKind, draw_map, reduce_model

logger = get_logger('montecarlo')

ANGLE_BIN_WIDTH = 5.0

SWEEP_COLUMNS = (
    'kind', 'k', 'alpha', 'repetitions', 'samples',
    'realized_z', 'eta', 'z_att',
    'p_md_no_attack', 'p_md_attack',
    'empirical_md_no_attack', 'stderr_no_attack',
    'empirical_md_attack', 'stderr_attack',
    'empirical_md_attack_realistic', 'stderr_attack_realistic',
)

HISTOGRAM_COLUMNS = ('k', 'bin_lo', 'bin_hi', 'count')


@dataclass(frozen=True)
class TheorySweepConfig:
    """One error-probability sweep over (kind, k, alpha)"""
    n: int = 300
    z_target: float = 4.0
    alphas: Tuple[float, ...] = (1.2,)
    ks: Tuple[int, ...] = (1, 50, 100, 150, 200, 250, 300)
    kinds: Tuple[ReductionKind, ...] = (ReductionKind.RFS,)
    regime: Regime = Regime.IID
    repetitions: int = 200
    samples_per_point: int = 10_000
    master_seed: int = 0
    empirical: bool = True
    mean_kind: str = 'constant'

    def __post_init__(self):
        object.__setattr__(self, 'alphas', tuple(float(a) for a in self.alphas))
        object.__setattr__(self, 'ks', tuple(int(k) for k in self.ks))
        object.__setattr__(self, 'kinds', tuple(ReductionKind(k) for k in self.kinds))
        errors = []
        if self.n < 1:
            errors.append("n must be positive")
        if not self.ks or any(not 1 <= k <= self.n for k in self.ks):
            errors.append(f"every k must lie in [1, {self.n}]")
        if not self.alphas or any(not a >= 1 for a in self.alphas):
            errors.append("every alpha must be >= 1")
        if not self.kinds:
            errors.append("at least one reduction kind is required")
        if self.repetitions < 1:
            errors.append("repetitions must be >= 1")
        if self.samples_per_point < 1:
            errors.append("samples_per_point must be >= 1")
        if not self.z_target > 0:
            errors.append("z_target must be positive")
        if errors:
            raise ParameterError(f"Invalid sweep configuration: {'; '.join(errors)}")

    @property
    def samples_per_repetition(self) -> int:
        """Empirical samples are split evenly over the repetitions of a point"""
        return max(1, self.samples_per_point // self.repetitions)


@dataclass
class SweepRow:
    kind: ReductionKind
    k: int
    alpha: float
    repetitions: int
    samples: int
    realized_z: float
    eta: float
    z_att: float
    p_md_no_attack: float
    p_md_attack: float
    empirical_md_no_attack: Optional[float] = None
    stderr_no_attack: Optional[float] = None
    empirical_md_attack: Optional[float] = None
    stderr_attack: Optional[float] = None
    empirical_md_attack_realistic: Optional[float] = None
    stderr_attack_realistic: Optional[float] = None

    def to_record(self) -> Dict[str, Any]:
        record = dict(self.__dict__)
        record['kind'] = self.kind.value
        return record


@dataclass
class SweepResult:
    config: TheorySweepConfig
    rows: List[SweepRow] = field(default_factory=list)

    def row(self, kind: ReductionKind, k: int, alpha: float) -> SweepRow:
        for row in self.rows:
            if row.kind is kind and row.k == k and row.alpha == alpha:
                return row
        raise KeyError((kind, k, alpha))

    def write_csv(self, path: Path) -> Path:
        c = self.config
        description = [
            f"error-probability sweep: regime={c.regime.value} n={c.n} z_target={c.z_target!r} "
            f"master_seed={c.master_seed}",
            "p_md_* are analytic averages over repetitions; empirical_md_* are missed-detection "
            "rates of the reduced detector on sampled H0 features",
            "attack = full-detector attack applied to every sample; attack_realistic = only to "
            "samples the full detector flags; stderr = sqrt(p(1-p)/samples)",
        ]
        return write_table(path, (row.to_record() for row in self.rows), SWEEP_COLUMNS, description)


def binomial_stderr(p: float, count: int) -> float:
    return math.sqrt(p * (1 - p) / count) if count > 0 else math.nan


def _model_for_repetition(config: TheorySweepConfig, repetition: int) -> GaussianHypothesisModel:
    # iid models are fixed; dependent models are redrawn per repetition
    if config.regime is Regime.IID:
        return make_model(Regime.IID, config.n, config.z_target, rng=None)
    seed = derive_seed(config.master_seed, 'model', repetition)
    return make_model(config.regime, config.n, config.z_target, np.random.default_rng(seed),
                      seed=seed, mean_kind=config.mean_kind)


def _run_repetition(config: TheorySweepConfig, repetition: int) -> Dict[tuple, Dict[str, float]]:
    """Analytic values and empirical error counts of every sweep point for one model draw"""
    model = _model_for_repetition(config, repetition)
    detector = build_detector(model)
    realized_z = z_value(model)
    m = config.samples_per_repetition
    points = {}

    for kind in config.kinds:
        for k in config.ks:
            for alpha_idx, alpha in enumerate(config.alphas):
                coords = (kind.value, k, alpha_idx, repetition)
                try:
                    map_seed = derive_seed(config.master_seed, 'map', *coords)
                    reduction = draw_map(kind, config.n, k, np.random.default_rng(map_seed),
                                         seed=map_seed)
                    stats = attacked_statistics(model, reduction, alpha)
                    point = {
                        'realized_z': realized_z,
                        'eta': eta(model, reduction),
                        'z_att': stats.z_att,
                        'p_md_no_attack': stats.p_md_no_attack,
                        'p_md_attack': stats.p_md_attack,
                    }
                    if config.empirical:
                        point.update(_empirical_counts(config, model, detector, reduction,
                                                       alpha, m, coords))
                except RfsError as e:
                    raise e.with_context(kind=kind.value, k=k, alpha=alpha, repetition=repetition)
                points[(kind.value, k, alpha_idx)] = point
    return points


def _empirical_counts(config: TheorySweepConfig, model, detector, reduction, alpha: float,
                      m: int, coords: tuple) -> Dict[str, float]:
    rng = derive_rng(config.master_seed, 'samples', *coords)
    samples = sample(model, Hypothesis.H0_MANIPULATED, rng, size=m)
    reduced_detector = build_detector(reduce_model(reduction, model))

    def missed(features: np.ndarray) -> int:
        # Zero scores go to H1, i.e. count as missed
        return int(np.count_nonzero(reduced_detector.score(reduction.apply(features)) <= 0))

    attacked = optimal_attack(detector, samples, alpha)
    flagged = detector.score(samples) > 0
    realistic = np.where(flagged[:, None], attacked, samples)
    return {
        'missed_no_attack': missed(samples),
        'missed_attack': missed(attacked),
        'missed_attack_realistic': missed(realistic),
        'samples': m,
    }


@log_performance("theory_error_sweep")
def run_error_sweep(config: TheorySweepConfig, pool: Optional[TaskPool] = None) -> SweepResult:
    """
    Error probabilities of reduced detectors against k

    Each repetition is an independent pool task; the model of repetition r and the map
    of point (kind, k, alpha_index, r) come from seeds derived from the master seed, so
    any point can be recomputed alone.
    """
    pool = pool or TaskPool(name='error-sweep')
    logger.info("Error sweep started", regime=config.regime.value, n=config.n,
                points=len(config.kinds) * len(config.ks) * len(config.alphas),
                repetitions=config.repetitions)
    per_repetition = pool.map(lambda r: _run_repetition(config, r), range(config.repetitions))

    sums: Dict[tuple, Dict[str, float]] = defaultdict(lambda: defaultdict(float))
    for _, points in per_repetition:
        for key in sorted(points):
            for name, value in points[key].items():
                sums[key][name] += value

    result = SweepResult(config=config)
    reps = config.repetitions
    for kind in config.kinds:
        for k in config.ks:
            for alpha_idx, alpha in enumerate(config.alphas):
                total = sums[(kind.value, k, alpha_idx)]
                samples = int(total.get('samples', 0))
                row = SweepRow(kind=kind, k=k, alpha=alpha, repetitions=reps, samples=samples,
                               realized_z=total['realized_z'] / reps,
                               eta=total['eta'] / reps,
                               z_att=total['z_att'] / reps,
                               p_md_no_attack=total['p_md_no_attack'] / reps,
                               p_md_attack=total['p_md_attack'] / reps)
                if config.empirical:
                    for suffix in ('no_attack', 'attack', 'attack_realistic'):
                        p = total[f'missed_{suffix}'] / samples
                        setattr(row, f'empirical_md_{suffix}', p)
                        setattr(row, f'stderr_{suffix}', binomial_stderr(p, samples))
                result.rows.append(row)
                logger.debug("Sweep point aggregated", kind=kind.value, k=k, alpha=alpha,
                             p_md_attack=row.p_md_attack)
    logger.info("Error sweep finished", rows=len(result.rows))
    return result


@dataclass
class AngleHistogram:
    """Counts per (k, bin); bins are [lo, hi) except the last, which includes 90"""
    edges: np.ndarray
    counts: Dict[int, np.ndarray]
    angles: Dict[int, np.ndarray]

    def mean_angle(self, k: int) -> float:
        return float(np.mean(self.angles[k]))

    def rows(self) -> List[Dict[str, Any]]:
        rows = []
        for k in sorted(self.counts):
            for i, count in enumerate(self.counts[k]):
                rows.append({'k': k, 'bin_lo': float(self.edges[i]),
                             'bin_hi': float(self.edges[i + 1]), 'count': int(count)})
        return rows

    def write_csv(self, path: Path, description: Optional[List[str]] = None) -> Path:
        return write_table(path, self.rows(), HISTOGRAM_COLUMNS,
                           description or ["angle mismatch histogram in degrees"])


def _angles_for_k(n: int, k: int, draws: int, regime: Regime, kind: ReductionKind,
                  master_seed: int, z_target: float) -> np.ndarray:
    angles = np.empty(draws)
    for draw in range(draws):
        rng = derive_rng(master_seed, 'angle', kind.value, k, draw)
        try:
            model = make_model(regime, n, z_target, rng)
            reduction = draw_map(kind, n, k, rng)
            angles[draw] = angle_mismatch(model, reduction)
        except RfsError as e:
            raise e.with_context(k=k, draw=draw)
    return angles


@log_performance("angle_histogram")
def run_angle_histogram(n: int, ks: Sequence[int], draws: int, normalized: bool = True,
                        master_seed: int = 0, regime: Optional[Regime] = None,
                        kind: ReductionKind = ReductionKind.RFS, z_target: float = 5.0,
                        bin_width: float = ANGLE_BIN_WIDTH,
                        pool: Optional[TaskPool] = None) -> AngleHistogram:
    """
    Histogram of angle_mismatch over random (model, map) pairs for each k

    Args:
        normalized: Dependent-normalized models when True, dependent otherwise
        regime: Overrides the regime chosen by normalized (e.g. Regime.IID)
    """
    if draws < 1:
        raise ParameterError("draws must be >= 1", {'draws': draws})
    if any(not 1 <= k <= n for k in ks):
        raise ParameterError(f"every k must lie in [1, {n}]", {'ks': list(ks)})
    if regime is None:
        regime = Regime.DEPENDENT_NORMALIZED if normalized else Regime.DEPENDENT

    pool = pool or TaskPool(name='angle-histogram')
    logger.info("Angle histogram started", n=n, ks=list(ks), draws=draws, regime=regime.value)
    results = pool.map(
        lambda k: _angles_for_k(n, k, draws, regime, kind, master_seed, z_target), list(ks))

    edges = np.arange(0.0, 90.0 + bin_width / 2, bin_width)
    histogram = AngleHistogram(edges=edges, counts={}, angles={})
    for k, angles in results:
        histogram.counts[k] = np.histogram(angles, bins=edges)[0]
        histogram.angles[k] = angles
        logger.info("Angle histogram computed", k=k, mean_angle=float(angles.mean()))
    return histogram

"""
Security of randomized feature selection against attacks on the full detector

For every k and every seeded map a reduced SVM is retrained on the selected features;
its false alarm on originals and missed detection on clean and attacked manipulated
samples are recorded per map, then averaged per k.
"""
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from ..errors import ParameterError, RfsError
from ..imaging.spam import FeatureNormalizer
from ..monitoring import get_logger
from ..services.batch_processor import TaskPool
from ..services.results import write_table
from ..services.seeds import derive_seed
from ..theory.reduction import ReductionKind, ReductionMap, draw_map
from .svm import MANIPULATED, ORIGINAL, SvmModel, TrainConfig, train

logger = get_logger('evaluation')

SECURITY_COLUMNS = ('manipulation', 'k', 'map_seed', 'fa', 'md_clean', 'md_attacked',
                    'epsilon', 'attack_kind')
SUMMARY_COLUMNS = ('manipulation', 'k', 'maps', 'epsilon', 'attack_kind',
                   'fa', 'fa_stderr', 'md_clean', 'md_clean_stderr',
                   'md_attacked', 'md_attacked_stderr')

DetectorFactory = Callable[[ReductionMap], SvmModel]


def map_path(map_dir: Path, k: int, j: int) -> Path:
    return Path(map_dir) / f"k{k}" / f"map{j:03d}.json"


@dataclass
class EvaluationSet:
    """Test features of one manipulation; attacked rows are the attacked manipulated samples"""
    manipulation: str
    originals: np.ndarray
    manipulated: np.ndarray
    attacked: np.ndarray
    epsilon: float
    attack_kind: str


def reduced_detector_factory(features: np.ndarray, labels: Sequence[int], config: TrainConfig,
                             normalizer: Optional[FeatureNormalizer] = None) -> DetectorFactory:
    """Factory retraining an SVM on the features a map selects"""
    def factory(reduction: ReductionMap) -> SvmModel:
        return train(features, labels, config, normalizer=normalizer, feature_map=reduction)
    return factory


def detection_rates(model: SvmModel, originals: np.ndarray, manipulated: np.ndarray,
                    attacked: np.ndarray) -> Dict[str, float]:
    """fa: originals flagged; md_clean / md_attacked: manipulated samples passed as original"""
    def flagged(rows: np.ndarray) -> np.ndarray:
        return np.asarray(model.discriminant(np.atleast_2d(rows))) > 0

    return {
        'fa': float(np.mean(flagged(originals))) if len(originals) else math.nan,
        'md_clean': float(np.mean(~flagged(manipulated))) if len(manipulated) else math.nan,
        'md_attacked': float(np.mean(~flagged(attacked))) if len(attacked) else math.nan,
    }


@dataclass
class SecurityTable:
    rows: List[Dict[str, Any]] = field(default_factory=list)

    def summary(self) -> List[Dict[str, Any]]:
        """Mean and standard error over maps, per (manipulation, k, epsilon, attack kind)"""
        groups: Dict[tuple, List[Dict[str, Any]]] = {}
        for row in self.rows:
            key = (row['manipulation'], row['k'], row['epsilon'], row['attack_kind'])
            groups.setdefault(key, []).append(row)
        summary = []
        for (manipulation, k, epsilon, attack_kind), rows in sorted(groups.items()):
            entry = {'manipulation': manipulation, 'k': k, 'maps': len(rows),
                     'epsilon': epsilon, 'attack_kind': attack_kind}
            for metric in ('fa', 'md_clean', 'md_attacked'):
                values = np.array([r[metric] for r in rows], dtype=float)
                entry[metric] = float(values.mean())
                entry[f'{metric}_stderr'] = (float(values.std(ddof=1) / math.sqrt(len(values)))
                                             if len(values) > 1 else 0.0)
            summary.append(entry)
        return summary

    def mean(self, metric: str, k: int, manipulation: Optional[str] = None) -> float:
        values = [r[metric] for r in self.rows
                  if r['k'] == k and (manipulation is None or r['manipulation'] == manipulation)]
        return float(np.mean(values)) if values else math.nan

    def write_csv(self, path: Path) -> Path:
        return write_table(path, self.rows, SECURITY_COLUMNS,
                           ["reduced-detector error rates per map: fa on originals, md on clean "
                            "and attacked manipulated test samples"])

    def write_summary_csv(self, path: Path) -> Path:
        return write_table(path, self.summary(), SUMMARY_COLUMNS,
                           ["reduced-detector error rates averaged over maps, with standard errors"])


def evaluate_rfs_security(factory: DetectorFactory, evaluation: EvaluationSet, ks: Sequence[int],
                          maps_per_k: int = 100, seed: int = 0,
                          kind: ReductionKind = ReductionKind.RFS,
                          pool: Optional[TaskPool] = None,
                          map_dir: Optional[Path] = None) -> SecurityTable:
    """
    Error rates of reduced detectors for each k over maps_per_k seeded maps

    Map j at size k uses seed derive_seed(seed, 'rfs-map', manipulation, k, j), so the
    same maps are drawn for clean and attacked evaluations of a manipulation.
    With map_dir set every drawn map is kept as map_dir/k{k}/map{j:03d}.json.
    """
    n = evaluation.manipulated.shape[1]
    if maps_per_k < 1:
        raise ParameterError("maps_per_k must be >= 1", {'maps_per_k': maps_per_k})
    if any(not 1 <= k <= n for k in ks):
        raise ParameterError(f"every k must lie in [1, {n}]", {'ks': list(ks)})

    def run_one(key):
        k, j = key
        map_seed = derive_seed(seed, 'rfs-map', evaluation.manipulation, k, j)
        try:
            reduction = draw_map(kind, n, k, np.random.default_rng(map_seed), seed=map_seed)
            if map_dir is not None:
                reduction.save(map_path(map_dir, k, j))
            model = factory(reduction)
            rates = detection_rates(model, evaluation.originals, evaluation.manipulated,
                                    evaluation.attacked)
        except RfsError as e:
            raise e.with_context(k=k, map_seed=map_seed)
        return {'manipulation': evaluation.manipulation, 'k': k, 'map_seed': map_seed,
                **rates, 'epsilon': evaluation.epsilon, 'attack_kind': evaluation.attack_kind}

    pool = pool or TaskPool(name='rfs-security')
    keys = [(k, j) for k in ks for j in range(maps_per_k)]
    logger.info("RFS security evaluation started", manipulation=evaluation.manipulation,
                ks=list(ks), maps_per_k=maps_per_k, attack_kind=evaluation.attack_kind)
    table = SecurityTable(rows=[row for _, row in pool.map(run_one, keys)])
    for entry in table.summary():
        logger.info("RFS security point", k=entry['k'], fa=entry['fa'],
                    md_clean=entry['md_clean'], md_attacked=entry['md_attacked'])
    return table


def labelled(originals: np.ndarray, manipulated: np.ndarray):
    """Stack features with +1 for manipulated and -1 for originals"""
    features = np.vstack([manipulated, originals])
    labels = np.concatenate([np.full(len(manipulated), MANIPULATED), np.full(len(originals), ORIGINAL)])
    return features, labels

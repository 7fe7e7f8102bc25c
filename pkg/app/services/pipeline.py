"""
Experiment pipeline
Builds and caches the artifacts recipes depend on: prepared dataset, feature matrices,
full-feature detectors and attacked test sets. A missing artifact is built on demand
unless auto-build is disabled, in which case the command that produces it is named.
"""
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from ..config import ExperimentConfig
from ..errors import MissingDependencyError, ParameterError
from ..imaging.image_io import read_image, write_image
from ..imaging.spam import SPAM_DIM, extract_spam, fit_normalizer
from ..ml.attacks import (AttackOutcome, EotAttackConfig, FeatureAttackConfig, PixelAttackConfig,
                          attack_eot, attack_feature_domain, attack_pixel_domain)
from ..ml.evaluation import labelled
from ..ml.svm import SvmModel, TrainConfig, load_model, save_model, train
from ..monitoring import get_logger, get_performance_tracker
from ..theory.reduction import ReductionKind, ReductionMap, draw_map
from .batch_processor import TaskPool
from .dataset import MANIFEST_NAME, ORIGINAL, TEST, TRAIN, SplitManifest, prepare_dataset
from .features import FeatureMatrix, FeatureService
from .results import read_table, write_table
from .seeds import derive_rng, derive_seed

logger = get_logger('pipeline')

OUTCOME_COLUMNS = ('name', 'status', 'success', 'iterations', 'initial_probability',
                   'final_probability', 'feature_snr_db', 'euclidean_distortion', 'psnr_db',
                   'backoffs')


def epsilon_tag(epsilon: float) -> str:
    return f"{epsilon:g}".replace('.', 'p')


def model_name(manipulation: str, normalized: bool) -> str:
    return f"{manipulation}-normalized" if normalized else manipulation


@dataclass
class AttackSet:
    """Attacked test features with the per-sample outcome table"""
    features: FeatureMatrix
    outcomes: List[Dict[str, Any]]

    @property
    def success_rate(self) -> float:
        return float(np.mean([bool(o['success']) for o in self.outcomes])) if self.outcomes else float('nan')

    @property
    def detected_success_rate(self) -> float:
        """Success among samples the detector flagged before the attack"""
        attacked = [o for o in self.outcomes if o['status'] != 'already_evaded']
        return float(np.mean([bool(o['success']) for o in attacked])) if attacked else float('nan')


class Pipeline:
    """Artifact builder rooted at one output directory"""

    def __init__(self, config: ExperimentConfig, out_dir: Optional[Path] = None,
                 pool: Optional[TaskPool] = None):
        self.config = config
        self.out = Path(out_dir or config.output_dir)
        self.pool = pool or TaskPool(name='pipeline')
        self.tracker = get_performance_tracker()
        self._feature_service: Optional[FeatureService] = None
        self._factories: Dict[Tuple[str, bool], Any] = {}
        self.features_dir = self.out / 'features'

    @property
    def dataset_root(self) -> Path:
        return self.out / 'dataset'

    @property
    def tables_dir(self) -> Path:
        return self.out / 'tables'

    @property
    def feature_service(self) -> FeatureService:
        if self._feature_service is None:
            from ..settings import settings
            self._feature_service = FeatureService(Path(settings.feature_cache_dir), self.pool)
        return self._feature_service

    def _missing(self, path: Path, producer: str, what: str) -> bool:
        """True when path must be built; raises when building is not allowed"""
        if path.exists():
            return False
        if not self.config.auto_build:
            raise MissingDependencyError(
                f"{what} not found at {path}; run '{producer}' first or enable auto_build",
                producer=producer, context={'path': str(path)})
        logger.info("Building missing artifact", artifact=what, producer=producer)
        return True

    # Dataset and features

    def dataset(self) -> SplitManifest:
        path = self.dataset_root / MANIFEST_NAME
        if self._missing(path, 'prepare', 'split manifest'):
            with self.tracker.stage('prepare'):
                prepare_dataset(self.config, self.dataset_root, self.pool)
        return SplitManifest.load(path)

    def features(self, variant: str, split: str) -> FeatureMatrix:
        path = self.features_dir / f"{variant}_{split}.npz"
        if self._missing(path, 'extract-features', f"{variant} {split} features"):
            manifest = self.dataset()
            with self.tracker.stage(f"features:{variant}:{split}"):
                self.feature_service.extract_split(manifest, self.dataset_root, variant, split).save(path)
        return FeatureMatrix.load(path)

    def extract_all(self) -> List[Path]:
        manifest = self.dataset()
        paths = []
        for variant in manifest.variants:
            for split in (TRAIN, TEST):
                self.features(variant, split)
                paths.append(self.features_dir / f"{variant}_{split}.npz")
        return paths

    def training_set(self, manipulation: str) -> Tuple[np.ndarray, np.ndarray]:
        return labelled(self.features(ORIGINAL, TRAIN).values, self.features(manipulation, TRAIN).values)

    # Detectors

    def train_config(self, gamma: Optional[float] = None, C: Optional[float] = None) -> TrainConfig:
        c = self.config
        searching = gamma is None and c.svm_gamma is None
        return TrainConfig(C=C or c.svm_C, gamma=gamma if gamma is not None else c.svm_gamma,
                           gamma_grid=tuple(c.svm_gamma_grid),
                           c_grid=tuple(c.svm_c_grid) if c.svm_c_grid and searching else None,
                           folds=c.svm_folds, seed=derive_seed(c.master_seed, 'svm'))

    def reduced_train_config(self, full_model: SvmModel, k: int) -> TrainConfig:
        """Reduced detectors reuse the full model's C and scale gamma by n / k"""
        gamma = full_model.kernel.gamma * full_model.feature_dim / k
        return self.train_config(gamma=gamma, C=full_model.meta.get('C'))

    def model_path(self, manipulation: str, normalized: bool) -> Path:
        return self.out / 'models' / f"{model_name(manipulation, normalized)}.json"

    def train_model(self, manipulation: str, normalized: bool = False) -> Path:
        """Train the full-feature detector and save it, replacing any earlier one"""
        features, labels = self.training_set(manipulation)
        with self.tracker.stage(f"train:{model_name(manipulation, normalized)}"):
            normalizer = fit_normalizer(features) if normalized else None
            model = train(features, labels, self.train_config(), normalizer=normalizer)
        return save_model(model, self.model_path(manipulation, normalized))

    def model(self, manipulation: str, normalized: bool = False) -> SvmModel:
        path = self.model_path(manipulation, normalized)
        if self._missing(path, 'train-svm', f"{model_name(manipulation, normalized)} detector"):
            self.train_model(manipulation, normalized)
        return load_model(path)

    def maps_dir(self, manipulation: str, normalized: bool = False) -> Path:
        return self.out / 'maps' / model_name(manipulation, normalized)

    def reduced_model_path(self, manipulation: str, normalized: bool, reduction: ReductionMap,
                           tag: str) -> Path:
        name = f"{model_name(manipulation, normalized)}_{reduction.kind.value}-k{reduction.k}_{tag}"
        return self.out / 'models' / 'reduced' / f"{name}.json"

    def train_with_map(self, manipulation: str, normalized: bool, map_file: Path) -> Path:
        """Train and save the reduced detector that works on the features of a saved map"""
        reduction = ReductionMap.load(map_file)
        if reduction.cols != SPAM_DIM:
            raise ParameterError(f"Map expects {reduction.cols} features, SPAM vectors have {SPAM_DIM}",
                                 {'map': str(map_file)})
        full = self.model(manipulation, normalized)
        features, labels = self.training_set(manipulation)
        path = self.reduced_model_path(manipulation, normalized, reduction, Path(map_file).stem)
        with self.tracker.stage(f"train:{path.stem}"):
            model = train(features, labels, self.reduced_train_config(full, reduction.k),
                          normalizer=full.normalizer, feature_map=reduction)
        logger.info("Reduced detector trained", model=path.stem, k=reduction.k,
                    map_seed=reduction.seed, support_vectors=model.n_support)
        return save_model(model, path)

    def reduced_factory(self, manipulation: str, normalized: bool = False):
        """
        Detector factory retraining on the features a map selects

        Models are memoized by map seed, so evaluating several attacked sets with the same
        maps trains each reduced detector once.
        """
        key = (manipulation, normalized)
        if key in self._factories:
            return self._factories[key]
        full = self.model(manipulation, normalized)
        features, labels = self.training_set(manipulation)
        trained: Dict[Any, SvmModel] = {}
        lock = threading.Lock()

        def factory(reduction: ReductionMap) -> SvmModel:
            memo_key = (reduction.kind.value, reduction.k, reduction.seed)
            with lock:
                if reduction.seed is not None and memo_key in trained:
                    return trained[memo_key]
            model = train(features, labels, self.reduced_train_config(full, reduction.k),
                          normalizer=full.normalizer, feature_map=reduction)
            if reduction.seed is not None:
                with lock:
                    trained[memo_key] = model
            return model

        self._factories[key] = factory
        return factory

    # Attacks

    def _attack_dir(self, domain: str, manipulation: str, normalized: bool, epsilon: float) -> Path:
        return self.out / 'attacks' / domain / f"{model_name(manipulation, normalized)}_eps{epsilon_tag(epsilon)}"

    def _save_attack_set(self, base: Path, attack_set: AttackSet, description: str) -> Path:
        write_table(base / 'outcomes.csv', attack_set.outcomes, OUTCOME_COLUMNS, [description])
        return attack_set.features.save(base / 'features.npz')

    def _load_attack_set(self, base: Path) -> AttackSet:
        outcomes = read_table(base / 'outcomes.csv').to_dict(orient='records')
        return AttackSet(features=FeatureMatrix.load(base / 'features.npz'), outcomes=outcomes)

    def _record_attacks(self, domain: str, name: str, attack_set: AttackSet):
        """Success rate and mean iterations go to the run's custom metrics"""
        iterations = [float(o['iterations']) for o in attack_set.outcomes]
        self.tracker.record_custom_metric(f"{domain}_attack_success_rate", attack_set.success_rate)
        if iterations:
            self.tracker.record_custom_metric(f"{domain}_attack_iterations", float(np.mean(iterations)))
        logger.info("Attacks finished", domain=domain, attack=name,
                    success_rate=attack_set.success_rate, samples=len(attack_set.outcomes))

    @staticmethod
    def _outcome_record(name: str, outcome: AttackOutcome) -> Dict[str, Any]:
        return {'name': name, **outcome.to_dict()}

    def feature_config(self, epsilon: float) -> FeatureAttackConfig:
        return FeatureAttackConfig(epsilon=epsilon, step_size=self.config.feature_step,
                                   max_iterations=self.config.feature_max_iterations)

    def feature_attacks(self, manipulation: str, normalized: bool, epsilon: float) -> AttackSet:
        """Feature-domain attack on every manipulated test sample against the full detector"""
        base = self._attack_dir('feature', manipulation, normalized, epsilon)
        if self._missing(base / 'features.npz', 'attack-feature', f"feature attack {base.name}"):
            model = self.model(manipulation, normalized)
            test = self.features(manipulation, TEST)
            attack_config = self.feature_config(epsilon)
            with self.tracker.stage(f"attack-feature:{base.name}"):
                results = self.pool.map(
                    lambda i: attack_feature_domain(model, test.values[i], attack_config),
                    range(len(test)))
            outcomes = [outcome for _, outcome in results]
            attack_set = AttackSet(
                features=FeatureMatrix(names=test.names,
                                       values=np.vstack([o.attacked for o in outcomes]),
                                       variant=f"{manipulation}-attacked", split=TEST),
                outcomes=[self._outcome_record(n, o) for n, o in zip(test.names, outcomes)])
            self._save_attack_set(base, attack_set,
                                  f"feature-domain attack outcomes, epsilon={epsilon!r}")
            self._record_attacks('feature', base.name, attack_set)
        return self._load_attack_set(base)

    def pixel_subset(self, manipulation: str) -> List[int]:
        """Seeded subset of test images for the pixel-domain attack"""
        count = len(self.dataset().split(TEST))
        size = min(self.config.pixel_images, count)
        rng = derive_rng(self.config.master_seed, 'pixel-subset', manipulation)
        return sorted(rng.choice(count, size=size, replace=False).tolist())

    def pixel_attacks(self, manipulation: str, normalized: bool, epsilon: float) -> AttackSet:
        """Pixel-domain attack on a seeded subset of manipulated test images"""
        base = self._attack_dir('pixel', manipulation, normalized, epsilon)
        if self._missing(base / 'features.npz', 'attack-pixel', f"pixel attack {base.name}"):
            model = self.model(manipulation, normalized)
            entries = self.dataset().split(TEST)
            chosen = [entries[i] for i in self.pixel_subset(manipulation)]
            attack_config = PixelAttackConfig(epsilon=epsilon,
                                              pixel_fraction=self.config.pixel_fraction,
                                              max_iterations=self.config.pixel_max_iterations)

            def run_one(i: int) -> AttackOutcome:
                image = read_image(self.dataset_root / chosen[i].relative_path(manipulation))
                outcome = attack_pixel_domain(model, image, attack_config)
                write_image(outcome.attacked, base / 'images' / f"{chosen[i].name}.pgm")
                return outcome

            with self.tracker.stage(f"attack-pixel:{base.name}"):
                outcomes = [outcome for _, outcome in self.pool.map(run_one, range(len(chosen)))]
            attack_set = AttackSet(
                features=FeatureMatrix(names=[e.name for e in chosen],
                                       values=np.vstack([extract_spam(o.attacked) for o in outcomes]),
                                       variant=f"{manipulation}-pixel-attacked", split=TEST),
                outcomes=[self._outcome_record(e.name, o) for e, o in zip(chosen, outcomes)])
            self._save_attack_set(base, attack_set,
                                  f"pixel-domain attack outcomes, epsilon={epsilon!r}")
            self._record_attacks('pixel', base.name, attack_set)
        return self._load_attack_set(base)

    def eot_ensemble(self, manipulation: str, k: int, size: int) -> List[SvmModel]:
        """Surrogate reduced detectors the attacker trains on its own random k-subsets"""
        factory = self.reduced_factory(manipulation, False)

        def build(i: int) -> SvmModel:
            seed = derive_seed(self.config.master_seed, 'eot-surrogate', manipulation, k, i)
            return factory(draw_map(ReductionKind.RFS, SPAM_DIM, k, np.random.default_rng(seed),
                                    seed=seed))
        return [model for _, model in self.pool.map(build, range(size))]

    def eot_attacks(self, manipulation: str, k: int, size: int, epsilon: float) -> AttackSet:
        base = (self.out / 'attacks' / 'eot'
                / f"{manipulation}_k{k}_n{size}_eps{epsilon_tag(epsilon)}")
        if self._missing(base / 'features.npz', 'attack-eot', f"EOT attack {base.name}"):
            test = self.features(manipulation, TEST)
            with self.tracker.stage(f"attack-eot:{base.name}"):
                models = self.eot_ensemble(manipulation, k, size)
                attack_config = EotAttackConfig(ensemble_size=size, k=k, epsilon=epsilon,
                                                seed=self.config.master_seed,
                                                step_size=self.config.feature_step,
                                                max_iterations=self.config.feature_max_iterations)
                results = self.pool.map(lambda i: attack_eot(models, test.values[i], attack_config),
                                        range(len(test)))
            outcomes = [outcome for _, outcome in results]
            attack_set = AttackSet(
                features=FeatureMatrix(names=test.names,
                                       values=np.vstack([o.attacked for o in outcomes]),
                                       variant=f"{manipulation}-eot-attacked", split=TEST),
                outcomes=[self._outcome_record(n, o) for n, o in zip(test.names, outcomes)])
            self._save_attack_set(base, attack_set,
                                  f"EOT attack outcomes, k={k} ensemble={size} epsilon={epsilon!r}")
            self._record_attacks('eot', base.name, attack_set)
        return self._load_attack_set(base)

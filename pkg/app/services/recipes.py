"""
Experiment recipes
One command per experiment figure or table; each recipe writes CSV tables and a run
manifest, pulling the artifacts it needs from the pipeline.
"""
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..config import ExperimentConfig
from ..errors import ConfigurationError
from ..ml.evaluation import EvaluationSet, SecurityTable, detection_rates, evaluate_rfs_security
from ..ml.svm import training_summary
from ..monitoring import get_logger, get_performance_tracker
from ..theory.models import Regime
from ..theory.montecarlo import TheorySweepConfig, run_angle_histogram, run_error_sweep
from ..theory.reduction import ReductionKind
from .batch_processor import TaskPool
from .dataset import ORIGINAL, TEST
from .manifest import RunManifest
from .pipeline import AttackSet, Pipeline, model_name
from .results import write_table

logger = get_logger('recipes')

ACCURACY_COLUMNS = ('manipulation', 'normalized', 'accuracy', 'fa', 'md_clean',
                    'md_feature_attack', 'feature_attack_success',
                    'md_pixel_attack', 'pixel_attack_success', 'pixel_images')
SUPPORT_VECTOR_COLUMNS = ('manipulation', 'support_vectors', 'training_size', 'sv_fraction',
                          'gamma', 'C')
SNR_COLUMNS = ('manipulation', 'normalized', 'epsilon', 'samples', 'success_rate',
               'detected_success_rate', 'mean_feature_snr_db')
PSNR_COLUMNS = ('manipulation', 'normalized', 'epsilon', 'images', 'success_rate',
                'detected_success_rate', 'mean_psnr_db')
MEAN_ANGLE_COLUMNS = ('regime', 'k', 'draws', 'mean_angle')


@dataclass(frozen=True)
class Recipe:
    name: str
    description: str
    requires: Tuple[str, ...]
    run: Callable[[Pipeline], List[Path]]


@dataclass
class RecipeRun:
    name: str
    outputs: List[Path] = field(default_factory=list)
    manifest_path: Optional[Path] = None


RECIPES: Dict[str, Recipe] = {}


def recipe(name: str, description: str, requires: Sequence[str] = ()):
    def register(func: Callable[[Pipeline], List[Path]]):
        RECIPES[name] = Recipe(name=name, description=description, requires=tuple(requires), run=func)
        return func
    return register


def list_recipes() -> List[Dict[str, str]]:
    return [{'name': r.name, 'requires': ', '.join(r.requires) or '-', 'description': r.description}
            for r in RECIPES.values()]


def _manipulations(pipeline: Pipeline, wanted: Sequence[str]) -> List[str]:
    chosen = [m for m in wanted if m in pipeline.config.manipulations]
    if not chosen:
        raise ConfigurationError(f"Recipe needs one of the manipulations {', '.join(wanted)}",
                                 {'configured': pipeline.config.manipulations})
    return chosen


def _finite_mean(values) -> float:
    finite = [float(v) for v in values if v is not None and math.isfinite(float(v))]
    return float(np.mean(finite)) if finite else math.nan


def _dependent_z(config: ExperimentConfig) -> float:
    lo, hi = config.dependent_z_window
    return (lo + hi) / 2


def _sweep_config(config: ExperimentConfig, regime: Regime, z_target: float) -> TheorySweepConfig:
    return TheorySweepConfig(n=config.theory_n, z_target=z_target, alphas=tuple(config.theory_alphas),
                             ks=tuple(config.theory_ks), kinds=(ReductionKind.RFS, ReductionKind.RP),
                             regime=regime, repetitions=config.repetitions,
                             samples_per_point=config.samples_per_point,
                             master_seed=config.master_seed, mean_kind=config.mean_kind)


# Theory


@recipe('fig2', "error probability against k, i.i.d. Gaussian features, RFS and RP")
def fig2(pipeline: Pipeline) -> List[Path]:
    config = _sweep_config(pipeline.config, Regime.IID, pipeline.config.theory_z)
    result = run_error_sweep(config, pipeline.pool)
    return [result.write_csv(pipeline.tables_dir / 'fig2_iid_error.csv')]


@recipe('fig3', "error probability against k, dependent features, raw and normalized")
def fig3(pipeline: Pipeline) -> List[Path]:
    outputs = []
    z_target = _dependent_z(pipeline.config)
    for regime, name in ((Regime.DEPENDENT, 'fig3_dependent_error.csv'),
                         (Regime.DEPENDENT_NORMALIZED, 'fig3_dependent_normalized_error.csv')):
        result = run_error_sweep(_sweep_config(pipeline.config, regime, z_target), pipeline.pool)
        outputs.append(result.write_csv(pipeline.tables_dir / name))
    return outputs


@recipe('fig4', "angle mismatch histograms, dependent raw and normalized features")
def fig4(pipeline: Pipeline) -> List[Path]:
    c = pipeline.config
    outputs, means = [], []
    for normalized, label in ((False, 'dependent'), (True, 'dependent_normalized')):
        histogram = run_angle_histogram(c.theory_n, c.angle_ks, c.angle_draws, normalized=normalized,
                                        master_seed=c.master_seed, z_target=_dependent_z(c),
                                        pool=pipeline.pool)
        outputs.append(histogram.write_csv(
            pipeline.tables_dir / f"fig4_angles_{label}.csv",
            [f"angle mismatch histogram in degrees, {label} features, n={c.theory_n}"]))
        means.extend({'regime': label, 'k': k, 'draws': c.angle_draws,
                      'mean_angle': histogram.mean_angle(k)} for k in c.angle_ks)
    outputs.append(write_table(pipeline.tables_dir / 'fig4_mean_angles.csv', means,
                               MEAN_ANGLE_COLUMNS, ["mean angle mismatch per k in degrees"]))
    return outputs


# Full-feature detectors and attacks


@recipe('table1', "full-detector error probabilities with and without attacks (epsilon 0.5), "
                  "support vector counts",
        requires=('prepare', 'extract-features', 'train-svm', 'attack-feature', 'attack-pixel'))
def table1(pipeline: Pipeline) -> List[Path]:
    c = pipeline.config
    originals = pipeline.features(ORIGINAL, TEST).values
    rows, models = [], {}
    for manipulation in c.manipulations:
        model = pipeline.model(manipulation, c.normalize)
        models[model_name(manipulation, c.normalize)] = model
        manipulated = pipeline.features(manipulation, TEST).values
        feature_set = pipeline.feature_attacks(manipulation, c.normalize, 0.5)
        rates = detection_rates(model, originals, manipulated, feature_set.features.values)
        row = {'manipulation': manipulation, 'normalized': c.normalize,
               'accuracy': 1 - (rates['fa'] * len(originals) + rates['md_clean'] * len(manipulated))
               / (len(originals) + len(manipulated)),
               'fa': rates['fa'], 'md_clean': rates['md_clean'],
               'md_feature_attack': rates['md_attacked'],
               'feature_attack_success': feature_set.success_rate}
        if 'pixel' in c.attack_kinds:
            pixel_set = pipeline.pixel_attacks(manipulation, c.normalize, 0.5)
            pixel_rates = detection_rates(model, originals, manipulated, pixel_set.features.values)
            row.update(md_pixel_attack=pixel_rates['md_attacked'],
                       pixel_attack_success=pixel_set.success_rate,
                       pixel_images=len(pixel_set.features))
        rows.append(row)
    return [
        write_table(pipeline.tables_dir / 'table1_error_probability.csv', rows, ACCURACY_COLUMNS,
                    ["full-feature SVM detectors on the test split; attacks at epsilon=0.5"]),
        write_table(pipeline.tables_dir / 'table1_support_vectors.csv', training_summary(models),
                    SUPPORT_VECTOR_COLUMNS, ["support vectors of the full-feature detectors"]),
    ]


@recipe('table4', "feature SNR of feature-domain attacks per epsilon",
        requires=('prepare', 'extract-features', 'train-svm', 'attack-feature'))
def table4(pipeline: Pipeline) -> List[Path]:
    c = pipeline.config
    rows = []
    for manipulation in c.manipulations:
        for epsilon in c.epsilons:
            attack_set = pipeline.feature_attacks(manipulation, c.normalize, epsilon)
            rows.append({'manipulation': manipulation, 'normalized': c.normalize, 'epsilon': epsilon,
                         'samples': len(attack_set.outcomes),
                         'success_rate': attack_set.success_rate,
                         'detected_success_rate': attack_set.detected_success_rate,
                         'mean_feature_snr_db': _finite_mean(o['feature_snr_db']
                                                             for o in attack_set.outcomes)})
    return [write_table(pipeline.tables_dir / 'table4_feature_snr.csv', rows, SNR_COLUMNS,
                        ["feature SNR = energy of the feature vector over energy of the distortion, "
                         "averaged over attacked samples"])]


@recipe('table5', "PSNR of pixel-domain attacks per epsilon",
        requires=('prepare', 'extract-features', 'train-svm', 'attack-pixel'))
def table5(pipeline: Pipeline) -> List[Path]:
    c = pipeline.config
    rows = []
    for manipulation in c.manipulations:
        for epsilon in c.epsilons:
            attack_set = pipeline.pixel_attacks(manipulation, c.normalize, epsilon)
            rows.append({'manipulation': manipulation, 'normalized': c.normalize, 'epsilon': epsilon,
                         'images': len(attack_set.outcomes),
                         'success_rate': attack_set.success_rate,
                         'detected_success_rate': attack_set.detected_success_rate,
                         'mean_psnr_db': _finite_mean(o['psnr_db'] for o in attack_set.outcomes)})
    return [write_table(pipeline.tables_dir / 'table5_pixel_psnr.csv', rows, PSNR_COLUMNS,
                        ["PSNR in dB of attacked images against the manipulated images"])]


# RFS security sweeps


def security_sweep(pipeline: Pipeline, manipulation: str, normalized: bool, attack_set: AttackSet,
                   epsilon: float, attack_kind: str, ks: Sequence[int],
                   maps_per_k: int) -> SecurityTable:
    """Reduced detectors for every k against one attacked test set"""
    c = pipeline.config
    evaluation = EvaluationSet(manipulation=model_name(manipulation, normalized),
                               originals=pipeline.features(ORIGINAL, TEST).values,
                               manipulated=pipeline.features(manipulation, TEST).values,
                               attacked=attack_set.features.values, epsilon=epsilon,
                               attack_kind=attack_kind)
    factory = pipeline.reduced_factory(manipulation, normalized)
    with get_performance_tracker().stage(f"sweep:{evaluation.manipulation}:{attack_kind}:{epsilon:g}"):
        return evaluate_rfs_security(factory, evaluation, ks, maps_per_k=maps_per_k,
                                     seed=c.master_seed, kind=ReductionKind(c.rfs_kind),
                                     pool=pipeline.pool,
                                     map_dir=pipeline.maps_dir(manipulation, normalized))


def _write_security(pipeline: Pipeline, tables: List[SecurityTable], stem: str) -> List[Path]:
    merged = SecurityTable(rows=[row for table in tables for row in table.rows])
    return [merged.write_csv(pipeline.tables_dir / f"{stem}_security.csv"),
            merged.write_summary_csv(pipeline.tables_dir / f"{stem}_summary.csv")]


def _feature_domain_figure(pipeline: Pipeline, manipulations: Sequence[str],
                           normalized_options: Sequence[bool], stem: str) -> List[Path]:
    c = pipeline.config
    tables = []
    for manipulation in _manipulations(pipeline, manipulations):
        for normalized in normalized_options:
            for epsilon in (c.normalized_epsilons if normalized else c.epsilons):
                attack_set = pipeline.feature_attacks(manipulation, normalized, epsilon)
                tables.append(security_sweep(pipeline, manipulation, normalized, attack_set,
                                             epsilon, 'feature', c.ks, c.maps_per_k))
    return _write_security(pipeline, tables, stem)


def _pixel_domain_figure(pipeline: Pipeline, manipulations: Sequence[str], normalized: bool,
                         epsilons: Sequence[float], stem: str) -> List[Path]:
    c = pipeline.config
    tables = []
    for manipulation in _manipulations(pipeline, manipulations):
        for epsilon in epsilons:
            attack_set = pipeline.pixel_attacks(manipulation, normalized, epsilon)
            tables.append(security_sweep(pipeline, manipulation, normalized, attack_set, epsilon,
                                         'pixel', c.ks, c.pixel_maps_per_k))
    return _write_security(pipeline, tables, stem)


SECURITY_REQUIRES = ('prepare', 'extract-features', 'train-svm')


@recipe('fig5', "RFS detectors under feature-domain attack, AHE and MF3, raw and normalized features",
        requires=SECURITY_REQUIRES + ('attack-feature',))
def fig5(pipeline: Pipeline) -> List[Path]:
    return _feature_domain_figure(pipeline, ('ahe', 'mf3'), (False, True), 'fig5_feature_domain')


@recipe('fig6', "RFS detectors under feature-domain attack, MF5 and MF7, raw features",
        requires=SECURITY_REQUIRES + ('attack-feature',))
def fig6(pipeline: Pipeline) -> List[Path]:
    return _feature_domain_figure(pipeline, ('mf5', 'mf7'), (False,), 'fig6_feature_domain')


@recipe('fig7', "RFS detectors under pixel-domain attack, AHE and MF3, raw features",
        requires=SECURITY_REQUIRES + ('attack-pixel',))
def fig7(pipeline: Pipeline) -> List[Path]:
    return _pixel_domain_figure(pipeline, ('ahe', 'mf3'), False, pipeline.config.epsilons,
                                'fig7_pixel_domain')


@recipe('fig8', "RFS detector under pixel-domain attack, AHE with normalized features, epsilon 0.5",
        requires=SECURITY_REQUIRES + ('attack-pixel',))
def fig8(pipeline: Pipeline) -> List[Path]:
    return _pixel_domain_figure(pipeline, ('ahe',), True, (0.5,), 'fig8_pixel_domain_normalized')


@recipe('fig9', "RFS detectors under the attack on an average of reduced detectors, AHE and MF3",
        requires=SECURITY_REQUIRES + ('attack-eot',))
def fig9(pipeline: Pipeline) -> List[Path]:
    c = pipeline.config
    tables = []
    for manipulation in _manipulations(pipeline, ('ahe', 'mf3')):
        for size in c.eot_sizes:
            for k in c.eot_ks:
                attack_set = pipeline.eot_attacks(manipulation, k, size, 0.5)
                tables.append(security_sweep(pipeline, manipulation, False, attack_set, 0.5,
                                             f"eot-n{size}", [k], c.maps_per_k))
    return _write_security(pipeline, tables, 'fig9_eot')


def run_recipe(name: str, config: ExperimentConfig, out_dir: Optional[Path] = None,
               pool: Optional[TaskPool] = None) -> RecipeRun:
    """Run one recipe and record its outputs in a manifest under <out>/manifests"""
    if name not in RECIPES:
        raise ConfigurationError(f"Unknown recipe {name!r}; choose from {', '.join(RECIPES)}")
    pipeline = Pipeline(config, out_dir, pool)
    manifest = RunManifest.start(f"recipe {name}", config)
    logger.set_context(recipe=name, master_seed=config.master_seed)
    logger.info("Recipe started", requires=list(RECIPES[name].requires))
    try:
        with pipeline.tracker.stage(f"recipe:{name}"):
            outputs = RECIPES[name].run(pipeline)
    finally:
        logger.clear_context()
    for path in outputs:
        manifest.add_output(pipeline.out, path)
    manifest_path = manifest.finish(pipeline.out / 'manifests', f"recipe_{name}", pipeline.pool)
    logger.info("Recipe finished", recipe=name, outputs=[str(p) for p in outputs],
                jobs=pipeline.pool.get_status(cumulative=True))
    return RecipeRun(name=name, outputs=outputs, manifest_path=manifest_path)

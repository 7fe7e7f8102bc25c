"""
RFS forensics toolkit - command-line entry point
Dataset preparation, detector training, attacks, RFS sweeps, theory simulations and recipes

Usage: python main.py <command> [--seed N] [--config FILE] [--out DIR] ...
"""
import argparse
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from app.config import ExperimentConfig
from app.error_handlers import EXIT_OK, handle_error
from app.errors import CacheInvalidError, ParameterError
from app.imaging.image_io import is_image_file
from app.imaging.manipulations import ManipulationKind
from app.ml.svm import load_model, training_summary
from app.monitoring import get_logger
from app.services.batch_processor import TaskPool
from app.services.dataset import MANIFEST_NAME, manipulate_images, mirrored_target, prepare_dataset
from app.services.features import FeatureMatrix
from app.services.manifest import RunManifest, verify_outputs
from app.services.pipeline import Pipeline, epsilon_tag, model_name
from app.services.recipes import RECIPES, SUPPORT_VECTOR_COLUMNS, list_recipes, run_recipe, security_sweep
from app.services.results import write_table
from app.theory.models import Regime
from app.theory.montecarlo import TheorySweepConfig, run_angle_histogram, run_error_sweep
from app.theory.reduction import ReductionKind

logger = get_logger('cli')


def _floats(text: str) -> List[float]:
    return [float(part) for part in text.split(',') if part.strip()]


def _ints(text: str) -> List[int]:
    return [int(part) for part in text.split(',') if part.strip()]


def _names(text: str) -> List[str]:
    return [part.strip() for part in text.split(',') if part.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--seed', type=int, help='master seed (overrides the config file)')
    common.add_argument('--config', type=Path, help='experiment configuration JSON')
    common.add_argument('--out', type=Path, help='output directory (default RFS_OUTPUT_DIR)')
    common.add_argument('--no-auto-build', action='store_true',
                        help='fail instead of building missing intermediate artifacts')

    parser = argparse.ArgumentParser(prog='rfs', description=__doc__.strip().splitlines()[0])
    commands = parser.add_subparsers(dest='command', required=True)

    p = commands.add_parser('prepare', parents=[common], help='split and preprocess an image corpus')
    p.add_argument('--corpus', type=Path, help='directory of PGM/PNG/JPEG images')
    p.add_argument('--train-size', type=int)
    p.add_argument('--test-size', type=int)
    p.add_argument('--manipulations', type=_names, help='comma-separated, e.g. ahe,mf3')

    p = commands.add_parser('manipulate', parents=[common], help='apply one manipulation to images')
    p.add_argument('--op', required=True, choices=[k.value for k in ManipulationKind])
    p.add_argument('inputs', nargs='+', type=Path,
                   help='image files or directories; directory trees are mirrored')

    p = commands.add_parser('extract-features', parents=[common],
                            help='SPAM features of the prepared splits or of given images')
    p.add_argument('inputs', nargs='*', type=Path)

    p = commands.add_parser('train-svm', parents=[common],
                            help='train full-feature detectors, or a reduced one from a saved map')
    chosen = p.add_mutually_exclusive_group()
    chosen.add_argument('--manipulations', type=_names)
    chosen.add_argument('--manipulation', choices=[k.value for k in ManipulationKind])
    p.add_argument('--normalize', action='store_true', default=None)
    p.add_argument('--features', type=Path, dest='features_dir',
                   help='directory of {variant}_{split}.npz feature matrices')
    p.add_argument('--rfs-map', type=Path, dest='rfs_map',
                   help='map JSON; trains the reduced detector on the features it selects')

    for name, help_text in (('attack-feature', 'feature-domain attack on the test split'),
                            ('attack-pixel', 'pixel-domain attack on a test subset')):
        p = commands.add_parser(name, parents=[common], help=help_text)
        p.add_argument('--manipulations', type=_names)
        p.add_argument('--epsilons', type=_floats)
        p.add_argument('--normalize', action='store_true', default=None)
        if name == 'attack-pixel':
            p.add_argument('--images', type=int, dest='pixel_images')

    p = commands.add_parser('attack-eot', parents=[common],
                            help='attack an average of reduced detectors trained on random subsets')
    p.add_argument('--manipulations', type=_names)
    p.add_argument('--k', type=int, required=True)
    p.add_argument('--ensemble-size', type=int, default=50)
    p.add_argument('--epsilon', type=float, default=0.5)
    p.add_argument('--strategy', choices=('average', 'random-subset'), default='average',
                   help='random-subset attacks a single surrogate detector')

    p = commands.add_parser('sweep-k', parents=[common],
                            help='reduced-detector error rates against k under one attack')
    p.add_argument('--manipulation', required=True, choices=[k.value for k in ManipulationKind])
    p.add_argument('--attack', choices=('feature', 'pixel', 'eot'), default='feature')
    p.add_argument('--epsilon', type=float, default=0.5)
    p.add_argument('--normalize', action='store_true', default=None)
    p.add_argument('--ks', type=_ints)
    p.add_argument('--maps-per-k', type=int)
    p.add_argument('--eot-k', type=int, help='k of the surrogate ensemble for --attack eot')
    p.add_argument('--ensemble-size', type=int, default=50)

    p = commands.add_parser('theory-sim', parents=[common],
                            help='error probability against k for Gaussian models')
    p.add_argument('--regime', choices=[r.value for r in Regime], default=Regime.IID.value)
    p.add_argument('--n', type=int)
    p.add_argument('--z', type=float)
    p.add_argument('--alphas', type=_floats)
    p.add_argument('--ks', type=_ints)
    p.add_argument('--kinds', type=_names, default=['rfs', 'rp'])
    p.add_argument('--repetitions', type=int)
    p.add_argument('--samples', type=int, dest='samples_per_point')
    p.add_argument('--mean-kind', choices=('constant', 'random'))
    p.add_argument('--no-empirical', action='store_true')

    p = commands.add_parser('angle-hist', parents=[common],
                            help='histogram of the angle mismatch of reduced detectors')
    p.add_argument('--regime', choices=[r.value for r in Regime],
                   default=Regime.DEPENDENT_NORMALIZED.value)
    p.add_argument('--n', type=int)
    p.add_argument('--ks', type=_ints)
    p.add_argument('--draws', type=int)
    p.add_argument('--kind', choices=[k.value for k in ReductionKind], default='rfs')

    p = commands.add_parser('recipe', parents=[common], help='reproduce one figure or table')
    p.add_argument('name', choices=sorted(RECIPES) + ['list'])

    p = commands.add_parser('verify', help='check that the outputs of a run manifest are unchanged')
    p.add_argument('manifest', type=Path)
    p.add_argument('--root', type=Path, help='output directory the manifest paths are relative to')
    return parser


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    """Config file (or defaults), then command-line overrides"""
    overrides: Dict[str, Any] = {
        'master_seed': args.seed,
        'output_dir': str(args.out) if args.out else None,
        'auto_build': False if args.no_auto_build else None,
    }
    mapping = {'corpus': 'corpus_root', 'train_size': 'train_size', 'test_size': 'test_size',
               'manipulations': 'manipulations', 'normalize': 'normalize',
               'epsilons': 'epsilons', 'pixel_images': 'pixel_images', 'ks': 'ks',
               'maps_per_k': 'maps_per_k', 'n': 'theory_n', 'z': 'theory_z',
               'alphas': 'theory_alphas', 'repetitions': 'repetitions',
               'samples_per_point': 'samples_per_point', 'mean_kind': 'mean_kind',
               'draws': 'angle_draws'}
    for attr, key in mapping.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = str(value) if isinstance(value, Path) else value
    if args.command == 'train-svm' and args.manipulation:
        overrides['manipulations'] = [args.manipulation]
    if args.command in ('theory-sim', 'angle-hist') and getattr(args, 'ks', None) is not None:
        overrides.pop('ks')
        overrides['theory_ks' if args.command == 'theory-sim' else 'angle_ks'] = args.ks
    return ExperimentConfig.load(args.config, overrides)


def _image_groups(inputs: Sequence[Path]) -> List[Tuple[Optional[Path], List[Path]]]:
    """(root, images) per directory input, plus the plain files with no root"""
    groups: List[Tuple[Optional[Path], List[Path]]] = []
    files = [item for item in inputs if not item.is_dir()]
    for item in inputs:
        if item.is_dir():
            groups.append((item, sorted(p for p in item.rglob('*') if is_image_file(p))))
    if files:
        groups.append((None, files))
    return groups


def _image_paths(inputs: Sequence[Path]) -> List[Path]:
    paths: List[Path] = []
    for item in inputs:
        if item.is_dir():
            paths.extend(sorted(p for p in item.rglob('*') if is_image_file(p)))
        else:
            paths.append(item)
    return paths


def cmd_prepare(args, config: ExperimentConfig, pipeline: Pipeline) -> List[Path]:
    manifest = prepare_dataset(config, pipeline.dataset_root, pipeline.pool)
    print(f"prepared {len(manifest.split('train'))} train / {len(manifest.split('test'))} test images, "
          f"skipped {len(manifest.skipped)}")
    return [pipeline.dataset_root / MANIFEST_NAME]


def cmd_manipulate(args, config: ExperimentConfig, pipeline: Pipeline) -> List[Path]:
    out_dir = pipeline.out / 'manipulated' / args.op
    groups = _image_groups(args.inputs)
    targets = [mirrored_target(p, root) for root, paths in groups for p in paths]
    clashes = sorted({str(t) for t in targets if targets.count(t) > 1})
    if clashes:
        raise ParameterError("Inputs would overwrite each other's outputs", {'outputs': clashes})
    written: List[Path] = []
    for root, paths in groups:
        written += manipulate_images(paths, ManipulationKind(args.op), out_dir, config.clip_limit,
                                     pipeline.pool, root=root)
    print(f"wrote {len(written)} images to {out_dir}")
    return written


def cmd_extract_features(args, config: ExperimentConfig, pipeline: Pipeline) -> List[Path]:
    if not args.inputs:
        return pipeline.extract_all()
    paths = _image_paths(args.inputs)
    matrix = FeatureMatrix(names=[str(p) for p in paths],
                           values=pipeline.feature_service.extract(paths), variant='custom')
    return [matrix.save(pipeline.out / 'features' / 'custom.npz')]


def cmd_train_svm(args, config: ExperimentConfig, pipeline: Pipeline) -> List[Path]:
    if args.features_dir:
        pipeline.features_dir = args.features_dir
    if args.rfs_map:
        if len(config.manipulations) != 1:
            raise ParameterError("--rfs-map trains one detector; name it with --manipulation",
                                 {'manipulations': config.manipulations})
        path = pipeline.train_with_map(config.manipulations[0], config.normalize, args.rfs_map)
        print(f"reduced detector: {path}")
        return [path]
    models = {model_name(m, config.normalize): load_model(pipeline.train_model(m, config.normalize))
              for m in config.manipulations}
    rows = training_summary(models)
    for row in rows:
        print(f"{row['manipulation']}: {row['support_vectors']} support vectors "
              f"({row['sv_fraction']:.3f}), gamma={row['gamma']:g}")
    summary = write_table(pipeline.out / 'models' / 'support_vectors.csv', rows,
                          SUPPORT_VECTOR_COLUMNS, ["support vectors of the full-feature detectors"])
    return [pipeline.model_path(m, config.normalize) for m in config.manipulations] + [summary]


def _attack_outputs(pipeline: Pipeline, domain: str, manipulation: str, normalized: bool,
                    epsilon: float) -> List[Path]:
    base = pipeline.out / 'attacks' / domain / f"{model_name(manipulation, normalized)}_eps{epsilon_tag(epsilon)}"
    return [base / 'outcomes.csv', base / 'features.npz']


def cmd_attack_feature(args, config: ExperimentConfig, pipeline: Pipeline) -> List[Path]:
    outputs = []
    for manipulation in config.manipulations:
        for epsilon in config.epsilons:
            attack_set = pipeline.feature_attacks(manipulation, config.normalize, epsilon)
            print(f"{manipulation} eps={epsilon:g}: success {attack_set.success_rate:.3f}")
            outputs += _attack_outputs(pipeline, 'feature', manipulation, config.normalize, epsilon)
    return outputs


def cmd_attack_pixel(args, config: ExperimentConfig, pipeline: Pipeline) -> List[Path]:
    outputs = []
    for manipulation in config.manipulations:
        for epsilon in config.epsilons:
            attack_set = pipeline.pixel_attacks(manipulation, config.normalize, epsilon)
            print(f"{manipulation} eps={epsilon:g}: success {attack_set.success_rate:.3f}")
            outputs += _attack_outputs(pipeline, 'pixel', manipulation, config.normalize, epsilon)
    return outputs


def cmd_attack_eot(args, config: ExperimentConfig, pipeline: Pipeline) -> List[Path]:
    size = 1 if args.strategy == 'random-subset' else args.ensemble_size
    outputs = []
    for manipulation in config.manipulations:
        attack_set = pipeline.eot_attacks(manipulation, args.k, size, args.epsilon)
        print(f"{manipulation} k={args.k} N={size}: success {attack_set.success_rate:.3f}")
        base = pipeline.out / 'attacks' / 'eot' / f"{manipulation}_k{args.k}_n{size}_eps{epsilon_tag(args.epsilon)}"
        outputs += [base / 'outcomes.csv', base / 'features.npz']
    return outputs


def cmd_sweep_k(args, config: ExperimentConfig, pipeline: Pipeline) -> List[Path]:
    normalized = config.normalize
    if args.attack == 'feature':
        attack_set = pipeline.feature_attacks(args.manipulation, normalized, args.epsilon)
        kind, maps = 'feature', config.maps_per_k
    elif args.attack == 'pixel':
        attack_set = pipeline.pixel_attacks(args.manipulation, normalized, args.epsilon)
        kind, maps = 'pixel', args.maps_per_k or config.pixel_maps_per_k
    else:
        k = args.eot_k or config.eot_ks[0]
        attack_set = pipeline.eot_attacks(args.manipulation, k, args.ensemble_size, args.epsilon)
        kind, maps = f"eot-n{args.ensemble_size}", config.maps_per_k
    table = security_sweep(pipeline, args.manipulation, normalized, attack_set, args.epsilon,
                           kind, config.ks, maps)
    stem = f"sweep_{model_name(args.manipulation, normalized)}_{kind}_eps{epsilon_tag(args.epsilon)}"
    return [table.write_csv(pipeline.tables_dir / f"{stem}.csv"),
            table.write_summary_csv(pipeline.tables_dir / f"{stem}_summary.csv")]


def cmd_theory_sim(args, config: ExperimentConfig, pipeline: Pipeline) -> List[Path]:
    regime = Regime(args.regime)
    z_target = config.theory_z if regime is Regime.IID or args.z is not None \
        else sum(config.dependent_z_window) / 2
    sweep = TheorySweepConfig(n=config.theory_n, z_target=z_target, alphas=tuple(config.theory_alphas),
                              ks=tuple(config.theory_ks), kinds=tuple(ReductionKind(k) for k in args.kinds),
                              regime=regime, repetitions=config.repetitions,
                              samples_per_point=config.samples_per_point,
                              master_seed=config.master_seed, empirical=not args.no_empirical,
                              mean_kind=config.mean_kind)
    result = run_error_sweep(sweep, pipeline.pool)
    return [result.write_csv(pipeline.tables_dir / f"theory_{regime.value}_error.csv")]


def cmd_angle_hist(args, config: ExperimentConfig, pipeline: Pipeline) -> List[Path]:
    regime = Regime(args.regime)
    histogram = run_angle_histogram(config.theory_n, config.angle_ks, config.angle_draws,
                                    master_seed=config.master_seed, regime=regime,
                                    kind=ReductionKind(args.kind),
                                    z_target=sum(config.dependent_z_window) / 2, pool=pipeline.pool)
    for k in config.angle_ks:
        print(f"k={k}: mean angle {histogram.mean_angle(k):.2f} deg")
    return [histogram.write_csv(pipeline.tables_dir / f"angles_{regime.value}_{args.kind}.csv")]


def verify_manifest(args) -> int:
    """Exit 0 when every output recorded in the manifest still has its recorded hash"""
    manifest = RunManifest.load(args.manifest)
    root = args.root or args.manifest.resolve().parent.parent
    changed = verify_outputs(manifest, root)
    if changed:
        raise CacheInvalidError(f"{len(changed)} of {len(manifest.outputs)} outputs changed",
                                {'changed': changed, 'root': str(root)})
    print(f"{len(manifest.outputs)} outputs unchanged")
    return EXIT_OK


COMMANDS = {
    'prepare': cmd_prepare,
    'manipulate': cmd_manipulate,
    'extract-features': cmd_extract_features,
    'train-svm': cmd_train_svm,
    'attack-feature': cmd_attack_feature,
    'attack-pixel': cmd_attack_pixel,
    'attack-eot': cmd_attack_eot,
    'sweep-k': cmd_sweep_k,
    'theory-sim': cmd_theory_sim,
    'angle-hist': cmd_angle_hist,
}


def run(args: argparse.Namespace) -> int:
    if args.command == 'recipe' and args.name == 'list':
        for entry in list_recipes():
            print(f"{entry['name']:8} requires: {entry['requires']}\n         {entry['description']}")
        return EXIT_OK
    if args.command == 'verify':
        return verify_manifest(args)

    config = load_config(args)
    config.create_directories()
    if args.command == 'recipe':
        result = run_recipe(args.name, config, pool=TaskPool(name=f"recipe-{args.name}"))
        for path in result.outputs:
            print(path)
        print(f"manifest: {result.manifest_path}")
        return EXIT_OK

    pipeline = Pipeline(config, pool=TaskPool(name=args.command))
    manifest = RunManifest.start(args.command, config)
    with pipeline.tracker.stage(args.command):
        outputs = COMMANDS[args.command](args, config, pipeline)
    for path in outputs:
        manifest.add_output(pipeline.out, path)
    logger.info("Command finished", command=args.command, outputs=len(outputs),
                jobs=pipeline.pool.get_status(cumulative=True))
    print(f"manifest: {manifest.finish(pipeline.out / 'manifests', args.command, pipeline.pool)}")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except Exception as e:
        response = handle_error(e, args.command)
        print(json.dumps(response, default=str), file=sys.stderr)
        return response['exit_code']


if __name__ == '__main__':
    sys.exit(main())

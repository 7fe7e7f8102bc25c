"""
Dataset preparation
Seeded train/test split of an image corpus, preprocessing (grayscale, 4x downsampling)
and the manipulated counterpart of every kept image, described by a JSON split manifest
"""
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..config import ExperimentConfig
from ..errors import ConfigurationError, ParameterError, ParseError
from ..imaging.feature_store import content_hash
from ..imaging.image_io import is_image_file, read_image, write_image
from ..imaging.manipulations import ManipulationKind, apply_manipulation, downsample4
from ..monitoring import get_logger, log_performance
from .batch_processor import TaskPool
from .seeds import derive_rng

logger = get_logger('dataset')

MANIFEST_NAME = 'split_manifest.json'
ORIGINAL = 'original'
TRAIN = 'train'
TEST = 'test'


@dataclass
class DatasetEntry:
    name: str
    source: str
    split: str
    shape: Tuple[int, int]
    hashes: Dict[str, str] = field(default_factory=dict)

    def relative_path(self, variant: str) -> str:
        return f"{variant}/{self.name}.pgm"


@dataclass
class SplitManifest:
    """Every preprocessed file with its content hash; variants are 'original' and manipulations"""
    master_seed: int
    train_size: int
    test_size: int
    manipulations: List[str]
    entries: List[DatasetEntry] = field(default_factory=list)
    skipped: List[Dict[str, str]] = field(default_factory=list)

    @property
    def variants(self) -> List[str]:
        return [ORIGINAL] + list(self.manipulations)

    def split(self, name: str) -> List[DatasetEntry]:
        if name not in (TRAIN, TEST):
            raise ParameterError(f"Unknown split {name!r}")
        return [e for e in self.entries if e.split == name]

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        for entry in data['entries']:
            entry['shape'] = list(entry['shape'])
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'SplitManifest':
        try:
            entries = [DatasetEntry(name=e['name'], source=e['source'], split=e['split'],
                                    shape=tuple(e['shape']), hashes=dict(e['hashes']))
                       for e in data['entries']]
            return cls(master_seed=int(data['master_seed']), train_size=int(data['train_size']),
                       test_size=int(data['test_size']),
                       manipulations=list(data['manipulations']), entries=entries,
                       skipped=list(data.get('skipped', [])))
        except KeyError as e:
            raise ParseError(f"Split manifest lacks field {e.args[0]!r}", field=str(e.args[0]))

    def save(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        return path

    @classmethod
    def load(cls, path: Path) -> 'SplitManifest':
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as e:
            raise ParseError(f"Invalid split manifest JSON: {e.msg}", offset=e.pos)


def _entry_name(root: Path, path: Path) -> str:
    relative = path.relative_to(root).with_suffix('')
    return '__'.join(relative.parts)


def scan_corpus(root: Path) -> List[Path]:
    root = Path(root)
    if not root.is_dir():
        raise ConfigurationError(f"Corpus root {root} does not exist")
    return sorted(p for p in root.rglob('*') if is_image_file(p))


def load_preprocessed(path: Path, min_side: int) -> np.ndarray:
    """Grayscale, 4x downsampled image, rejected when smaller than min_side"""
    image = downsample4(read_image(path))
    if min(image.shape) < min_side:
        raise ParameterError(f"Preprocessed image is {image.shape[0]}x{image.shape[1]}, "
                             f"below {min_side} pixels", {'path': str(path)})
    return image


def split_indices(count: int, train_size: int, test_size: int, master_seed: int):
    """Seeded uniform split into disjoint train and test index lists"""
    if train_size + test_size > count:
        raise ConfigurationError(
            f"Split of {train_size}+{test_size} images exceeds the {count} usable corpus images",
            {'train_size': train_size, 'test_size': test_size, 'usable': count})
    order = derive_rng(master_seed, 'split').permutation(count)
    return sorted(order[:train_size].tolist()), sorted(order[train_size:train_size + test_size].tolist())


def _write_variants(image: np.ndarray, entry: DatasetEntry, dataset_root: Path,
                    manipulations: Sequence[str], clip_limit: float) -> Dict[str, str]:
    hashes = {}
    variants = [(ORIGINAL, image)]
    for name in manipulations:
        variants.append((name, apply_manipulation(ManipulationKind(name), image, clip_limit=clip_limit)))
    for variant, pixels in variants:
        write_image(pixels, dataset_root / entry.relative_path(variant))
        hashes[variant] = content_hash(pixels).hex()
    return hashes


@log_performance("prepare_dataset")
def prepare_dataset(config: ExperimentConfig, dataset_root: Path,
                    pool: Optional[TaskPool] = None) -> SplitManifest:
    """
    Split the corpus and write preprocessed originals with their manipulated versions

    Unreadable or too-small files are listed in the manifest and skipped with a warning;
    an empty corpus or a split larger than the usable images is fatal.
    """
    if config.corpus_root is None:
        raise ConfigurationError("corpus_root is required to prepare a dataset")
    corpus = Path(config.corpus_root)
    dataset_root = Path(dataset_root)
    pool = pool or TaskPool(name='prepare')

    candidates = scan_corpus(corpus)
    if not candidates:
        raise ConfigurationError(f"Corpus {corpus} contains no images")

    def load(index: int):
        path = candidates[index]
        try:
            return load_preprocessed(path, config.min_side), None
        except (ParseError, ParameterError, OSError) as e:
            return None, str(e)

    usable: List[Tuple[Path, np.ndarray]] = []
    skipped: List[Dict[str, str]] = []
    for index, (image, reason) in pool.map(load, range(len(candidates))):
        path = candidates[index]
        if image is None:
            logger.warning("Corpus file skipped", path=str(path), reason=reason)
            skipped.append({'path': str(path.relative_to(corpus)), 'reason': reason})
        else:
            usable.append((path, image))
    if not usable:
        raise ConfigurationError(f"Corpus {corpus} has no usable images",
                                 {'skipped': len(skipped)})

    train_idx, test_idx = split_indices(len(usable), config.train_size, config.test_size,
                                        config.master_seed)
    selected = [(i, TRAIN) for i in train_idx] + [(i, TEST) for i in test_idx]

    def write(position: int):
        index, split = selected[position]
        path, image = usable[index]
        entry = DatasetEntry(name=_entry_name(corpus, path), source=str(path.relative_to(corpus)),
                             split=split, shape=tuple(image.shape))
        entry.hashes = _write_variants(image, entry, dataset_root, config.manipulations,
                                       config.clip_limit)
        return entry

    manifest = SplitManifest(master_seed=config.master_seed, train_size=config.train_size,
                             test_size=config.test_size, manipulations=list(config.manipulations),
                             entries=[entry for _, entry in pool.map(write, range(len(selected)))],
                             skipped=skipped)
    manifest.save(dataset_root / MANIFEST_NAME)
    logger.info("Dataset prepared", root=str(dataset_root), train=len(train_idx),
                test=len(test_idx), skipped=len(skipped))
    return manifest


def mirrored_target(path: Path, root: Optional[Path]) -> Path:
    if root is None:
        return Path(path.name).with_suffix('.pgm')
    try:
        return path.relative_to(root).with_suffix('.pgm')
    except ValueError:
        raise ParameterError(f"{path} is not under {root}") from None


def manipulate_images(paths: Sequence[Path], kind: ManipulationKind, out_dir: Path,
                      clip_limit: float = 0.02, pool: Optional[TaskPool] = None,
                      root: Optional[Path] = None) -> List[Path]:
    """
    Apply one manipulation to each image and write it as PGM under out_dir.
    With a root the directory structure below it is mirrored, otherwise files land flat.
    """
    out_dir = Path(out_dir)
    pool = pool or TaskPool(name='manipulate')
    targets = [out_dir / mirrored_target(Path(p), root) for p in paths]
    seen: Dict[Path, Path] = {}
    for source, target in zip(paths, targets):
        if target in seen:
            raise ParameterError(f"{seen[target]} and {source} would both be written to {target}")
        seen[target] = Path(source)

    def run_one(index: int) -> Path:
        result = apply_manipulation(kind, read_image(Path(paths[index])), clip_limit=clip_limit)
        return write_image(result, targets[index])

    written = [path for _, path in pool.map(run_one, range(len(paths)))]
    logger.info("Images manipulated", manipulation=kind.value, count=len(written),
                root=str(root) if root else None)
    return written

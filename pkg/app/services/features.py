"""
Feature extraction service
SPAM vectors for lists of images through the content-hashed feature cache and the worker pool
"""
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from ..errors import CacheInvalidError, ParseError
from ..imaging.feature_store import FeatureStore
from ..imaging.image_io import read_image
from ..imaging.spam import SPAM_DIM, extract_spam
from ..monitoring import get_logger
from .batch_processor import TaskPool
from .dataset import SplitManifest

logger = get_logger('features')


@dataclass
class FeatureMatrix:
    """Rows of SPAM features in the order of names"""
    names: List[str]
    values: np.ndarray
    variant: str = ''
    split: str = ''

    def __len__(self) -> int:
        return len(self.names)

    def save(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'wb') as handle:
            np.savez(handle, names=np.array(self.names), values=self.values,
                     variant=np.array(self.variant), split=np.array(self.split))
        return path

    @classmethod
    def load(cls, path: Path) -> 'FeatureMatrix':
        try:
            with np.load(path, allow_pickle=False) as data:
                return cls(names=[str(n) for n in data['names']], values=np.array(data['values']),
                           variant=str(data['variant']), split=str(data['split']))
        except (KeyError, ValueError) as e:
            raise ParseError(f"Malformed feature matrix file: {e}", context={'path': str(path)})


class FeatureService:
    """Extracts SPAM features, reusing cache entries whose image hash still matches"""

    def __init__(self, cache_dir: Path, pool: Optional[TaskPool] = None):
        self.store = FeatureStore(cache_dir)
        self.pool = pool or TaskPool(name='features')
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()

    def features_for(self, path: Path, image: Optional[np.ndarray] = None) -> np.ndarray:
        image = read_image(path) if image is None else image
        key = str(Path(path).resolve())
        try:
            cached = self.store.get(key, image)
        except (CacheInvalidError, ParseError) as e:
            logger.warning("Feature cache entry unreadable", image=key, error=str(e))
            cached = None
        if cached is not None and cached.shape == (SPAM_DIM,):
            with self._lock:
                self.hits += 1
            return cached
        with self._lock:
            self.misses += 1
        values = extract_spam(image)
        self.store.put(key, image, values)
        return values

    def extract(self, paths: Sequence[Path]) -> np.ndarray:
        paths = [Path(p) for p in paths]
        results = self.pool.map(lambda i: self.features_for(paths[i]), range(len(paths)))
        matrix = np.vstack([values for _, values in results]) if results else np.empty((0, SPAM_DIM))
        logger.info("Features extracted", images=len(paths), cache_hits=self.hits,
                    cache_misses=self.misses)
        return matrix

    def extract_split(self, manifest: SplitManifest, dataset_root: Path, variant: str,
                      split: str) -> FeatureMatrix:
        entries = manifest.split(split)
        paths = [Path(dataset_root) / e.relative_path(variant) for e in entries]
        return FeatureMatrix(names=[e.name for e in entries], values=self.extract(paths),
                             variant=variant, split=split)

"""
Experiment configuration
Versioned JSON file with validated defaults; command-line flags override file values
"""

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional

from ..errors import ConfigurationError, ParseError

SCHEMA_VERSION = 1
MANIPULATIONS = ('ahe', 'mf3', 'mf5', 'mf7')
ATTACK_KINDS = ('feature', 'pixel', 'eot')


def _default_output_dir() -> str:
    from ..settings import settings
    return settings.output_dir


@dataclass
class ExperimentConfig:
    """Experiment configuration with validation (desk-scale defaults)"""

    # Corpus and splits
    corpus_root: Optional[str] = None
    train_size: int = 200
    test_size: int = 100
    min_side: int = 128
    manipulations: List[str] = field(default_factory=lambda: list(MANIPULATIONS))
    clip_limit: float = 0.02

    # Features and detectors
    normalize: bool = False
    svm_C: float = 100.0
    svm_gamma: Optional[float] = None
    svm_gamma_grid: List[float] = field(default_factory=lambda: [2.0 ** e for e in range(-15, 4, 2)])
    svm_c_grid: Optional[List[float]] = None
    svm_folds: int = 5

    # RFS sweeps
    ks: List[int] = field(default_factory=lambda: [1, 5, 10, 20, 50, 100, 200, 300, 400, 500, 600, 686])
    maps_per_k: int = 100
    pixel_maps_per_k: int = 20
    rfs_kind: str = 'rfs'

    # Attacks
    epsilons: List[float] = field(default_factory=lambda: [0.5, 0.3, 0.1])
    normalized_epsilons: List[float] = field(default_factory=lambda: [0.5, 0.45])
    attack_kinds: List[str] = field(default_factory=lambda: ['feature', 'pixel'])
    feature_step: Optional[float] = None
    feature_max_iterations: int = 5000
    pixel_fraction: float = 0.20
    pixel_max_iterations: int = 50
    pixel_images: int = 30
    eot_sizes: List[int] = field(default_factory=lambda: [50, 100])
    eot_ks: List[int] = field(default_factory=lambda: [20, 50, 100, 200])

    # Theory studies
    theory_n: int = 300
    theory_z: float = 4.0
    theory_alphas: List[float] = field(default_factory=lambda: [1.2, 2.0])
    theory_ks: List[int] = field(default_factory=lambda: [1, 10, 25, 50, 75, 100, 150, 200, 250, 300])
    repetitions: int = 50
    samples_per_point: int = 10_000
    dependent_z_window: List[float] = field(default_factory=lambda: [4.5, 5.5])
    mean_kind: str = 'constant'
    angle_draws: int = 1000
    angle_ks: List[int] = field(default_factory=lambda: [50, 150, 250])

    # Run
    master_seed: int = 0
    output_dir: str = field(default_factory=_default_output_dir)
    auto_build: bool = True

    def validate(self, check_paths: bool = True):
        """Collect every problem, then raise one ConfigurationError"""
        errors = []

        if self.train_size < 2 or self.test_size < 1:
            errors.append("train_size must be >= 2 and test_size >= 1")
        if self.min_side < 16:
            errors.append("min_side must be at least 16")
        unknown = sorted(set(self.manipulations) - set(MANIPULATIONS))
        if unknown or not self.manipulations:
            errors.append(f"manipulations must be a non-empty subset of {', '.join(MANIPULATIONS)}")
        if not 0 <= self.clip_limit <= 1:
            errors.append("clip_limit must lie in [0, 1]")

        if self.svm_C <= 0:
            errors.append("svm_C must be positive")
        if self.svm_gamma is not None and self.svm_gamma <= 0:
            errors.append("svm_gamma must be positive")
        if not self.svm_gamma_grid or any(g <= 0 for g in self.svm_gamma_grid):
            errors.append("svm_gamma_grid must hold positive values")
        if self.svm_folds < 2:
            errors.append("svm_folds must be >= 2")

        if not self.ks or any(k < 1 or k > 686 for k in self.ks):
            errors.append("ks must lie in [1, 686]")
        if self.maps_per_k < 1 or self.pixel_maps_per_k < 1:
            errors.append("maps per k must be >= 1")
        if self.rfs_kind not in ('rfs', 'rp'):
            errors.append("rfs_kind must be 'rfs' or 'rp'")

        if not self.epsilons or any(not 0 < e <= 0.5
                                    for e in self.epsilons + self.normalized_epsilons):
            errors.append("epsilons must lie in (0, 0.5]")
        if any(kind not in ATTACK_KINDS for kind in self.attack_kinds):
            errors.append(f"attack_kinds must be drawn from {', '.join(ATTACK_KINDS)}")
        if not 0 < self.pixel_fraction <= 1:
            errors.append("pixel_fraction must lie in (0, 1]")
        if self.feature_max_iterations < 1 or self.pixel_max_iterations < 1:
            errors.append("attack iteration caps must be >= 1")
        if self.pixel_images < 1:
            errors.append("pixel_images must be >= 1")
        if any(size < 1 for size in self.eot_sizes):
            errors.append("eot_sizes must be >= 1")

        if self.theory_n < 2:
            errors.append("theory_n must be >= 2")
        if any(k < 1 or k > self.theory_n for k in self.theory_ks + self.angle_ks):
            errors.append(f"theory and angle ks must lie in [1, {self.theory_n}]")
        if any(a < 1 for a in self.theory_alphas):
            errors.append("theory_alphas must be >= 1")
        if self.theory_z <= 0:
            errors.append("theory_z must be positive")
        if self.repetitions < 1 or self.samples_per_point < 1 or self.angle_draws < 1:
            errors.append("repetitions, samples_per_point and angle_draws must be >= 1")
        if len(self.dependent_z_window) != 2 or not 0 < self.dependent_z_window[0] <= self.dependent_z_window[1]:
            errors.append("dependent_z_window must be [lo, hi] with 0 < lo <= hi")
        if self.mean_kind not in ('constant', 'random'):
            errors.append("mean_kind must be 'constant' or 'random'")

        if not self.output_dir:
            errors.append("output_dir cannot be empty")
        if check_paths and self.corpus_root is not None:
            root = Path(self.corpus_root)
            if not root.is_dir():
                errors.append(f"corpus_root {self.corpus_root} does not exist")

        if errors:
            raise ConfigurationError(f"Configuration validation failed: {'; '.join(errors)}")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ExperimentConfig':
        data = dict(data)
        version = data.pop('schema_version', SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ParseError(f"Unsupported config schema {version!r}", field='schema_version')
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ParseError(f"Unknown configuration keys: {', '.join(unknown)}", field=unknown[0])
        return cls(**data)

    @classmethod
    def from_file(cls, path: Path) -> 'ExperimentConfig':
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ParseError(f"Invalid config JSON: {e.msg}", offset=e.pos)
        except OSError as e:
            raise ConfigurationError(f"Cannot read config file {path}: {e}")
        if not isinstance(data, dict):
            raise ParseError("Config JSON must be an object", offset=0)
        return cls.from_dict(data)

    @classmethod
    def load(cls, path: Optional[Path] = None, overrides: Optional[Dict[str, Any]] = None,
             check_paths: bool = True) -> 'ExperimentConfig':
        """File values (or defaults), then overrides that are not None, then validation"""
        config = cls.from_file(path) if path else cls()
        known = {f.name for f in fields(cls)}
        for key, value in (overrides or {}).items():
            if value is None:
                continue
            if key not in known:
                raise ConfigurationError(f"Unknown configuration override {key!r}")
            setattr(config, key, value)
        config.validate(check_paths=check_paths)
        return config

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['schema_version'] = SCHEMA_VERSION
        return data

    def save(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        return path

    def create_directories(self):
        Path(self.output_dir).mkdir(parents=True, exist_ok=True)

    def summary_lines(self) -> List[str]:
        return [
            f"corpus: {self.corpus_root or '-'} (train {self.train_size}, test {self.test_size})",
            f"manipulations: {', '.join(self.manipulations)}; normalized: {self.normalize}",
            f"ks: {self.ks}; maps per k: {self.maps_per_k} / pixel {self.pixel_maps_per_k}",
            f"epsilons: {self.epsilons}; master seed: {self.master_seed}",
            f"output: {self.output_dir}",
        ]

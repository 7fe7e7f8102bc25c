"""
Run manifests
Configuration snapshot, tool version, content hash of every output and stage timings
"""
import hashlib
import json
import platform
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

from .. import __version__
from ..config import ExperimentConfig
from ..errors import ParseError
from ..monitoring import get_error_reporter, get_performance_tracker
from .batch_processor import TaskPool


def file_digest(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as handle:
        for block in iter(lambda: handle.read(1 << 20), b''):
            digest.update(block)
    return digest.hexdigest()


@dataclass
class RunManifest:
    """Everything needed to rerun a command and check that its outputs are unchanged"""
    command: str
    config: Dict[str, Any]
    version: str = __version__
    outputs: Dict[str, str] = field(default_factory=dict)
    inputs: Dict[str, str] = field(default_factory=dict)
    seeds: Dict[str, Any] = field(default_factory=dict)
    stages: List[Dict[str, Any]] = field(default_factory=list)
    metrics: Dict[str, Any] = field(default_factory=dict)
    jobs: Dict[str, int] = field(default_factory=dict)
    environment: Dict[str, Any] = field(default_factory=dict)
    created_at: float = field(default_factory=time.time)

    @classmethod
    def start(cls, command: str, config: ExperimentConfig) -> 'RunManifest':
        from ..settings import settings
        return cls(command=command, config=config.to_dict(),
                   seeds={'master_seed': config.master_seed,
                          'derivation': 'sha256(master|label|indices), first 8 bytes little-endian'},
                   environment={'python': platform.python_version(), 'workers': settings.workers})

    def add_output(self, root: Path, path: Path):
        self.outputs[str(Path(path).relative_to(root))] = file_digest(path)

    def add_input(self, root: Path, path: Path):
        self.inputs[str(Path(path).relative_to(root))] = file_digest(path)

    def finish(self, out_dir: Path, name: Optional[str] = None, pool: Optional[TaskPool] = None) -> Path:
        """Attach timings, custom metrics and job counts; write the manifest and its error report"""
        out_dir = Path(out_dir)
        name = name or self.command.replace(' ', '_')
        summary = get_performance_tracker().get_summary()
        self.stages = summary['stages']
        self.metrics = summary['custom']
        if pool is not None:
            self.jobs = pool.get_status(cumulative=True)
        report = out_dir / f"{name}.errors.json"
        get_error_reporter().export_error_report(str(report))
        path = out_dir / f"{name}.manifest.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True, default=str))
        return path

    @classmethod
    def load(cls, path: Path) -> 'RunManifest':
        try:
            data = json.loads(Path(path).read_text())
            return cls(**data)
        except json.JSONDecodeError as e:
            raise ParseError(f"Invalid run manifest JSON: {e.msg}", offset=e.pos)
        except TypeError as e:
            raise ParseError(f"Malformed run manifest: {e}")


def verify_outputs(manifest: RunManifest, root: Path) -> List[str]:
    """Relative paths whose current content differs from the recorded hash"""
    root = Path(root)
    changed = []
    for relative, digest in sorted(manifest.outputs.items()):
        path = root / relative
        if not path.exists() or file_digest(path) != digest:
            changed.append(relative)
    return changed

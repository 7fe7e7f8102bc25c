"""
Random reduction maps
Random Feature Selection (k distinct coordinates) and Random Projection (k unit-norm rows)

A serialized map is the detector's secret key: whoever holds the file knows which
features the reduced detector looks at. Store map files with the same care as keys.
"""
import json
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from ..errors import ParameterError, ParseError
from .models import GaussianHypothesisModel

MAP_SCHEMA_VERSION = 1


class ReductionKind(Enum):
    RFS = "rfs"
    RP = "rp"


@dataclass(frozen=True, eq=False)
class ReductionMap:
    """k x n matrix S; RFS keeps only the selected column indices"""
    kind: ReductionKind
    cols: int
    indices: Optional[np.ndarray] = None
    matrix: Optional[np.ndarray] = None
    seed: Optional[int] = None

    def __post_init__(self):
        if self.kind is ReductionKind.RFS:
            if self.indices is None:
                raise ParameterError("RFS maps need selected indices")
            indices = np.array(self.indices, dtype=np.int64)
            if indices.ndim != 1 or indices.size < 1:
                raise ParameterError("RFS indices must be a non-empty vector")
            if indices.min() < 0 or indices.max() >= self.cols:
                raise ParameterError("RFS index out of range", {'n': self.cols})
            if np.unique(indices).size != indices.size:
                raise ParameterError("RFS indices must be distinct")
            indices.setflags(write=False)
            object.__setattr__(self, 'indices', indices)
        else:
            if self.matrix is None:
                raise ParameterError("RP maps need a projection matrix")
            matrix = np.array(self.matrix, dtype=float)
            if matrix.ndim != 2 or matrix.shape[1] != self.cols or matrix.shape[0] < 1:
                raise ParameterError("RP matrix must be k x n", {'n': self.cols})
            matrix.setflags(write=False)
            object.__setattr__(self, 'matrix', matrix)
        if not 1 <= self.rows <= self.cols:
            raise ParameterError("Reduction needs 1 <= k <= n", {'k': self.rows, 'n': self.cols})

    @property
    def rows(self) -> int:
        if self.kind is ReductionKind.RFS:
            return int(self.indices.size)
        return int(self.matrix.shape[0])

    @property
    def k(self) -> int:
        return self.rows

    @property
    def n(self) -> int:
        return self.cols

    @cached_property
    def dense(self) -> np.ndarray:
        """S as a dense k x n array"""
        if self.kind is ReductionKind.RP:
            return self.matrix
        selection = np.zeros((self.rows, self.cols))
        selection[np.arange(self.rows), self.indices] = 1.0
        selection.setflags(write=False)
        return selection

    def _check_length(self, v: np.ndarray, expected: int):
        if v.shape[-1] != expected:
            raise ParameterError("Dimension mismatch", {'expected': expected, 'got': v.shape[-1]})

    def apply(self, v: np.ndarray) -> np.ndarray:
        """S v for a vector, or row-wise for an array (..., n)"""
        v = np.asarray(v, dtype=float)
        self._check_length(v, self.cols)
        if self.kind is ReductionKind.RFS:
            return v[..., self.indices]
        return v @ self.matrix.T

    def lift(self, reduced: np.ndarray) -> np.ndarray:
        """S^T r: scatter a reduced-space vector (e.g. a gradient) back to full space"""
        reduced = np.asarray(reduced, dtype=float)
        self._check_length(reduced, self.rows)
        if self.kind is ReductionKind.RP:
            return reduced @ self.matrix
        full = np.zeros(reduced.shape[:-1] + (self.cols,))
        full[..., self.indices] = reduced
        return full

    def to_dict(self) -> Dict[str, Any]:
        data = {
            'schema_version': MAP_SCHEMA_VERSION,
            'kind': self.kind.value,
            'n': self.cols,
            'k': self.rows,
            'seed': self.seed,
        }
        if self.kind is ReductionKind.RFS:
            data['indices'] = self.indices.tolist()
        else:
            data['matrix'] = self.matrix.ravel().tolist()
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ReductionMap':
        for key in ('kind', 'n', 'k'):
            if key not in data:
                raise ParseError(f"Map JSON is missing '{key}'", field=key)
        try:
            kind = ReductionKind(data['kind'])
        except ValueError:
            raise ParseError(f"Unknown reduction kind {data['kind']!r}", field='kind')
        n, k = int(data['n']), int(data['k'])
        if kind is ReductionKind.RFS:
            if 'indices' not in data:
                raise ParseError("RFS map JSON is missing 'indices'", field='indices')
            if len(data['indices']) != k:
                raise ParseError("Index count does not match k", field='indices')
            return cls(kind=kind, cols=n, indices=np.asarray(data['indices']), seed=data.get('seed'))
        if 'matrix' not in data:
            raise ParseError("RP map JSON is missing 'matrix'", field='matrix')
        matrix = np.asarray(data['matrix'], dtype=float)
        if matrix.size != k * n:
            raise ParseError("Matrix length does not match k * n", field='matrix')
        return cls(kind=kind, cols=n, matrix=matrix.reshape(k, n), seed=data.get('seed'))

    def save(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict()))
        return path

    @classmethod
    def load(cls, path: Path) -> 'ReductionMap':
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ParseError(f"Invalid map JSON: {e.msg}", offset=e.pos)
        return cls.from_dict(data)


def _check_sizes(n: int, k: int):
    if n < 1 or not 1 <= k <= n:
        raise ParameterError("Reduction needs 1 <= k <= n", {'k': k, 'n': n})


def draw_rfs(n: int, k: int, rng: np.random.Generator, seed: Optional[int] = None) -> ReductionMap:
    """k distinct coordinates sampled uniformly without replacement"""
    _check_sizes(n, k)
    indices = rng.choice(n, size=k, replace=False)
    return ReductionMap(kind=ReductionKind.RFS, cols=n, indices=indices, seed=seed)


def draw_rp(n: int, k: int, rng: np.random.Generator, seed: Optional[int] = None) -> ReductionMap:
    """Gaussian rows normalized to unit Euclidean norm (rows are not orthogonalized)"""
    _check_sizes(n, k)
    matrix = rng.standard_normal((k, n))
    matrix /= np.linalg.norm(matrix, axis=1, keepdims=True)
    return ReductionMap(kind=ReductionKind.RP, cols=n, matrix=matrix, seed=seed)


def draw_map(kind: ReductionKind, n: int, k: int, rng: np.random.Generator,
             seed: Optional[int] = None) -> ReductionMap:
    if kind is ReductionKind.RFS:
        return draw_rfs(n, k, rng, seed)
    return draw_rp(n, k, rng, seed)


def identity_map(n: int) -> ReductionMap:
    """RFS map keeping every feature in order"""
    return ReductionMap(kind=ReductionKind.RFS, cols=n, indices=np.arange(n))


def reduce_model(reduction: ReductionMap, model: GaussianHypothesisModel) -> GaussianHypothesisModel:
    """Model of the reduced features: mean S u, covariance S Sigma S^T"""
    if reduction.cols != model.dim:
        raise ParameterError("Map and model dimensions differ",
                             {'map_cols': reduction.cols, 'model_dim': model.dim})
    if reduction.kind is ReductionKind.RFS:
        idx = reduction.indices
        mean = model.mean[idx]
        covariance = model.covariance[np.ix_(idx, idx)]
    else:
        S = reduction.matrix
        mean = S @ model.mean
        covariance = S @ model.covariance @ S.T
        covariance = 0.5 * (covariance + covariance.T)
    reduced = GaussianHypothesisModel(mean=mean, covariance=covariance, regime=model.regime,
                                      seed=model.seed,
                                      provenance={'reduced_from': model.dim, 'k': reduction.rows})
    # Validates positive definiteness now rather than at first use
    reduced.cholesky
    return reduced

import dataclasses
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from pde_discovery.exceptions import DomainError, InternalError
from pde_discovery.feature_library import term_label

HEADER_KEYS = ('name', 'pde_name', 'generator', 'params', 'noise_level', 'noise_convention', 'seed', 'sampling')


@dataclass
class Experiment:
    """One dataset sampled from a spatiotemporal field u(t, x) stored on a (nt, nx) grid.

    ``sample_index`` holds flat grid indices (row-major, it * nx + ix) of the observed
    samples; when it is None every grid node is observed.
    """
    x: np.ndarray
    t: np.ndarray
    u: np.ndarray
    pde_name: str
    params: Dict[str, float] = field(default_factory=dict)
    noise_level: float = 0.0
    seed: int = 0
    generator: str = ''
    name: str = ''
    noise_convention: Optional[str] = None
    sample_index: Optional[np.ndarray] = None
    sampling: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.t = np.asarray(self.t, dtype=np.float64)
        self.u = np.asarray(self.u, dtype=np.float64)
        if self.sample_index is not None:
            self.sample_index = np.asarray(self.sample_index, dtype=np.int64)

    def validate(self):
        if self.u.shape != (self.t.size, self.x.size):
            raise InternalError('Field shape %s does not match grids (nt=%d, nx=%d)'
                                % (self.u.shape, self.t.size, self.x.size))
        if not np.all(np.isfinite(self.u)):
            raise DomainError('Experiment %s has non-finite field values' % self.name)
        if np.any(np.diff(self.x) <= 0) or np.any(np.diff(self.t) <= 0):
            raise DomainError('Experiment %s grids must be strictly increasing' % self.name)
        if self.sample_index is not None:
            if np.any(self.sample_index < 0) or np.any(self.sample_index >= self.u.size):
                raise DomainError('Experiment %s sample index outside the grid' % self.name)
        return self

    @property
    def nx(self):
        return self.x.size

    @property
    def nt(self):
        return self.t.size

    @property
    def n(self):
        return self.u.size if self.sample_index is None else self.sample_index.size

    def flat_index(self):
        if self.sample_index is None:
            return np.arange(self.u.size)
        return self.sample_index

    def grid_points(self):
        xx, tt = np.meshgrid(self.x, self.t)
        return np.column_stack([xx.ravel(), tt.ravel()])

    def points(self):
        """(n, 2) matrix of observed (x, t) coordinates."""
        return self.grid_points()[self.flat_index()]

    def values(self):
        return self.u.ravel()[self.flat_index()]

    def bounds(self):
        """Lower and upper corners of the (x, t) box used to normalise network inputs."""
        return np.array([self.x[0], self.t[0]]), np.array([self.x[-1], self.t[-1]])

    def normalization(self):
        lower, upper = self.bounds()
        half_width = (upper - lower) / 2.0
        return {'x_shift': float((upper[0] + lower[0]) / 2.0), 'x_scale': float(1.0 / half_width[0]),
                't_shift': float((upper[1] + lower[1]) / 2.0), 't_scale': float(1.0 / half_width[1])}

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def header(self):
        header = {key: getattr(self, key) for key in HEADER_KEYS}
        header['params'] = {k: float(v) for k, v in self.params.items()}
        header['noise_level'] = float(self.noise_level)
        header['seed'] = int(self.seed)
        header['x'] = self.x.tolist()
        header['t'] = self.t.tolist()
        header['sample_index'] = None if self.sample_index is None else self.sample_index.tolist()
        header['normalization'] = self.normalization()
        return header

    @classmethod
    def from_header(cls, header, flat_u):
        x = np.asarray(header['x'], dtype=np.float64)
        t = np.asarray(header['t'], dtype=np.float64)
        return cls(x=x, t=t, u=np.asarray(flat_u, dtype=np.float64).reshape(t.size, x.size),
                   pde_name=header['pde_name'], params=dict(header['params']),
                   noise_level=header['noise_level'], seed=header['seed'], generator=header['generator'],
                   name=header['name'], noise_convention=header.get('noise_convention'),
                   sample_index=header.get('sample_index'), sampling=dict(header.get('sampling') or {}))


@dataclass
class GroundTruth:
    """Active terms shared by all experiments and per-experiment coefficients (label -> value)."""
    active_terms: frozenset
    coefficients: List[Dict[str, float]]

    def coefficient_matrix(self, labels):
        index = {label: j for j, label in enumerate(labels)}
        unknown = self.active_terms - set(index)
        if unknown:
            raise DomainError('Ground-truth terms %s are not in the library' % sorted(unknown))
        matrix = np.zeros((len(self.coefficients), len(labels)))
        for i, coefficients in enumerate(self.coefficients):
            for label, value in coefficients.items():
                matrix[i, index[label]] = value
        return matrix

    def to_dict(self):
        return {'active_terms': sorted(self.active_terms), 'coefficients': self.coefficients}


def _truth_for(experiment):
    u_xx, u_xxx, u_xxxx = (term_label(0, b) for b in (2, 3, 4))
    advection = term_label(1, 1)
    if experiment.pde_name == 'burgers':
        return {u_xx: float(experiment.params['nu']), advection: -1.0}
    if experiment.pde_name == 'kdv':
        return {advection: -6.0, u_xxx: -1.0}
    if experiment.pde_name == 'ks':
        return {advection: -1.0, u_xx: -1.0, u_xxxx: -1.0}
    raise DomainError('No ground truth known for PDE %s' % experiment.pde_name)


def ground_truth(experiments):
    coefficients = [_truth_for(experiment) for experiment in experiments]
    active = frozenset().union(*[set(c) for c in coefficients])
    return GroundTruth(active_terms=active, coefficients=coefficients)

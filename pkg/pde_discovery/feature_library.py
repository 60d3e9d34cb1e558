"""Candidate-term libraries Theta and time-derivative targets.

Columns are u^a * u_x^(b) for a in 0..max_poly and b in 0..max_order, ordered
poly-degree-major: column index = a * (max_order + 1) + b. Column 0 is the
constant term. Masks and reports always refer to columns by label.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
import torch

from pde_discovery.approximator import DerivativeBundle, input_derivatives
from pde_discovery.exceptions import DomainError, InternalError
from pde_discovery.synthetic.solutions import has_closed_form, solution_for

logger = logging.getLogger(__name__)

DEFAULT_MAX_POLY = 5
DEFAULT_MAX_ORDER = 5
PRODUCT = '·'


def term_label(poly, order):
    if poly == 0 and order == 0:
        return '1'
    parts = []
    if poly == 1:
        parts.append('u')
    elif poly > 1:
        parts.append('u^%d' % poly)
    if order > 0:
        parts.append('u_' + 'x' * order)
    return PRODUCT.join(parts)


def library_labels(max_poly=DEFAULT_MAX_POLY, max_order=DEFAULT_MAX_ORDER):
    return [term_label(a, b) for a in range(max_poly + 1) for b in range(max_order + 1)]


@dataclass
class TermLibrary:
    theta: np.ndarray
    dudt: np.ndarray
    labels: List[str]
    experiment_id: str = ''
    points: Optional[np.ndarray] = None
    zero_columns: Tuple[int, ...] = ()

    @property
    def n(self):
        return self.theta.shape[0]

    @property
    def p(self):
        return self.theta.shape[1]

    def subset(self, rows):
        points = None if self.points is None else self.points[rows]
        return TermLibrary(self.theta[rows], self.dudt[rows], self.labels, self.experiment_id, points,
                           self.zero_columns)

    def to_frame(self):
        frame = pd.DataFrame(self.theta, columns=self.labels)
        frame.insert(0, 'u_t', self.dudt)
        if self.points is not None:
            frame.insert(0, 't', self.points[:, 1])
            frame.insert(0, 'x', self.points[:, 0])
        return frame

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False, float_format='%.17g')
        return path


@dataclass
class StackedLibrary:
    """Per-experiment libraries sharing one label space; n may differ between experiments."""
    libraries: List[TermLibrary] = field(default_factory=list)

    def __post_init__(self):
        if not self.libraries:
            raise InternalError('A stacked library needs at least one experiment')
        labels = self.libraries[0].labels
        for library in self.libraries[1:]:
            if list(library.labels) != list(labels):
                raise InternalError('Experiment %s has a different label space' % library.experiment_id)

    @property
    def labels(self):
        return list(self.libraries[0].labels)

    @property
    def q(self):
        return len(self.libraries)

    @property
    def p(self):
        return self.libraries[0].p

    def shared_points(self):
        """True when every experiment was sampled at identical coordinates."""
        first = self.libraries[0].points
        if first is None:
            return False
        return all(lib.points is not None and lib.points.shape == first.shape and np.array_equal(lib.points, first)
                   for lib in self.libraries[1:])


def library_matrix(u, derivs: DerivativeBundle, max_poly=DEFAULT_MAX_POLY, max_order=DEFAULT_MAX_ORDER):
    """Theta for numpy arrays or torch tensors (gradients flow through the torch version)."""
    if derivs.max_order < max_order:
        raise InternalError('Library needs derivatives up to order %d, bundle has %d' % (max_order, derivs.max_order))
    n = u.shape[0]
    for vector in [derivs.u_t] + list(derivs.u_x[:max_order]):
        if vector.shape[0] != n:
            raise InternalError('Derivative length %d does not match field length %d' % (vector.shape[0], n))
    ones = u * 0 + 1
    spatial = [ones] + list(derivs.u_x[:max_order])
    columns = [(u ** a if a else ones) * spatial[b] for a in range(max_poly + 1) for b in range(max_order + 1)]
    if isinstance(u, torch.Tensor):
        return torch.stack(columns, dim=1)
    return np.stack(columns, axis=1)


def build_library(u, derivs: DerivativeBundle, max_poly=DEFAULT_MAX_POLY, max_order=DEFAULT_MAX_ORDER,
                  experiment_id='', points=None) -> TermLibrary:
    derivs = derivs.numpy()
    u = np.asarray(u.detach().cpu().numpy() if isinstance(u, torch.Tensor) else u, dtype=np.float64)
    theta = library_matrix(u, derivs, max_poly, max_order)
    return TermLibrary(theta=theta, dudt=np.asarray(derivs.u_t, dtype=np.float64),
                       labels=library_labels(max_poly, max_order), experiment_id=experiment_id,
                       points=None if points is None else np.asarray(points, dtype=np.float64))


def normalize_columns(lib: TermLibrary):
    """Scale columns to unit L2 norm; returns the scaled library and the scales.

    Coefficients fitted on the scaled library map back through xi = xi_scaled / scale.
    All-zero columns keep scale 1 and are listed in ``zero_columns``.
    """
    norms = np.linalg.norm(lib.theta, axis=0)
    zero = tuple(int(j) for j in np.flatnonzero(norms == 0))
    if zero:
        logger.warning('Library %s has all-zero columns: %s', lib.experiment_id, [lib.labels[j] for j in zero])
    scales = np.where(norms > 0, norms, 1.0)
    normalized = TermLibrary(theta=lib.theta / scales, dudt=lib.dudt, labels=lib.labels,
                             experiment_id=lib.experiment_id, points=lib.points, zero_columns=zero)
    return normalized, scales


def spectral_derivatives(experiment, max_order=DEFAULT_MAX_ORDER) -> DerivativeBundle:
    """x-derivatives by FFT on a periodic grid, t-derivative by second-order finite differences."""
    u = experiment.u
    nx = experiment.nx
    length = experiment.params.get('domain_length', (experiment.x[1] - experiment.x[0]) * nx)
    wavenumbers = 2.0 * np.pi * np.arange(nx // 2 + 1) / length
    spectrum = np.fft.rfft(u, axis=1)
    index = experiment.flat_index()
    u_x = []
    for order in range(1, max_order + 1):
        multiplier = (1j * wavenumbers) ** order
        if order % 2 == 1 and nx % 2 == 0:
            multiplier[-1] = 0.0
        u_x.append(np.fft.irfft(spectrum * multiplier, n=nx, axis=1).ravel()[index])
    u_t = np.gradient(u, experiment.t, axis=0, edge_order=2).ravel()[index]
    return DerivativeBundle(u.ravel()[index], u_t, u_x)


def oracle_derivatives(experiment, max_order=DEFAULT_MAX_ORDER) -> DerivativeBundle:
    """Derivatives that do not depend on a trained network.

    Closed-form generators are differentiated exactly with autograd; periodic
    numerical fields fall back to spectral x-derivatives.
    """
    if has_closed_form(experiment.generator):
        solution = solution_for(experiment.generator, experiment.params)
        return input_derivatives(solution, experiment.points(), max_order).numpy()
    if experiment.generator == 'ks':
        return spectral_derivatives(experiment, max_order)
    raise DomainError('No oracle derivatives for generator %s' % experiment.generator)


def oracle_library(experiment, max_poly=DEFAULT_MAX_POLY, max_order=DEFAULT_MAX_ORDER) -> TermLibrary:
    derivs = oracle_derivatives(experiment, max_order)
    return build_library(derivs.u, derivs, max_poly, max_order, experiment_id=experiment.name,
                         points=experiment.points())

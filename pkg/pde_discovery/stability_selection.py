"""Stability selection with the randomised adaptive (group) Lasso.

For B random half-subsamples and every lambda on a log-spaced path the
randomised estimator is refitted; the selection probability of a column is the
fraction of subsamples in which its coefficient (group norm in grouped mode)
is non-zero. The error-controlled region keeps the lambdas whose expected
number of false positives, q_hat^2 / ((2 pi_thr - 1) p), stays below EV_max;
stable terms reach pi_thr somewhere inside it.
"""
import logging
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np
from joblib import Parallel, delayed

from pde_discovery.config import PdeDiscoveryConfig
from pde_discovery.exceptions import ConfigurationError, DomainError, NumericError
from pde_discovery.feature_library import StackedLibrary, TermLibrary, normalize_columns
from pde_discovery.sparse_solvers import (DEFAULT_GAMMA, DEFAULT_MAX_ITER, DEFAULT_PILOT_ALPHA, DEFAULT_TOL,
                                          AdaptiveWeights, lambda_max, lambda_path, library_problem,
                                          pilot_weights, sample_randomisation, solve_penalised)

logger = logging.getLogger(__name__)


@dataclass
class StabilityConfig:
    resamples: int = 40
    pi_thr: float = 0.9
    ev_max: float = 3.0
    epsilon: float = 1e-3
    m: int = 50
    seed: int = 0
    gamma: float = DEFAULT_GAMMA
    pilot_alpha: float = DEFAULT_PILOT_ALPHA
    recompute_pilot: bool = True
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    n_jobs: int = PdeDiscoveryConfig.THREADS

    def validate(self):
        if not 0.5 < self.pi_thr <= 1:
            raise ConfigurationError('pi_thr must lie in (0.5, 1], got %s' % self.pi_thr)
        if self.resamples < 2:
            raise ConfigurationError('At least 2 resamples are needed, got %s' % self.resamples)
        if not self.ev_max > 0:
            raise ConfigurationError('EV_max must be positive, got %s' % self.ev_max)
        if not 0 < self.epsilon < 1:
            raise ConfigurationError('Path length epsilon must lie in (0, 1), got %s' % self.epsilon)
        if self.m < 2:
            raise ConfigurationError('The lambda grid needs at least 2 values, got %s' % self.m)
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, values):
        return cls(**values).validate()


@dataclass
class StabilityReport:
    labels: List[str]
    lambdas: np.ndarray
    pi_hat: np.ndarray
    region: List[int]
    stable_set: List[str]
    fallback: bool = False
    failed_subsamples: int = 0
    mode: str = 'grouped'
    config: dict = field(default_factory=dict)

    @property
    def q_hat(self):
        return self.pi_hat.sum(axis=0)

    def max_probability(self):
        """Per-label maximum selection probability over the region."""
        if not self.region:
            return dict.fromkeys(self.labels, 0.0)
        return dict(zip(self.labels, self.pi_hat[:, self.region].max(axis=1).tolist()))

    def to_dict(self):
        return {
            'labels': list(self.labels),
            'lambdas': np.asarray(self.lambdas).tolist(),
            'pi_hat': np.asarray(self.pi_hat).tolist(),
            'q_hat': self.q_hat.tolist(),
            'lambda_star_region': list(self.region),
            'stable_set': list(self.stable_set),
            'fallback': self.fallback,
            'failed_subsamples': self.failed_subsamples,
            'mode': self.mode,
            'config': self.config,
        }

    @classmethod
    def from_dict(cls, values):
        return cls(labels=list(values['labels']), lambdas=np.asarray(values['lambdas'], dtype=np.float64),
                   pi_hat=np.asarray(values['pi_hat'], dtype=np.float64).reshape(len(values['labels']), -1),
                   region=list(values['lambda_star_region']), stable_set=list(values['stable_set']),
                   fallback=values.get('fallback', False), failed_subsamples=values.get('failed_subsamples', 0),
                   mode=values.get('mode', 'grouped'), config=dict(values.get('config') or {}))


def _as_stacked(problem):
    if isinstance(problem, TermLibrary):
        return StackedLibrary([problem])
    return problem


def _normalized(libraries):
    return [normalize_columns(lib)[0] for lib in libraries]


def _pilot(libraries, config):
    return pilot_weights([lib.theta for lib in libraries], [lib.dudt for lib in libraries], config.gamma,
                         config.pilot_alpha)


def lambda_grid(problem, config: StabilityConfig):
    """Log-spaced path from lambda_max of the full data (unit random weights) down to epsilon * lambda_max."""
    stacked = _as_stacked(problem)
    normalized = _normalized(stacked.libraries)
    w_hat = _pilot(normalized, config)
    lam_max = lambda_max(library_problem(normalized, AdaptiveWeights(w_hat, np.ones_like(w_hat))))
    return lambda_path(lam_max, config.epsilon, config.m)


def _subsample_rows(stacked, rng):
    if stacked.shared_points():
        n = stacked.libraries[0].n
        rows = np.sort(rng.choice(n, n // 2, replace=False))
        return [rows] * stacked.q
    return [np.sort(rng.choice(lib.n, lib.n // 2, replace=False)) for lib in stacked.libraries]


def _path_selection(problem, lambdas, penalty_weights, labels, config):
    selected = np.zeros((len(lambdas), problem.p), dtype=bool)
    xi = None
    for k, lam in enumerate(lambdas):
        fit = solve_penalised(problem, lam, penalty_weights, labels, xi0=xi, tol=config.tol,
                              max_iter=config.max_iter)
        xi = fit.xi
        selected[k] = fit.active()
    return selected


def _subsample_selection(stacked, lambdas, config, seeds, full_w_hat):
    """Selections (m x p) of one subsample; a solver failure is retried once with the second seed."""
    mode = 'per_group' if stacked.q > 1 else 'per_column'
    for attempt, seed in enumerate(seeds):
        rng = np.random.default_rng(seed)
        rows = _subsample_rows(stacked, rng)
        normalized = _normalized([lib.subset(r) for lib, r in zip(stacked.libraries, rows)])
        w_hat = _pilot(normalized, config) if config.recompute_pilot else full_w_hat
        w_random = sample_randomisation(stacked.p, stacked.q, mode, rng)
        problem = library_problem(normalized, AdaptiveWeights(w_hat, w_random))
        try:
            return _path_selection(problem, lambdas, w_random[0], stacked.labels, config), False
        except NumericError as e:
            logger.warning('Subsample fit failed on attempt %d: %s', attempt + 1, e)
    logger.warning('Subsample counted as an empty selection after a failed retry')
    return np.zeros((len(lambdas), stacked.p), dtype=bool), True


def _selection_counts(stacked, lambdas, config):
    if any(lib.n < 4 for lib in stacked.libraries):
        raise DomainError('Stability selection needs at least 4 samples per experiment')
    children = np.random.SeedSequence(config.seed).spawn(2 * config.resamples)
    full_w_hat = None if config.recompute_pilot else _pilot(_normalized(stacked.libraries), config)
    outcomes = Parallel(n_jobs=config.n_jobs)(
        delayed(_subsample_selection)(stacked, lambdas, config, (children[b], children[config.resamples + b]),
                                      full_w_hat)
        for b in range(config.resamples))
    counts = np.sum([selected for selected, _ in outcomes], axis=0).T
    failures = sum(failed for _, failed in outcomes)
    return counts, failures


def selection_probabilities(problem, lambdas, config: StabilityConfig):
    """pi_hat[k, j]: fraction of subsamples selecting column k at lambdas[j]."""
    config.validate()
    counts, _ = _selection_counts(_as_stacked(problem), np.asarray(lambdas, dtype=np.float64), config)
    return counts / config.resamples


def expected_false_positives(q_hat, p, pi_thr):
    return np.asarray(q_hat, dtype=np.float64) ** 2 / ((2.0 * pi_thr - 1.0) * p)


def lambda_star_region(pi_hat, config: StabilityConfig):
    """Indices of lambdas whose false-positive bound is at most EV_max; may be empty."""
    pi_hat = np.asarray(pi_hat, dtype=np.float64)
    bound = expected_false_positives(pi_hat.sum(axis=0), pi_hat.shape[0], config.pi_thr)
    region = np.flatnonzero(bound <= config.ev_max)
    if region.size == 0:
        logger.warning('No lambda satisfies the error bound: smallest bound %.3f > EV_max %.3f',
                       float(bound.min()), config.ev_max)
    return region


def stable_set(pi_hat, region, config: StabilityConfig, labels):
    """Labels whose maximum selection probability over the region reaches pi_thr, in library order."""
    region = np.asarray(region, dtype=int)
    if region.size == 0:
        raise DomainError('The error-controlled lambda region is empty')
    best = np.asarray(pi_hat, dtype=np.float64)[:, region].max(axis=1)
    return [label for label, value in zip(labels, best) if value >= config.pi_thr]


def run_stability_selection(problem, config: Optional[StabilityConfig] = None, lambdas=None,
                            mode=None) -> StabilityReport:
    """Full procedure; an empty region falls back to the lambda with the smallest q_hat."""
    config = (config or StabilityConfig()).validate()
    stacked = _as_stacked(problem)
    mode = mode or ('grouped' if stacked.q > 1 else 'individual')
    lambdas = lambda_grid(stacked, config) if lambdas is None else np.asarray(lambdas, dtype=np.float64)
    if not np.any(lambdas > 0):
        logger.warning('Zero response for %s, nothing can be selected', [lib.experiment_id for lib in stacked.libraries])
        pi_hat = np.zeros((stacked.p, lambdas.size))
        return StabilityReport(stacked.labels, lambdas, pi_hat, list(range(lambdas.size)), [], mode=mode,
                               config=config.to_dict())
    counts, failures = _selection_counts(stacked, lambdas, config)
    pi_hat = counts / config.resamples
    region = lambda_star_region(pi_hat, config)
    fallback = region.size == 0
    if fallback:
        region = np.array([int(np.argmin(pi_hat.sum(axis=0)))])
        logger.warning('Falling back to lambda %.4g with the smallest average selection count', lambdas[region[0]])
    selected = stable_set(pi_hat, region, config, stacked.labels)
    logger.info('Stable set (%s, %d experiments): %s', mode, stacked.q, selected)
    return StabilityReport(stacked.labels, lambdas, pi_hat, region.tolist(), selected, fallback, failures, mode,
                           config.to_dict())

"""Training loop of the discovery engine.

Every epoch the network-derived library of each experiment is rebuilt, the
coefficients are refitted by ridge regression on the masked (detached)
library and the loss

    sum_i mean((u_i - u_hat_i)^2) + mean((u_hat_t,i - Theta_i (xi_i * M_i))^2)

is back-propagated through the networks. When the held-out data error stops
improving, stability selection runs on the current libraries and replaces the
masks. Training ends when two consecutive triggers return the same stable sets
or when max_epochs is reached.
"""
import logging
from dataclasses import replace

import numpy as np
import torch

from pde_discovery.approximator import as_points, input_derivatives
from pde_discovery.discovery.config import DiscoveryConfig, TriggerConfig
from pde_discovery.discovery.networks import build_networks
from pde_discovery.discovery.results import DiscoveryResult, SparsityMask, TriggerEvent, attach_metrics
from pde_discovery.exceptions import DomainError, InternalError, TrainingError
from pde_discovery.feature_library import (StackedLibrary, TermLibrary, library_labels,
                                           library_matrix, oracle_library)
from pde_discovery.sparse_solvers import ridge_fit
from pde_discovery.stability_selection import run_stability_selection

logger = logging.getLogger(__name__)


def split_indices(n, train_fraction, seed):
    """Seeded random train/test split of n samples; both parts non-empty when n >= 2."""
    rng = np.random.default_rng(seed)
    permutation = rng.permutation(n)
    n_train = min(max(int(round(train_fraction * n)), 1), max(n - 1, 1))
    return np.sort(permutation[:n_train]), np.sort(permutation[n_train:])


class _Batch:
    def __init__(self, experiment, rows):
        self.name = experiment.name
        self.rows = rows
        self.points_np = experiment.points()[rows]
        self.points = as_points(self.points_np)
        self.values = torch.as_tensor(experiment.values()[rows], dtype=torch.float64)


def refit_coefficients(lib: TermLibrary, mask, ridge_alpha):
    """Ridge on the masked-in columns; masked-out coefficients are exactly 0."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (lib.p,):
        raise InternalError('Mask of shape %s does not fit %d library columns' % (mask.shape, lib.p))
    xi = np.zeros(lib.p)
    if not mask.any():
        return xi
    xi[mask] = ridge_fit(lib.theta[:, mask], lib.dudt, ridge_alpha)
    return xi


def _network_terms(family, batches, max_poly, max_order, create_graph):
    terms = []
    for index, batch in enumerate(batches):
        derivs = input_derivatives(family.field(index), batch.points, max_order, create_graph=create_graph)
        theta = library_matrix(derivs.u, derivs, max_poly, max_order)
        terms.append((batch, derivs, theta))
    return terms


def _loss_terms(terms, masks, xi):
    total = 0.0
    breakdown = []
    for index, (batch, derivs, theta) in enumerate(terms):
        coefficients = torch.as_tensor(np.asarray(xi[index]) * np.asarray(masks[index], dtype=np.float64))
        mse = torch.mean((batch.values - derivs.u) ** 2)
        reg = torch.mean((derivs.u_t - theta @ coefficients) ** 2)
        total = total + mse + reg
        breakdown.append({'experiment': batch.name, 'mse': float(mse.detach()), 'reg': float(reg.detach())})
    return total, breakdown


def loss(family, batches, masks, xi, max_poly, max_order):
    """Total training loss and its per-experiment data and regression terms."""
    terms = _network_terms(family, batches, max_poly, max_order, create_graph=True)
    return _loss_terms(terms, masks, xi)


def _detached_libraries(terms, labels):
    return [TermLibrary(theta.detach().numpy(), derivs.u_t.detach().numpy(), labels, batch.name, batch.points_np)
            for batch, derivs, theta in terms]


def trigger_check(history, trigger: TriggerConfig, epochs_since_trigger=None):
    """True once the best value is ``patience`` entries old and ``period`` epochs have passed.

    The best entry only moves on a relative improvement larger than ``min_delta``.
    """
    if not history:
        return False
    best, best_index = history[0], 0
    for index, value in enumerate(history[1:], 1):
        if value < best - trigger.min_delta * abs(best):
            best, best_index = value, index
    stale = len(history) - 1 - best_index
    since = len(history) if epochs_since_trigger is None else epochs_since_trigger
    return stale >= trigger.patience and since >= trigger.period


def update_mask(stable_set, mode, labels, q, epoch=None):
    """Masks from stable sets: one shared set in grouped mode, one set per experiment otherwise."""
    sets = [list(stable_set)] * q if mode == 'grouped' else [list(s) for s in stable_set]
    if len(sets) != q:
        raise InternalError('Expected %d stable sets, got %d' % (q, len(sets)))
    known = set(labels)
    for selected in sets:
        if not set(selected) <= known:
            raise InternalError('Stable set has labels outside the library: %s' % sorted(set(selected) - known))
    masks = np.array([[label in set(selected) for label in labels] for selected in sets], dtype=bool)
    return SparsityMask(list(labels), masks, epoch, sets)


def select_terms(libraries, config: DiscoveryConfig, trigger_index=0):
    """Stability selection on the current libraries; returns (stable set(s), reports)."""
    seed = int(np.random.SeedSequence([config.seed, config.stability.seed, trigger_index]).generate_state(1)[0])
    stability = replace(config.stability, seed=seed)
    if config.mode == 'grouped':
        report = run_stability_selection(StackedLibrary(list(libraries)), stability, mode='grouped')
        return list(report.stable_set), [report]
    reports = [run_stability_selection(lib, stability, mode='individual') for lib in libraries]
    return [list(r.stable_set) for r in reports], reports


def _normalization(experiments):
    return [dict(experiment.normalization(), experiment=experiment.name) for experiment in experiments]


def _regression_mse(libraries, coefficients):
    return [float(np.mean((lib.dudt - lib.theta @ xi) ** 2)) for lib, xi in zip(libraries, coefficients)]


def _splits(experiments, config):
    children = np.random.SeedSequence(config.seed).spawn(len(experiments))
    return [split_indices(experiment.n, config.train_fraction, child) for experiment, child in zip(experiments,
                                                                                                   children)]


def _check_experiments(experiments):
    if not experiments:
        raise DomainError('Discovery needs at least one experiment')
    names = [experiment.name for experiment in experiments]
    if len(set(names)) != len(names):
        raise DomainError('Experiment names must be unique, got %s' % names)


def run_discovery(experiments, config: DiscoveryConfig, truth=None) -> DiscoveryResult:
    config = config.validate()
    _check_experiments(experiments)
    q = len(experiments)
    labels = library_labels(config.max_poly, config.max_order)
    family = build_networks(config.architecture, replace(config.network, seed=config.seed), experiments)
    splits = _splits(experiments, config)
    train = [_Batch(experiment, rows) for experiment, (rows, _) in zip(experiments, splits)]
    test = [_Batch(experiment, rows) for experiment, (_, rows) in zip(experiments, splits)]
    optimizer = torch.optim.Adam(family.parameters(), lr=config.lr, betas=config.betas)
    mask = SparsityMask.full(labels, q)
    history, loss_history, triggers = [], [], []
    previous_sets = None
    converged = False
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        terms = _network_terms(family, train, config.max_poly, config.max_order, create_graph=True)
        xi = [refit_coefficients(lib, mask.masks[i], config.ridge_alpha)
              for i, lib in enumerate(_detached_libraries(terms, labels))]
        total, breakdown = _loss_terms(terms, mask.masks, xi)
        if not torch.isfinite(total):
            raise TrainingError('Non-finite loss at epoch %d' % epoch, history=loss_history,
                                payload={'epoch': epoch, 'breakdown': breakdown})
        optimizer.zero_grad()
        total.backward()
        optimizer.step()
        test_mse = _data_mse(family, test)
        loss_history.append({'epoch': epoch, 'loss': float(total.detach()),
                             'mse_train': sum(b['mse'] for b in breakdown), 'reg': sum(b['reg'] for b in breakdown),
                             'mse_test': sum(test_mse)})
        history.append(sum(test_mse))
        if epoch % config.log_every == 0:
            logger.info('Epoch %d: loss %.4e, test MSE %.4e, active %s', epoch, loss_history[-1]['loss'],
                        history[-1], [int(m.sum()) for m in mask.masks])
        if trigger_check(history, config.trigger):
            terms = _network_terms(family, train, config.max_poly, config.max_order, create_graph=False)
            stable_sets, reports = select_terms(_detached_libraries(terms, labels), config, len(triggers))
            mask = update_mask(stable_sets, config.mode, labels, q, epoch)
            triggers.append(TriggerEvent(epoch, mask, reports))
            logger.info('Trigger %d at epoch %d: %s', len(triggers), epoch, mask.stable_sets)
            history = []
            if previous_sets is not None and stable_sets == previous_sets:
                converged = True
                break
            previous_sets = stable_sets
    if not converged:
        logger.warning('Stopped at max_epochs=%d without a mask fixpoint', config.max_epochs)

    train_libraries = _detached_libraries(
        _network_terms(family, train, config.max_poly, config.max_order, create_graph=False), labels)
    test_libraries = _detached_libraries(
        _network_terms(family, test, config.max_poly, config.max_order, create_graph=False), labels)
    coefficients = np.vstack([refit_coefficients(lib, mask.masks[i], config.ridge_alpha)
                              for i, lib in enumerate(train_libraries)])
    result = DiscoveryResult(
        labels=labels, experiments=[e.name for e in experiments], coefficients=coefficients, mask=mask,
        mode=config.mode, architecture=config.architecture, path='network', seed=config.seed,
        mse_train=_data_mse(family, train), mse_test=_data_mse(family, test),
        regression_mse_test=_regression_mse(test_libraries, coefficients), epochs=epoch, converged=converged,
        triggers=triggers, loss_history=loss_history, normalization=_normalization(experiments),
        config=config.to_dict())
    return attach_metrics(result, truth) if truth is not None else result


def _data_mse(family, batches):
    with torch.no_grad():
        return [float(torch.mean((batch.values - family.field(i)(batch.points)) ** 2)) for i, batch in
                enumerate(batches)]


def run_oracle_discovery(experiments, config: DiscoveryConfig, truth=None) -> DiscoveryResult:
    """Stability selection and refit on analytic or spectral libraries, without training."""
    config = config.validate()
    _check_experiments(experiments)
    labels = library_labels(config.max_poly, config.max_order)
    libraries = [oracle_library(experiment, config.max_poly, config.max_order) for experiment in experiments]
    splits = _splits(experiments, config)
    train = [lib.subset(rows) for lib, (rows, _) in zip(libraries, splits)]
    test = [lib.subset(rows) for lib, (_, rows) in zip(libraries, splits)]
    stable_sets, reports = select_terms(train, config)
    mask = update_mask(stable_sets, config.mode, labels, len(experiments), epoch=0)
    coefficients = np.vstack([refit_coefficients(lib, mask.masks[i], config.ridge_alpha)
                              for i, lib in enumerate(train)])
    result = DiscoveryResult(
        labels=labels, experiments=[e.name for e in experiments], coefficients=coefficients, mask=mask,
        mode=config.mode, architecture='none', path='oracle', seed=config.seed,
        mse_train=[None] * len(experiments), mse_test=[None] * len(experiments),
        regression_mse_test=_regression_mse(test, coefficients), epochs=0, converged=True,
        triggers=[TriggerEvent(0, mask, reports)], normalization=_normalization(experiments),
        config=config.to_dict())
    return attach_metrics(result, truth) if truth is not None else result


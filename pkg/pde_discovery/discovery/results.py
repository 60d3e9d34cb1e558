import json
import logging
import os
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd

from pde_discovery.exceptions import ValidationError
from pde_discovery.stability_selection import StabilityReport

logger = logging.getLogger(__name__)

UNITS = {'coordinates': 'physical', 'coefficients': 'physical',
         'note': 'networks normalise inputs internally; every reported quantity is in physical units'}


@dataclass
class SparsityMask:
    """Per-experiment active-label masks and where they came from."""
    labels: List[str]
    masks: np.ndarray
    epoch: Optional[int] = None
    stable_sets: List[List[str]] = field(default_factory=list)

    def __post_init__(self):
        self.masks = np.atleast_2d(np.asarray(self.masks, dtype=bool))

    @classmethod
    def full(cls, labels, q):
        return cls(list(labels), np.ones((q, len(labels)), dtype=bool))

    @property
    def q(self):
        return self.masks.shape[0]

    def active_labels(self, index):
        return [label for label, on in zip(self.labels, self.masks[index]) if on]

    def to_dict(self):
        return {'epoch': self.epoch, 'stable_sets': [list(s) for s in self.stable_sets],
                'active': [self.active_labels(i) for i in range(self.q)]}

    @classmethod
    def from_dict(cls, values, labels):
        masks = np.array([[label in set(active) for label in labels] for active in values['active']], dtype=bool)
        return cls(list(labels), masks, values.get('epoch'), [list(s) for s in values.get('stable_sets', [])])


@dataclass
class TriggerEvent:
    epoch: int
    mask: SparsityMask
    reports: List[StabilityReport]

    def to_dict(self):
        return {'epoch': self.epoch, 'mask': self.mask.to_dict(), 'reports': [r.to_dict() for r in self.reports]}

    @classmethod
    def from_dict(cls, values, labels):
        return cls(values['epoch'], SparsityMask.from_dict(values['mask'], labels),
                   [StabilityReport.from_dict(r) for r in values['reports']])


@dataclass
class DiscoveryResult:
    labels: List[str]
    experiments: List[str]
    coefficients: np.ndarray
    mask: SparsityMask
    mode: str
    architecture: str
    path: str = 'network'
    seed: int = 0
    mse_train: List[Optional[float]] = field(default_factory=list)
    mse_test: List[Optional[float]] = field(default_factory=list)
    regression_mse_test: List[float] = field(default_factory=list)
    epochs: int = 0
    converged: bool = False
    triggers: List[TriggerEvent] = field(default_factory=list)
    loss_history: List[dict] = field(default_factory=list)
    normalization: List[dict] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    metrics: Optional[dict] = None

    @property
    def mse_test_total(self):
        if not self.mse_test or any(value is None for value in self.mse_test):
            return None
        return float(sum(self.mse_test))

    def coefficient_map(self, index):
        """label -> coefficient for the masked-in labels of one experiment."""
        return {label: float(self.coefficients[index, j]) for j, label in enumerate(self.labels)
                if self.mask.masks[index, j]}

    def support(self, index):
        return frozenset(label for j, label in enumerate(self.labels) if self.coefficients[index, j] != 0)

    def to_dict(self):
        return {
            'labels': list(self.labels),
            'experiments': list(self.experiments),
            'mode': self.mode,
            'architecture': self.architecture,
            'path': self.path,
            'seed': self.seed,
            'coefficients': [self.coefficient_map(i) for i in range(len(self.experiments))],
            'mask': self.mask.to_dict(),
            'mse_train': self.mse_train,
            'mse_test': self.mse_test,
            'mse_test_total': self.mse_test_total,
            'regression_mse_test': self.regression_mse_test,
            'epochs': self.epochs,
            'converged': self.converged,
            'triggers': [t.to_dict() for t in self.triggers],
            'normalization': self.normalization,
            'units': UNITS,
            'config': self.config,
            'metrics': self.metrics,
        }

    @classmethod
    def from_dict(cls, values):
        labels = list(values['labels'])
        coefficients = np.zeros((len(values['experiments']), len(labels)))
        for i, mapping in enumerate(values['coefficients']):
            for label, value in mapping.items():
                coefficients[i, labels.index(label)] = value
        return cls(labels=labels, experiments=list(values['experiments']), coefficients=coefficients,
                   mask=SparsityMask.from_dict(values['mask'], labels), mode=values['mode'],
                   architecture=values['architecture'], path=values.get('path', 'network'),
                   seed=values.get('seed', 0), mse_train=list(values.get('mse_train', [])),
                   mse_test=list(values.get('mse_test', [])),
                   regression_mse_test=list(values.get('regression_mse_test', [])), epochs=values.get('epochs', 0),
                   converged=values.get('converged', False),
                   triggers=[TriggerEvent.from_dict(t, labels) for t in values.get('triggers', [])],
                   normalization=list(values.get('normalization', [])), config=dict(values.get('config') or {}),
                   metrics=values.get('metrics'))


def metrics(result: DiscoveryResult, truth):
    """(success, relative Frobenius coefficient error, summed held-out MSE) against a ground truth."""
    expected = truth.coefficient_matrix(result.labels)
    success = all(result.support(i) == frozenset(label for label, value in truth.coefficients[i].items() if value)
                  for i in range(len(result.experiments)))
    coeff_error = float(np.linalg.norm(expected - result.coefficients) / np.linalg.norm(expected))
    return success, coeff_error, result.mse_test_total


def attach_metrics(result: DiscoveryResult, truth):
    success, coeff_error, mse_test = metrics(result, truth)
    result.metrics = {'success': success, 'coeff_error': coeff_error, 'mse_test': mse_test,
                      'truth': truth.to_dict()}
    return result


def result_paths(directory, seed):
    stem = os.path.join(directory, 'seed_%d' % seed)
    return stem + '.json', stem + '_loss.csv'


def write_result(result: DiscoveryResult, directory):
    os.makedirs(directory, exist_ok=True)
    json_path, csv_path = result_paths(directory, result.seed)
    with open(json_path, 'w') as f:
        json.dump(result.to_dict(), f, indent=2)
    if result.loss_history:
        pd.DataFrame(result.loss_history).to_csv(csv_path, index=False, float_format='%.17g')
    logger.info('Wrote result %s', json_path)
    return json_path


def read_result(path):
    try:
        with open(path) as f:
            return DiscoveryResult.from_dict(json.load(f))
    except (ValueError, KeyError, TypeError) as e:
        raise ValidationError('Corrupt result file: %s' % e, path=path)

import logging
import os
import unittest
from unittest import mock

import numpy as np

from pde_discovery.exceptions import ConfigurationError, DomainError, NumericError
from pde_discovery.feature_library import StackedLibrary, TermLibrary
from pde_discovery.stability_selection import (StabilityConfig, StabilityReport, expected_false_positives,
                                               lambda_grid, lambda_star_region, run_stability_selection,
                                               selection_probabilities, stable_set)

logging.basicConfig()

LABELS = ['a', 'b', 'c', 'd', 'e', 'f']
SLOW = os.environ.get('PDE_DISCOVERY_SLOW_TESTS') == '1'


def sparse_library(seed, coefficients=(2.0, 0.0, 0.0, -1.0, 0.0, 0.0), n=200, noise=1e-3, name='exp',
                   points=None):
    rng = np.random.default_rng(seed)
    theta = rng.normal(size=(n, len(coefficients)))
    y = theta @ np.asarray(coefficients) + noise * rng.normal(size=n)
    return TermLibrary(theta, y, LABELS[:len(coefficients)], name, points)


class RegionTest(unittest.TestCase):

    def setUp(self):
        self.config = StabilityConfig(pi_thr=0.9, ev_max=1.0)

    def test_expected_false_positives(self):
        np.testing.assert_allclose(expected_false_positives([2.0, 4.0], 10, 0.9), [0.5, 2.0])

    def test_region_and_stable_set(self):
        pi_hat = np.array([[1.0, 1.0, 1.0],
                           [0.0, 0.95, 1.0],
                           [0.0, 0.0, 1.0],
                           [0.0, 0.0, 0.8]])
        # q_hat = [1, 1.95, 3.8] gives bounds [0.31, 1.19, 4.51]
        region = lambda_star_region(pi_hat, self.config)
        np.testing.assert_array_equal(region, [0])
        self.assertEqual(['a'], stable_set(pi_hat, region, self.config, LABELS[:4]))
        relaxed = StabilityConfig(pi_thr=0.9, ev_max=2.0)
        region = lambda_star_region(pi_hat, relaxed)
        np.testing.assert_array_equal(region, [0, 1])
        self.assertEqual(['a', 'b'], stable_set(pi_hat, region, relaxed, LABELS[:4]))

    def test_empty_region(self):
        pi_hat = np.ones((4, 3))
        region = lambda_star_region(pi_hat, self.config)
        self.assertEqual(0, region.size)
        with self.assertRaises(DomainError):
            stable_set(pi_hat, region, self.config, LABELS[:4])

    def test_config_validation(self):
        with self.assertRaises(ConfigurationError):
            StabilityConfig(pi_thr=0.5).validate()
        with self.assertRaises(ConfigurationError):
            StabilityConfig(resamples=1).validate()
        with self.assertRaises(ConfigurationError):
            StabilityConfig(epsilon=0.0).validate()
        config = StabilityConfig(resamples=10)
        self.assertEqual(config, StabilityConfig.from_dict(config.to_dict()))


class StabilitySelectionTest(unittest.TestCase):

    def setUp(self):
        self.config = StabilityConfig(resamples=20, m=20, seed=3, n_jobs=1)

    def test_individual_recovers_support(self):
        report = run_stability_selection(sparse_library(0), self.config)
        self.assertEqual(['a', 'd'], report.stable_set)
        self.assertEqual('individual', report.mode)
        self.assertEqual((6, 20), report.pi_hat.shape)
        self.assertTrue(np.all((report.pi_hat >= 0) & (report.pi_hat <= 1)))
        self.assertFalse(report.fallback)

    def test_grouped_recovers_shared_support(self):
        first = sparse_library(1, (1.0, 0.0, 0.0, -0.5, 0.0, 0.0), name='one')
        second = sparse_library(2, (3.0, 0.0, 0.0, -2.0, 0.0, 0.0), name='two')
        report = run_stability_selection(StackedLibrary([first, second]), self.config)
        self.assertEqual('grouped', report.mode)
        self.assertEqual(['a', 'd'], report.stable_set)

    def test_shared_points_use_common_rows(self):
        points = np.column_stack([np.arange(200.0), np.zeros(200)])
        first = sparse_library(1, name='one', points=points)
        second = sparse_library(2, name='two', points=points)
        report = run_stability_selection(StackedLibrary([first, second]), self.config)
        self.assertEqual(['a', 'd'], report.stable_set)

    def test_reproducible(self):
        lib = sparse_library(4)
        lambdas = lambda_grid(lib, self.config)
        first = selection_probabilities(lib, lambdas, self.config)
        second = selection_probabilities(lib, lambdas, self.config)
        np.testing.assert_array_equal(first, second)
        self.assertEqual(20, lambdas.size)
        self.assertAlmostEqual(lambdas[-1], self.config.epsilon * lambdas[0])

    def test_fixed_pilot(self):
        config = StabilityConfig(resamples=10, m=10, seed=1, n_jobs=1, recompute_pilot=False)
        self.assertEqual(['a', 'd'], run_stability_selection(sparse_library(5), config).stable_set)

    def test_zero_response(self):
        lib = TermLibrary(np.random.default_rng(0).normal(size=(50, 6)), np.zeros(50), LABELS)
        report = run_stability_selection(lib, self.config)
        self.assertEqual([], report.stable_set)
        self.assertFalse(np.any(report.pi_hat))

    def test_too_few_samples(self):
        with self.assertRaises(DomainError):
            run_stability_selection(sparse_library(0, n=3), self.config)

    def test_failed_subsamples_count_as_empty(self):
        with mock.patch('pde_discovery.stability_selection.solve_penalised', side_effect=NumericError('no fit')):
            report = run_stability_selection(sparse_library(0), StabilityConfig(resamples=4, m=5, n_jobs=1))
        self.assertEqual(4, report.failed_subsamples)
        self.assertEqual([], report.stable_set)
        self.assertFalse(np.any(report.pi_hat))

    def test_report_serialization(self):
        report = run_stability_selection(sparse_library(0), StabilityConfig(resamples=6, m=8, n_jobs=1))
        values = report.to_dict()
        self.assertIn('q_hat', values)
        self.assertIn('lambda_star_region', values)
        loaded = StabilityReport.from_dict(values)
        np.testing.assert_array_equal(report.pi_hat, loaded.pi_hat)
        self.assertEqual(report.stable_set, loaded.stable_set)
        self.assertEqual(report.region, loaded.region)
        self.assertEqual(set(LABELS), set(report.max_probability()))

    def test_no_selection_above_lambda_max(self):
        lib = sparse_library(6)
        lambdas = lambda_grid(lib, self.config)[0] * np.array([10.0, 100.0])
        pi_hat = selection_probabilities(lib, lambdas, self.config)
        np.testing.assert_array_equal(pi_hat, np.zeros((6, 2)))

    def test_probabilities_are_multiples_of_resamples(self):
        report = run_stability_selection(sparse_library(7), self.config)
        counts = report.pi_hat * self.config.resamples
        np.testing.assert_allclose(counts, np.round(counts), atol=1e-12)
        np.testing.assert_array_equal(report.q_hat, report.pi_hat.sum(axis=0))

    def test_higher_threshold_shrinks_stable_set(self):
        report = run_stability_selection(sparse_library(8, noise=0.5), self.config)
        previous = None
        for pi_thr in (0.55, 0.7, 0.8, 0.9, 0.95, 1.0):
            selected = set(stable_set(report.pi_hat, report.region, StabilityConfig(pi_thr=pi_thr), LABELS))
            if previous is not None:
                self.assertLessEqual(selected, previous)
            previous = selected

    def test_pure_signal_selects_one_label(self):
        rng = np.random.default_rng(9)
        basis, _ = np.linalg.qr(rng.normal(size=(200, 6)))
        theta = np.sqrt(200) * basis
        lib = TermLibrary(theta, 3.0 * theta[:, 0], LABELS)
        config = StabilityConfig(resamples=20, m=20, epsilon=1e-6, seed=3, n_jobs=1)
        report = run_stability_selection(lib, config)
        self.assertEqual(['a'], report.stable_set)
        self.assertEqual(1.0, report.max_probability()['a'])
        self.assertFalse(np.any(report.pi_hat[1:]))

    def test_grouped_matches_individual_for_one_experiment(self):
        lib = sparse_library(10, noise=0.1)
        grouped = run_stability_selection(StackedLibrary([lib]), self.config, mode='grouped')
        individual = run_stability_selection(lib, self.config, mode='individual')
        self.assertEqual('grouped', grouped.mode)
        np.testing.assert_array_equal(grouped.lambdas, individual.lambdas)
        np.testing.assert_array_equal(grouped.pi_hat, individual.pi_hat)
        self.assertEqual(individual.stable_set, grouped.stable_set)

    @unittest.skipUnless(SLOW, 'set PDE_DISCOVERY_SLOW_TESTS=1 to run')
    def test_false_positive_control(self):
        false_positives = []
        config = StabilityConfig(n_jobs=1)
        for seed in range(200):
            rng = np.random.default_rng(seed)
            theta = rng.normal(size=(200, 20))
            coefficients = np.zeros(20)
            coefficients[rng.choice(20, 3, replace=False)] = rng.uniform(0.5, 2.0, 3) * rng.choice([-1, 1], 3)
            y = theta @ coefficients + 0.5 * rng.normal(size=200)
            labels = ['t%d' % j for j in range(20)]
            report = run_stability_selection(TermLibrary(theta, y, labels), config)
            truth = {labels[j] for j in np.flatnonzero(coefficients)}
            false_positives.append(len(set(report.stable_set) - truth))
        self.assertLessEqual(np.mean(false_positives), config.ev_max)


if __name__ == '__main__':
    unittest.main()

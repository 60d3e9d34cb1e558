import json
import logging
import os
import shutil
import tempfile
import time
import unittest

import numpy as np
import torch

from pde_discovery.approximator import NetworkConfig, parameter_count
from pde_discovery.discovery.config import DiscoveryConfig, TriggerConfig
from pde_discovery.discovery.engine import (_Batch, loss, refit_coefficients, run_discovery, run_oracle_discovery,
                                            split_indices, trigger_check, update_mask)
from pde_discovery.discovery.networks import (SeparateNetworks, SharedTrunkNetworks, build_networks,
                                              separate_parameter_count, shared_trunk_parameter_count,
                                              shared_trunk_width)
from pde_discovery.discovery.results import (DiscoveryResult, SparsityMask, metrics, read_result, result_paths,
                                             write_result)
from pde_discovery.exceptions import ConfigurationError, InternalError, ValidationError
from pde_discovery.feature_library import TermLibrary, library_labels, oracle_library
from pde_discovery.stability_selection import StabilityConfig
from pde_discovery.synthetic.experiment import ground_truth
from pde_discovery.synthetic.generators import add_noise, burgers_delta, kdv_solitons, subsample

logging.basicConfig()

SLOW = os.environ.get('PDE_DISCOVERY_SLOW_TESTS') == '1'
U_XX = 'u_xx'
ADVECTION = 'u·u_x'


def burgers_case(noise=0.0, nx=50, nt=40):
    x = np.linspace(-3.0, 4.0, nx)
    t = np.linspace(0.2, 2.0, nt)
    return [add_noise(burgers_delta(nu, x, t, name='burgers_nu%s' % nu), noise, seed)
            for seed, nu in enumerate((0.1, 0.2, 0.4), 1)]


def small_config(**changes):
    config = DiscoveryConfig(network=NetworkConfig(depth=3, width=8), max_poly=1, max_order=2, max_epochs=3,
                             trigger=TriggerConfig(patience=10, period=0), log_every=1,
                             stability=StabilityConfig(resamples=4, m=5, n_jobs=1))
    return config.replace(**changes)


class NetworkFamilyTest(unittest.TestCase):

    def setUp(self):
        self.experiments = burgers_case(nx=10, nt=6)

    def test_separate_parameter_count(self):
        config = NetworkConfig()
        self.assertEqual(3 * 8841, separate_parameter_count(config, 3))
        self.assertEqual(3 * 8841, SeparateNetworks(config, 3).parameter_count())

    def test_shared_trunk_width_balances_parameters(self):
        config = NetworkConfig()
        width = shared_trunk_width(config, 3)
        target = separate_parameter_count(config, 3)
        count = shared_trunk_parameter_count(4, width, 3)
        self.assertLessEqual(abs(count - target), abs(shared_trunk_parameter_count(4, width + 1, 3) - target))
        self.assertLessEqual(abs(count - target), abs(shared_trunk_parameter_count(4, width - 1, 3) - target))
        self.assertLess(abs(count - target), 0.05 * target)
        family = SharedTrunkNetworks(config, 3)
        self.assertEqual(count, family.parameter_count())

    def test_shared_trunk_needs_depth(self):
        with self.assertRaises(ConfigurationError):
            SharedTrunkNetworks(NetworkConfig(depth=2), 2)
        with self.assertRaises(ConfigurationError):
            small_config(architecture='shared_trunk', network=NetworkConfig(depth=2)).validate()

    def test_families_give_per_experiment_fields(self):
        points = torch.as_tensor(self.experiments[0].points())
        for architecture in ('separate', 'shared_trunk'):
            family = build_networks(architecture, NetworkConfig(depth=3, width=8, seed=1), self.experiments)
            outputs = [family.field(i)(points) for i in range(3)]
            self.assertEqual((60,), tuple(outputs[0].shape))
            self.assertFalse(torch.equal(outputs[0], outputs[1]))
        with self.assertRaises(ConfigurationError):
            build_networks('pyramid', NetworkConfig(), self.experiments)

    def test_separate_networks_are_seeded(self):
        points = torch.as_tensor(self.experiments[0].points())
        first = SeparateNetworks(NetworkConfig(depth=3, width=8, seed=5), 2)
        second = SeparateNetworks(NetworkConfig(depth=3, width=8, seed=5), 2)
        with torch.no_grad():
            self.assertTrue(torch.equal(first.field(1)(points), second.field(1)(points)))

    def test_parameter_count_helper(self):
        self.assertEqual(2 * 8 + 8 + 8 * 8 + 8 + 8 + 1, parameter_count(3, 8))


class EngineTest(unittest.TestCase):

    def test_split_indices(self):
        train, test = split_indices(100, 0.8, 3)
        self.assertEqual(80, train.size)
        self.assertEqual(20, test.size)
        self.assertEqual(set(range(100)), set(train) | set(test))
        np.testing.assert_array_equal(train, split_indices(100, 0.8, 3)[0])
        train, test = split_indices(2, 0.99, 0)
        self.assertEqual((1, 1), (train.size, test.size))

    def test_trigger_check(self):
        trigger = TriggerConfig(patience=3, period=0, min_delta=0.0)
        self.assertFalse(trigger_check([], trigger))
        self.assertFalse(trigger_check([1.0] * 3, trigger))
        self.assertTrue(trigger_check([1.0] * 4, trigger))
        self.assertFalse(trigger_check([4.0, 3.0, 2.0, 1.0, 0.5], trigger))
        self.assertTrue(trigger_check([4.0, 1.0, 2.0, 2.0, 2.0], trigger))
        waiting = TriggerConfig(patience=3, period=10, min_delta=0.0)
        self.assertFalse(trigger_check([1.0] * 6, waiting))
        self.assertTrue(trigger_check([1.0] * 6, waiting, epochs_since_trigger=10))
        relative = TriggerConfig(patience=2, period=0, min_delta=0.1)
        self.assertTrue(trigger_check([1.0, 0.95, 0.92], relative))

    def test_update_mask(self):
        labels = ['1', 'u', 'u_x']
        grouped = update_mask(['u', 'u_x'], 'grouped', labels, 2, epoch=7)
        np.testing.assert_array_equal(grouped.masks, [[False, True, True], [False, True, True]])
        self.assertEqual(7, grouped.epoch)
        individual = update_mask([['u'], ['1', 'u_x']], 'individual', labels, 2)
        np.testing.assert_array_equal(individual.masks, [[False, True, False], [True, False, True]])
        self.assertEqual(['1', 'u_x'], individual.active_labels(1))
        with self.assertRaises(InternalError):
            update_mask([['u']], 'individual', labels, 2)
        with self.assertRaises(InternalError):
            update_mask(['u_xxx'], 'grouped', labels, 2)

    def test_refit_coefficients(self):
        rng = np.random.default_rng(0)
        theta = rng.normal(size=(100, 4))
        lib = TermLibrary(theta, theta @ np.array([0.0, 1.5, 0.0, -0.5]), ['a', 'b', 'c', 'd'])
        xi = refit_coefficients(lib, [False, True, False, True], 1e-10)
        self.assertEqual(0.0, xi[0])
        self.assertEqual(0.0, xi[2])
        np.testing.assert_allclose(xi[[1, 3]], [1.5, -0.5], rtol=1e-6)
        np.testing.assert_array_equal(refit_coefficients(lib, [False] * 4, 1e-5), np.zeros(4))
        with self.assertRaises(InternalError):
            refit_coefficients(lib, [True, False], 1e-5)

    def test_loss_terms(self):
        experiments = burgers_case(nx=10, nt=6)
        config = small_config()
        family = build_networks('separate', config.network, experiments)
        batches = [_Batch(e, np.arange(e.n)) for e in experiments]
        labels = library_labels(1, 2)
        mask = SparsityMask.full(labels, 3)
        total, breakdown = loss(family, batches, mask.masks, [np.zeros(6)] * 3, 1, 2)
        self.assertEqual(3, len(breakdown))
        expected = sum(b['mse'] + b['reg'] for b in breakdown)
        self.assertAlmostEqual(expected, float(total.detach()), places=10)
        self.assertTrue(total.requires_grad)

    def test_short_training_run(self):
        experiments = burgers_case(noise=0.1, nx=12, nt=8)
        for architecture in ('separate', 'shared_trunk'):
            result = run_discovery(experiments, small_config(architecture=architecture))
            self.assertEqual(3, result.epochs)
            self.assertEqual(3, len(result.loss_history))
            self.assertEqual((3, 6), result.coefficients.shape)
            self.assertEqual(3, len(result.mse_test))
            self.assertFalse(result.converged)
            self.assertEqual([], result.triggers)
            self.assertTrue(np.all(np.isfinite(result.coefficients)))

    def test_triggers_run_stability_selection(self):
        experiments = burgers_case(noise=0.1, nx=12, nt=8)
        config = small_config(max_epochs=4, trigger=TriggerConfig(patience=1, period=0, min_delta=1.0),
                              mode='individual')
        result = run_discovery(experiments, config, truth=ground_truth(experiments))
        self.assertEqual(2, len(result.triggers))
        self.assertEqual([2, 4], [event.epoch for event in result.triggers])
        self.assertEqual(3, len(result.triggers[0].reports))
        self.assertIn('success', result.metrics)
        for i in range(3):
            inactive = ~result.mask.masks[i]
            np.testing.assert_array_equal(result.coefficients[i, inactive], 0.0)


class OracleDiscoveryTest(unittest.TestCase):

    def setUp(self):
        self.config = DiscoveryConfig(max_poly=2, max_order=3, stability=StabilityConfig(resamples=20, m=20,
                                                                                         n_jobs=1))

    def test_grouped_burgers(self):
        experiments = burgers_case()
        result = run_oracle_discovery(experiments, self.config, ground_truth(experiments))
        self.assertEqual({U_XX, ADVECTION}, set(result.triggers[0].reports[0].stable_set))
        self.assertTrue(result.metrics['success'])
        for i, nu in enumerate((0.1, 0.2, 0.4)):
            coefficients = result.coefficient_map(i)
            self.assertAlmostEqual(nu, coefficients[U_XX], delta=0.05 * nu)
            self.assertAlmostEqual(-1.0, coefficients[ADVECTION], delta=0.05)
        self.assertEqual('oracle', result.path)
        self.assertIsNone(result.mse_test_total)

    def test_grouped_burgers_default_library(self):
        experiments = burgers_case()
        start = time.perf_counter()
        result = run_oracle_discovery(experiments, DiscoveryConfig(), ground_truth(experiments))
        elapsed = time.perf_counter() - start
        self.assertEqual(36, len(result.labels))
        self.assertEqual({U_XX, ADVECTION}, set(result.triggers[0].reports[0].stable_set))
        for i, nu in enumerate((0.1, 0.2, 0.4)):
            coefficients = result.coefficient_map(i)
            self.assertEqual({U_XX, ADVECTION}, set(coefficients))
            self.assertAlmostEqual(nu, coefficients[U_XX], delta=0.05 * nu)
            self.assertAlmostEqual(-1.0, coefficients[ADVECTION], delta=0.05)
        self.assertLess(elapsed, 30.0)

    def test_refit_on_true_support(self):
        for experiment in burgers_case():
            lib = oracle_library(experiment, max_poly=2, max_order=3)
            mask = [label in (U_XX, ADVECTION) for label in lib.labels]
            xi = refit_coefficients(lib, mask, 1e-5)
            self.assertAlmostEqual(experiment.params['nu'], xi[lib.labels.index(U_XX)],
                                   delta=0.02 * experiment.params['nu'])
            self.assertAlmostEqual(-1.0, xi[lib.labels.index(ADVECTION)], delta=0.02)

    def test_grouped_kdv_default_library(self):
        experiments = [kdv_solitons('single', name='single'), kdv_solitons('double', name='double')]
        experiments = [subsample(e, 1000, 'random', seed=i) for i, e in enumerate(experiments)]
        start = time.perf_counter()
        result = run_oracle_discovery(experiments, DiscoveryConfig(), ground_truth(experiments))
        elapsed = time.perf_counter() - start
        self.assertEqual({ADVECTION, 'u_xxx'}, set(result.triggers[0].reports[0].stable_set))
        self.assertTrue(result.metrics['success'])
        self.assertLess(elapsed, 30.0)

    def test_individual_mode_reports_per_experiment(self):
        result = run_oracle_discovery(burgers_case(), self.config.replace(mode='individual'))
        self.assertEqual(3, len(result.triggers[0].reports))
        self.assertIsNone(result.metrics)


class ResultsTest(unittest.TestCase):

    def setUp(self):
        self.directory = tempfile.mkdtemp()
        experiments = burgers_case(nx=20, nt=10)
        config = DiscoveryConfig(max_poly=1, max_order=2, stability=StabilityConfig(resamples=6, m=6, n_jobs=1),
                                 seed=4)
        self.result = run_oracle_discovery(experiments, config, ground_truth(experiments))

    def tearDown(self):
        shutil.rmtree(self.directory)

    def test_write_and_read(self):
        path = write_result(self.result, self.directory)
        self.assertEqual(result_paths(self.directory, 4)[0], path)
        loaded = read_result(path)
        np.testing.assert_array_equal(self.result.coefficients, loaded.coefficients)
        np.testing.assert_array_equal(self.result.mask.masks, loaded.mask.masks)
        self.assertEqual(self.result.metrics['success'], loaded.metrics['success'])
        self.assertEqual(len(self.result.triggers), len(loaded.triggers))
        with open(path) as f:
            values = json.load(f)
        self.assertEqual('physical', values['units']['coefficients'])

    def test_corrupt_result(self):
        path = os.path.join(self.directory, 'seed_0.json')
        with open(path, 'w') as f:
            f.write('{"labels": ')
        with self.assertRaises(ValidationError):
            read_result(path)

    def test_metrics(self):
        truth = ground_truth(burgers_case(nx=20, nt=10))
        labels = self.result.labels
        exact = DiscoveryResult(labels, self.result.experiments, truth.coefficient_matrix(labels),
                                self.result.mask, 'grouped', 'none')
        success, error, mse = metrics(exact, truth)
        self.assertTrue(success)
        self.assertEqual(0.0, error)
        self.assertIsNone(mse)
        wrong = truth.coefficient_matrix(labels)
        wrong[:, labels.index('u')] = 0.1
        self.assertFalse(metrics(DiscoveryResult(labels, self.result.experiments, wrong, self.result.mask,
                                                 'grouped', 'none'), truth)[0])

    @unittest.skipUnless(SLOW, 'set PDE_DISCOVERY_SLOW_TESTS=1 to run')
    def test_full_pipeline_burgers(self):
        experiments = burgers_case(noise=0.1)
        successes = 0
        for seed in range(5):
            result = run_discovery(experiments, DiscoveryConfig(seed=seed), ground_truth(experiments))
            successes += result.metrics['success']
        self.assertGreaterEqual(successes, 4)

    @unittest.skipUnless(SLOW, 'set PDE_DISCOVERY_SLOW_TESTS=1 to run')
    def test_individual_mode_misses_advection_at_high_viscosity(self):
        experiments = burgers_case(noise=0.1)
        misses = 0
        for seed in range(5):
            result = run_discovery(experiments, DiscoveryConfig(seed=seed, mode='individual'))
            misses += ADVECTION not in result.support(2)
        self.assertGreaterEqual(misses, 2)


if __name__ == '__main__':
    unittest.main()

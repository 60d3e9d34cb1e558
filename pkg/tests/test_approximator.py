import logging
import unittest

import numpy as np
import torch

from pde_discovery.approximator import (InputNormalization, NetworkConfig, SineNetwork, adam_step, as_points,
                                        forward, init_network, input_derivatives, parameter_count)
from pde_discovery.exceptions import ConfigurationError, InternalError, NumericError

logging.basicConfig()


def wave(points):
    x, t = points[:, 0], points[:, 1]
    return torch.sin(2.0 * x) * torch.exp(-t)


class ApproximatorTest(unittest.TestCase):

    def setUp(self):
        rng = np.random.default_rng(3)
        self.points = np.column_stack([rng.uniform(-1.0, 1.0, 25), rng.uniform(0.0, 1.0, 25)])

    def test_parameter_count(self):
        self.assertEqual(8841, parameter_count(4, 65))
        self.assertEqual(8841, init_network(NetworkConfig()).parameter_count())

    def test_invalid_config(self):
        with self.assertRaises(ConfigurationError):
            NetworkConfig(depth=1).validate()
        with self.assertRaises(ConfigurationError):
            NetworkConfig(omega0=0.0).validate()

    def test_seeded_init_is_reproducible(self):
        config = NetworkConfig(depth=3, width=16, seed=7)
        first = forward(SineNetwork(config), self.points)
        second = forward(SineNetwork(config), self.points)
        np.testing.assert_array_equal(first, second)
        other = forward(SineNetwork(NetworkConfig(depth=3, width=16, seed=8)), self.points)
        self.assertFalse(np.array_equal(first, other))

    def test_derivatives_of_closed_form_field(self):
        bundle = input_derivatives(wave, self.points, max_order=5).numpy()
        x, t = self.points[:, 0], self.points[:, 1]
        decay = np.exp(-t)
        np.testing.assert_allclose(bundle.u, np.sin(2 * x) * decay, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(bundle.u_t, -np.sin(2 * x) * decay, rtol=1e-12, atol=1e-14)
        expected = [2 * np.cos(2 * x), -4 * np.sin(2 * x), -8 * np.cos(2 * x), 16 * np.sin(2 * x),
                    32 * np.cos(2 * x)]
        for order, values in enumerate(expected, 1):
            np.testing.assert_allclose(bundle.spatial(order), values * decay, rtol=1e-10, atol=1e-10)
        np.testing.assert_array_equal(bundle.spatial(0), np.ones(len(x)))

    def test_network_derivatives_match_finite_differences(self):
        network = SineNetwork(NetworkConfig(depth=3, width=12, omega0=1.0, seed=2))
        network.set_normalization([-1.0, 0.0], [1.0, 1.0])
        bundle = input_derivatives(network, self.points, max_order=2).numpy()
        step = 1e-5
        shifted = self.points.copy()
        shifted[:, 0] += step
        back = self.points.copy()
        back[:, 0] -= step
        u_x = (forward(network, shifted) - forward(network, back)) / (2 * step)
        np.testing.assert_allclose(bundle.u_x[0], u_x, rtol=1e-5, atol=1e-7)
        shifted = self.points.copy()
        shifted[:, 1] += step
        back = self.points.copy()
        back[:, 1] -= step
        u_t = (forward(network, shifted) - forward(network, back)) / (2 * step)
        np.testing.assert_allclose(bundle.u_t, u_t, rtol=1e-5, atol=1e-7)

    def test_derivatives_keep_graph(self):
        network = SineNetwork(NetworkConfig(depth=3, width=8))
        bundle = input_derivatives(network, self.points, max_order=2, create_graph=True)
        loss = torch.mean(bundle.u_x[1] ** 2)
        gradients = torch.autograd.grad(loss, list(network.parameters()), allow_unused=True)
        self.assertTrue(any(g is not None and torch.any(g != 0) for g in gradients))

    def test_max_order_bounds(self):
        with self.assertRaises(ConfigurationError):
            input_derivatives(wave, self.points, max_order=6)
        with self.assertRaises(ConfigurationError):
            input_derivatives(wave, self.points, max_order=0)

    def test_bad_points(self):
        with self.assertRaises(InternalError):
            as_points(np.zeros((4, 3)))
        with self.assertRaises(NumericError):
            as_points(np.array([[0.0, np.nan]]))

    def test_input_normalization(self):
        normalization = InputNormalization()
        normalization.set_bounds([-3.0, 0.2], [4.0, 2.0])
        mapped = normalization(torch.tensor([[-3.0, 0.2], [4.0, 2.0], [0.5, 1.1]]))
        np.testing.assert_allclose(mapped.numpy(), [[-1.0, -1.0], [1.0, 1.0], [0.0, 0.0]], atol=1e-12)

    def test_adam_step(self):
        param = torch.tensor([1.0, -2.0], requires_grad=True)
        state = None
        for _ in range(3):
            state = adam_step([param], [2 * param.detach()], state, lr=0.1)[1]
        self.assertTrue(torch.all(torch.abs(param.detach()) < torch.tensor([1.0, 2.0])))
        self.assertIn('state', state)

    def test_adam_constant_gradient_steps(self):
        # with a constant gradient the bias-corrected moments are g and g^2
        param = torch.tensor([1.0, -2.0], requires_grad=True)
        gradient = torch.tensor([0.5, -3.0])
        state = None
        for _ in range(3):
            state = adam_step([param], [gradient], state, lr=0.1)[1]
        expected = [1.0 - 3 * 0.1 * 0.5 / (0.5 + 1e-8), -2.0 + 3 * 0.1 * 3.0 / (3.0 + 1e-8)]
        np.testing.assert_allclose(param.detach().numpy(), expected, rtol=1e-12)

    def test_adam_matches_hand_recursion(self):
        lr, (beta1, beta2), eps = 0.1, (0.9, 0.999), 1e-8
        param = torch.tensor([1.0, -2.0], requires_grad=True)
        expected = param.detach().numpy().copy()
        m = np.zeros(2)
        v = np.zeros(2)
        state = None
        for step in range(1, 4):
            gradient = 2 * expected
            m = beta1 * m + (1 - beta1) * gradient
            v = beta2 * v + (1 - beta2) * gradient ** 2
            m_hat = m / (1 - beta1 ** step)
            v_hat = v / (1 - beta2 ** step)
            expected = expected - lr * m_hat / (np.sqrt(v_hat) + eps)
            state = adam_step([param], [2 * param.detach().clone()], state, lr=lr, betas=(beta1, beta2))[1]
            np.testing.assert_allclose(param.detach().numpy(), expected, rtol=1e-12)

    def test_adam_zero_gradient_keeps_parameters(self):
        network = SineNetwork(NetworkConfig(depth=2, width=4, seed=1))
        params = list(network.parameters())
        before = [p.detach().clone() for p in params]
        adam_step(params, [torch.zeros_like(p) for p in params])
        for old, new in zip(before, params):
            self.assertTrue(torch.equal(old, new.detach()))

    def test_adam_step_shape_checks(self):
        param = torch.zeros(2, requires_grad=True)
        with self.assertRaises(InternalError):
            adam_step([param], [])
        with self.assertRaises(InternalError):
            adam_step([param], [torch.zeros(3)])


def lower_order(bundle, order):
    return bundle.u if order == 0 else bundle.u_x[order - 1]


def relative_error(approximate, exact):
    return np.linalg.norm(approximate - exact) / np.linalg.norm(exact)


def random_network(rng):
    config = NetworkConfig(depth=int(rng.integers(2, 4)), width=int(rng.integers(2, 9)),
                           seed=int(rng.integers(2 ** 31)))
    return SineNetwork(config).set_normalization([-1.0, 0.0], [1.0, 1.0])


class DerivativeOracleTest(unittest.TestCase):
    """Autograd input derivatives against central differences of the next lower order."""

    STEP = 2e-5

    def shifted(self, points, column, sign):
        moved = points.copy()
        moved[:, column] += sign * self.STEP
        return moved

    def test_random_networks_match_finite_differences(self):
        rng = np.random.default_rng(11)
        for index in range(50):
            network = random_network(rng)
            points = np.column_stack([rng.uniform(-0.9, 0.9, 16), rng.uniform(0.05, 0.95, 16)])
            bundle = input_derivatives(network, points, max_order=5).numpy()
            ahead = input_derivatives(network, self.shifted(points, 0, 1), max_order=4).numpy()
            behind = input_derivatives(network, self.shifted(points, 0, -1), max_order=4).numpy()
            for order in range(1, 6):
                estimate = (lower_order(ahead, order - 1) - lower_order(behind, order - 1)) / (2 * self.STEP)
                tolerance = 1e-5 if order <= 3 else 1e-2
                error = relative_error(estimate, bundle.spatial(order))
                self.assertLess(error, tolerance, 'network %d, order %d' % (index, order))
            u_t = (forward(network, self.shifted(points, 1, 1)) - forward(network, self.shifted(points, 1, -1))) \
                / (2 * self.STEP)
            self.assertLess(relative_error(u_t, bundle.u_t), 1e-5, 'network %d, time derivative' % index)

    def test_zero_weights_give_zero_derivatives(self):
        network = SineNetwork(NetworkConfig(depth=3, width=8, seed=4))
        with torch.no_grad():
            for name, param in network.named_parameters():
                if name.endswith('weight'):
                    param.zero_()
        points = np.column_stack([np.linspace(-1.0, 1.0, 10), np.linspace(0.0, 1.0, 10)])
        bundle = input_derivatives(network, points, max_order=5).numpy()
        np.testing.assert_array_equal(bundle.u, np.full(10, network.head.bias.item()))
        np.testing.assert_array_equal(bundle.u_t, np.zeros(10))
        for order in range(1, 6):
            np.testing.assert_array_equal(bundle.spatial(order), np.zeros(10))

    def test_derivatives_are_linear_in_the_field(self):
        first = SineNetwork(NetworkConfig(depth=3, width=8, seed=5))
        second = SineNetwork(NetworkConfig(depth=2, width=6, seed=6))
        points = np.column_stack([np.linspace(-1.0, 1.0, 12), np.linspace(0.0, 1.0, 12)])
        total = input_derivatives(lambda p: first(p) + second(p), points, max_order=5).numpy()
        parts = [input_derivatives(network, points, max_order=5).numpy() for network in (first, second)]
        pairs = [(total.u, parts[0].u + parts[1].u), (total.u_t, parts[0].u_t + parts[1].u_t)]
        pairs += [(total.spatial(k), parts[0].spatial(k) + parts[1].spatial(k)) for k in range(1, 6)]
        for combined, summed in pairs:
            scale = max(1.0, float(np.max(np.abs(summed))))
            self.assertLessEqual(float(np.max(np.abs(combined - summed))), 1e-12 * scale)

    def test_loss_gradient_matches_finite_differences(self):
        network = SineNetwork(NetworkConfig(depth=2, width=3, omega0=5.0, seed=8))
        rng = np.random.default_rng(8)
        points = np.column_stack([rng.uniform(-1.0, 1.0, 20), rng.uniform(0.0, 1.0, 20)])
        target = torch.as_tensor(np.sin(points[:, 0]))

        def training_loss():
            derivs = input_derivatives(network, points, max_order=2, create_graph=True)
            residual = derivs.u_t + derivs.u * derivs.u_x[0] - 0.1 * derivs.u_x[1]
            return torch.mean((derivs.u - target) ** 2) + torch.mean(residual ** 2)

        params = list(network.parameters())
        gradients = torch.autograd.grad(training_loss(), params)
        step = 1e-6
        for param, gradient in zip(params, gradients):
            flat = param.data.view(-1)
            estimate = np.zeros(flat.numel())
            for i in range(flat.numel()):
                original = flat[i].item()
                flat[i] = original + step
                ahead = training_loss().item()
                flat[i] = original - step
                behind = training_loss().item()
                flat[i] = original
                estimate[i] = (ahead - behind) / (2 * step)
            exact = gradient.reshape(-1).numpy()
            self.assertLess(np.linalg.norm(estimate - exact), 1e-4 * max(np.linalg.norm(exact), 1e-8))


if __name__ == '__main__':
    unittest.main()

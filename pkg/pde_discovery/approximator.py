"""Sine-activation function approximator with exact input derivatives.

A network maps physical coordinates (x, t) to a scalar field value. Inputs go
through a fixed affine map onto [-1, 1]^2 before the first layer, so every
derivative taken with autograd with respect to the physical inputs already
carries the chain-rule rescaling.
"""
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from pde_discovery.exceptions import ConfigurationError, InternalError, NumericError

logger = logging.getLogger(__name__)

torch.set_default_dtype(torch.float64)

MAX_DERIVATIVE_ORDER = 5
DEFAULT_LR = 5e-5
DEFAULT_BETAS = (0.99, 0.99)


@dataclass
class NetworkConfig:
    depth: int = 4
    width: int = 65
    input_dim: int = 2
    output_dim: int = 1
    omega0: float = 30.0
    seed: int = 0

    def validate(self):
        if self.depth < 2:
            raise ConfigurationError('Network depth must be at least 2, got %s' % self.depth)
        if self.width < 1:
            raise ConfigurationError('Network width must be at least 1, got %s' % self.width)
        if self.input_dim != 2:
            raise ConfigurationError('Networks take (x, t) inputs, input_dim must be 2, got %s' % self.input_dim)
        if self.output_dim != 1:
            raise ConfigurationError('Networks approximate a scalar field, output_dim must be 1, got %s'
                                     % self.output_dim)
        if not self.omega0 > 0:
            raise ConfigurationError('omega0 must be positive, got %s' % self.omega0)
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, values):
        return cls(**values).validate()


def layer_sizes(depth, width, input_dim=2, output_dim=1):
    """(fan_in, fan_out) of each Linear layer; depth counts Linear layers."""
    return [(input_dim, width)] + [(width, width)] * (depth - 2) + [(width, output_dim)]


def parameter_count(depth, width, input_dim=2, output_dim=1):
    return sum(fan_in * fan_out + fan_out for fan_in, fan_out in layer_sizes(depth, width, input_dim, output_dim))


class SineLayer(nn.Module):
    """Linear map followed by sin(omega0 * .)."""

    def __init__(self, in_features, out_features, omega0=30.0, is_first=False):
        super().__init__()
        self.omega0 = omega0
        self.is_first = is_first
        self.linear = nn.Linear(in_features, out_features)

    def init_weights(self, generator):
        with torch.no_grad():
            fan_in = self.linear.in_features
            if self.is_first:
                bound = 1.0 / fan_in
            else:
                bound = math.sqrt(6.0 / fan_in) / self.omega0
            self.linear.weight.uniform_(-bound, bound, generator=generator)
            bias_bound = 1.0 / math.sqrt(fan_in)
            self.linear.bias.uniform_(-bias_bound, bias_bound, generator=generator)

    def forward(self, inputs):
        return torch.sin(self.omega0 * self.linear(inputs))


def final_layer(in_features, out_features, omega0, generator):
    layer = nn.Linear(in_features, out_features)
    with torch.no_grad():
        bound = math.sqrt(6.0 / in_features) / omega0
        layer.weight.uniform_(-bound, bound, generator=generator)
        bias_bound = 1.0 / math.sqrt(in_features)
        layer.bias.uniform_(-bias_bound, bias_bound, generator=generator)
    return layer


class InputNormalization(nn.Module):
    """Fixed affine map of a coordinate box onto [-1, 1]^d."""

    def __init__(self, input_dim=2):
        super().__init__()
        self.register_buffer('shift', torch.zeros(input_dim))
        self.register_buffer('scale', torch.ones(input_dim))

    def set_bounds(self, lower, upper):
        lower = torch.as_tensor(lower, dtype=torch.float64)
        upper = torch.as_tensor(upper, dtype=torch.float64)
        half_width = (upper - lower) / 2.0
        half_width = torch.where(half_width > 0, half_width, torch.ones_like(half_width))
        self.shift.copy_((upper + lower) / 2.0)
        self.scale.copy_(1.0 / half_width)

    def forward(self, points):
        return (points - self.shift) * self.scale


class SineNetwork(nn.Module):
    """Fully connected sine network (x, t) -> u."""

    def __init__(self, config: NetworkConfig, generator: Optional[torch.Generator] = None):
        super().__init__()
        config.validate()
        self.config = config
        if generator is None:
            generator = torch.Generator().manual_seed(config.seed)
        self.normalization = InputNormalization(config.input_dim)
        sizes = layer_sizes(config.depth, config.width, config.input_dim, config.output_dim)
        sine_layers = []
        for index, (fan_in, fan_out) in enumerate(sizes[:-1]):
            layer = SineLayer(fan_in, fan_out, omega0=config.omega0, is_first=index == 0)
            layer.init_weights(generator)
            sine_layers.append(layer)
        self.body = nn.Sequential(*sine_layers)
        self.head = final_layer(sizes[-1][0], sizes[-1][1], config.omega0, generator)

    def set_normalization(self, lower, upper):
        self.normalization.set_bounds(lower, upper)
        return self

    def forward(self, points):
        return self.head(self.body(self.normalization(points))).reshape(-1)

    def parameter_count(self):
        return sum(p.numel() for p in self.parameters())


@dataclass
class DerivativeBundle:
    """Field values with first time derivative and spatial derivatives u_x^(1..max_order)."""
    u: torch.Tensor
    u_t: torch.Tensor
    u_x: List[torch.Tensor] = field(default_factory=list)

    @property
    def n(self):
        return self.u.shape[0]

    @property
    def max_order(self):
        return len(self.u_x)

    def spatial(self, order):
        """Spatial derivative of the given order; order 0 is the constant 1."""
        if order == 0:
            return self.u * 0 + 1
        return self.u_x[order - 1]

    def detach(self):
        return DerivativeBundle(self.u.detach(), self.u_t.detach(), [d.detach() for d in self.u_x])

    def numpy(self):
        return DerivativeBundle(_to_numpy(self.u), _to_numpy(self.u_t), [_to_numpy(d) for d in self.u_x])


def _to_numpy(values):
    if isinstance(values, torch.Tensor):
        return values.detach().cpu().numpy()
    return np.asarray(values, dtype=np.float64)


def as_points(points):
    points = torch.as_tensor(points, dtype=torch.float64)
    if points.ndim != 2 or points.shape[1] != 2:
        raise InternalError('Expected an (n, 2) coordinate matrix, got shape %s' % (tuple(points.shape),))
    if not torch.isfinite(points).all():
        raise NumericError('Non-finite coordinates passed to the approximator')
    return points


def init_network(config: NetworkConfig) -> SineNetwork:
    return SineNetwork(config.validate())


def forward(network: Callable, points) -> np.ndarray:
    with torch.no_grad():
        return _to_numpy(network(as_points(points)))


def _grad(output, points, create_graph):
    if not output.requires_grad:
        return torch.zeros_like(points)
    grad, = torch.autograd.grad(output.sum(), points, create_graph=create_graph, allow_unused=True)
    if grad is None:
        return torch.zeros_like(points)
    return grad


def input_derivatives(field_fn: Callable, points, max_order: int = MAX_DERIVATIVE_ORDER,
                      create_graph: bool = False) -> DerivativeBundle:
    """Exact derivatives of a pointwise field with respect to its inputs.

    field_fn maps an (n, 2) tensor of (x, t) rows to an n-vector and must treat
    rows independently, which holds for networks and closed-form solutions.
    With create_graph the bundle stays attached to the parameter graph so a
    loss built from it can be back-propagated.
    """
    if not 1 <= max_order <= MAX_DERIVATIVE_ORDER:
        raise ConfigurationError('max_order must be within 1..%d, got %s' % (MAX_DERIVATIVE_ORDER, max_order))
    points = as_points(points)
    if not points.requires_grad:
        points = points.clone().requires_grad_(True)
    with torch.enable_grad():
        u = field_fn(points).reshape(-1)
        first = _grad(u, points, create_graph=True)
        u_t = first[:, 1]
        current = first[:, 0]
        u_x = [current]
        for _ in range(2, max_order + 1):
            current = _grad(current, points, create_graph=True)[:, 0]
            u_x.append(current)
    bundle = DerivativeBundle(u, u_t, u_x)
    if not create_graph:
        bundle = bundle.detach()
    return bundle


def adam_step(params: Sequence[torch.Tensor], gradients: Sequence[torch.Tensor], optimizer_state: Optional[dict] = None,
              lr: float = DEFAULT_LR, betas: Tuple[float, float] = DEFAULT_BETAS):
    """One Adam update of ``params`` in place; returns (params, new optimizer state)."""
    params = list(params)
    gradients = list(gradients)
    if len(params) != len(gradients):
        raise InternalError('Got %d parameters but %d gradients' % (len(params), len(gradients)))
    for param, grad in zip(params, gradients):
        if param.shape != grad.shape:
            raise InternalError('Gradient shape %s does not match parameter shape %s'
                                % (tuple(grad.shape), tuple(param.shape)))
    optimizer = torch.optim.Adam(params, lr=lr, betas=betas)
    if optimizer_state is not None:
        optimizer.load_state_dict(optimizer_state)
        for group in optimizer.param_groups:
            group['lr'] = lr
            group['betas'] = betas
    for param, grad in zip(params, gradients):
        param.grad = grad.detach().clone()
    optimizer.step()
    return params, optimizer.state_dict()

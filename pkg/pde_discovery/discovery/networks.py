"""Network families: one sine network per experiment, or a shared trunk with per-experiment heads.

In the shared-trunk family every experiment keeps its own input normalisation
and its own last two layers (a sine layer and the linear output); the first
depth - 2 layers are shared. The trunk width is chosen so the total parameter
count matches the separate family as closely as possible.
"""
import functools
import logging
from dataclasses import replace

import torch
from torch import nn

from pde_discovery.approximator import (InputNormalization, NetworkConfig, SineLayer, SineNetwork, final_layer,
                                        layer_sizes, parameter_count)
from pde_discovery.exceptions import ConfigurationError, InternalError

logger = logging.getLogger(__name__)


def separate_parameter_count(config: NetworkConfig, q):
    return q * parameter_count(config.depth, config.width, config.input_dim, config.output_dim)


def shared_trunk_parameter_count(depth, width, q, input_dim=2, output_dim=1):
    sizes = layer_sizes(depth, width, input_dim, output_dim)
    trunk = sum(fan_in * fan_out + fan_out for fan_in, fan_out in sizes[:-2])
    heads = sum(fan_in * fan_out + fan_out for fan_in, fan_out in sizes[-2:])
    return trunk + q * heads


def shared_trunk_width(config: NetworkConfig, q):
    """Width whose shared-trunk total is closest to the separate family's total."""
    if config.depth < 3:
        raise ConfigurationError('A shared trunk needs depth >= 3, got %s' % config.depth)
    target = separate_parameter_count(config, q)
    candidates = range(1, 4 * config.width * max(q, 1) + 1)
    return min(candidates, key=lambda w: (abs(shared_trunk_parameter_count(config.depth, w, q, config.input_dim,
                                                                           config.output_dim) - target), w))


class SeparateNetworks(nn.Module):
    architecture = 'separate'

    def __init__(self, config: NetworkConfig, q):
        super().__init__()
        generator = torch.Generator().manual_seed(config.seed)
        self.networks = nn.ModuleList([SineNetwork(config, generator) for _ in range(q)])

    @property
    def q(self):
        return len(self.networks)

    def set_normalization(self, index, lower, upper):
        self.networks[index].set_normalization(lower, upper)

    def field(self, index):
        return self.networks[index]

    def parameter_count(self):
        return sum(p.numel() for p in self.parameters())


class _Head(nn.Module):
    def __init__(self, width, output_dim, omega0, generator):
        super().__init__()
        self.hidden = SineLayer(width, width, omega0=omega0)
        self.hidden.init_weights(generator)
        self.output = final_layer(width, output_dim, omega0, generator)

    def forward(self, features):
        return self.output(self.hidden(features)).reshape(-1)


class SharedTrunkNetworks(nn.Module):
    architecture = 'shared_trunk'

    def __init__(self, config: NetworkConfig, q, width=None):
        super().__init__()
        if config.depth < 3:
            raise ConfigurationError('A shared trunk needs depth >= 3, got %s' % config.depth)
        width = width or shared_trunk_width(config, q)
        self.config = replace(config, width=width)
        generator = torch.Generator().manual_seed(config.seed)
        sizes = layer_sizes(config.depth, width, config.input_dim, config.output_dim)
        trunk = []
        for index, (fan_in, fan_out) in enumerate(sizes[:-2]):
            layer = SineLayer(fan_in, fan_out, omega0=config.omega0, is_first=index == 0)
            layer.init_weights(generator)
            trunk.append(layer)
        self.trunk = nn.Sequential(*trunk)
        self.normalizations = nn.ModuleList([InputNormalization(config.input_dim) for _ in range(q)])
        self.heads = nn.ModuleList([_Head(width, config.output_dim, config.omega0, generator) for _ in range(q)])

    @property
    def q(self):
        return len(self.heads)

    def set_normalization(self, index, lower, upper):
        self.normalizations[index].set_bounds(lower, upper)

    def forward(self, index, points):
        return self.heads[index](self.trunk(self.normalizations[index](points)))

    def field(self, index):
        if not 0 <= index < self.q:
            raise InternalError('No head for experiment %d' % index)
        return functools.partial(self.forward, index)

    def parameter_count(self):
        return sum(p.numel() for p in self.parameters())


def build_networks(architecture, config: NetworkConfig, experiments):
    """Network family for the experiments with input normalisation set from each experiment's box."""
    config.validate()
    q = len(experiments)
    if architecture == 'separate':
        family = SeparateNetworks(config, q)
    elif architecture == 'shared_trunk':
        family = SharedTrunkNetworks(config, q)
    else:
        raise ConfigurationError('Unknown architecture %s' % architecture)
    for index, experiment in enumerate(experiments):
        family.set_normalization(index, *experiment.bounds())
    logger.info('Built %s networks for %d experiments with %d parameters', architecture, q, family.parameter_count())
    return family

from dataclasses import asdict, dataclass, field, replace
from typing import Tuple

from pde_discovery.approximator import DEFAULT_BETAS, DEFAULT_LR, NetworkConfig
from pde_discovery.exceptions import ConfigurationError
from pde_discovery.feature_library import DEFAULT_MAX_ORDER, DEFAULT_MAX_POLY
from pde_discovery.stability_selection import StabilityConfig

MODES = ('individual', 'grouped')
ARCHITECTURES = ('separate', 'shared_trunk')


@dataclass
class TriggerConfig:
    patience: int = 500
    period: int = 1000
    min_delta: float = 1e-6

    def validate(self):
        if self.patience < 1:
            raise ConfigurationError('Trigger patience must be at least 1, got %s' % self.patience)
        if self.period < 0:
            raise ConfigurationError('Trigger period must be non-negative, got %s' % self.period)
        if self.min_delta < 0:
            raise ConfigurationError('min_delta must be non-negative, got %s' % self.min_delta)
        return self


@dataclass
class DiscoveryConfig:
    mode: str = 'grouped'
    architecture: str = 'separate'
    network: NetworkConfig = field(default_factory=NetworkConfig)
    lr: float = DEFAULT_LR
    betas: Tuple[float, float] = DEFAULT_BETAS
    ridge_alpha: float = 1e-5
    trigger: TriggerConfig = field(default_factory=TriggerConfig)
    train_fraction: float = 0.8
    stability: StabilityConfig = field(default_factory=StabilityConfig)
    max_epochs: int = 30000
    max_poly: int = DEFAULT_MAX_POLY
    max_order: int = DEFAULT_MAX_ORDER
    log_every: int = 500
    seed: int = 0

    def validate(self):
        if self.mode not in MODES:
            raise ConfigurationError('Unknown mode %s, expected one of %s' % (self.mode, ', '.join(MODES)))
        if self.architecture not in ARCHITECTURES:
            raise ConfigurationError('Unknown architecture %s, expected one of %s'
                                     % (self.architecture, ', '.join(ARCHITECTURES)))
        if not 0 < self.train_fraction < 1:
            raise ConfigurationError('train_fraction must lie in (0, 1), got %s' % self.train_fraction)
        if self.ridge_alpha < 0:
            raise ConfigurationError('ridge_alpha must be non-negative, got %s' % self.ridge_alpha)
        if not self.lr > 0:
            raise ConfigurationError('Learning rate must be positive, got %s' % self.lr)
        if self.max_epochs < 1:
            raise ConfigurationError('max_epochs must be at least 1, got %s' % self.max_epochs)
        if self.architecture == 'shared_trunk' and self.network.depth < 3:
            raise ConfigurationError('A shared trunk needs depth >= 3 so each head keeps two layers')
        self.network.validate()
        self.trigger.validate()
        self.stability.validate()
        return self

    def replace(self, **changes):
        return replace(self, **changes)

    def to_dict(self):
        values = asdict(self)
        values['betas'] = list(self.betas)
        return values

    @classmethod
    def from_dict(cls, values):
        values = dict(values)
        nested = {'network': NetworkConfig, 'trigger': TriggerConfig, 'stability': StabilityConfig}
        if 'betas' in values:
            values['betas'] = tuple(values['betas'])
        try:
            for key, kind in nested.items():
                if isinstance(values.get(key), dict):
                    values[key] = kind(**values[key])
            return cls(**values).validate()
        except TypeError as e:
            raise ConfigurationError('Invalid discovery configuration: %s' % e)

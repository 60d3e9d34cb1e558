import math

from pde_discovery.config import PdeDiscoveryConfig


class SyntheticConfig(PdeDiscoveryConfig):
    # (x_min, x_max), (t_min, t_max) per generator
    WINDOWS = {
        'burgers_delta': {'x': (-3.0, 4.0), 't': (0.2, 2.0)},
        'burgers_step': {'x': (-5.0, 5.0), 't': (0.1, 2.0)},
        'burgers_periodic': {'x': (0.0, 2.0 * math.pi), 't': (0.1, 2.0)},
        'kdv_single': {'x': (-10.0, 10.0), 't': (0.0, 2.0)},
        'kdv_double': {'x': (-10.0, 10.0), 't': (0.0, 2.0)},
    }
    DEFAULT_NX = 50
    DEFAULT_NT = 40
    DELTA_AMPLITUDE = 1.0
    PERIODIC_AMPLITUDE = 1.0
    PERIODIC_MAX_TERMS = 80
    STEP_LEFT = 1.0
    STEP_RIGHT = 0.0
    KDV_SINGLE_SPEED = 2.0
    KDV_SINGLE_OFFSET = -3.0
    KDV_DOUBLE_SPEEDS = (4.0, 1.0)
    KDV_DOUBLE_OFFSETS = (-6.0, -2.0)
    KS_DOMAIN_LENGTH = 32.0 * math.pi
    KS_MODES = 1024
    KS_DT = 0.05
    KS_SAVE_EVERY = 5
    KS_STEPS = 2000
    NOISE_CONVENTION = 'gaussian, sigma = level * std(clean observed field)'

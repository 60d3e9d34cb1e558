"""Dataset generators: closed-form Burgers / KdV fields, ETDRK4 Kuramoto-Sivashinsky,
Gaussian noise injection and subsampling."""
import logging

import numpy as np
import torch

from pde_discovery.exceptions import DomainError, NumericError
from pde_discovery.synthetic.config import SyntheticConfig
from pde_discovery.synthetic.experiment import Experiment
from pde_discovery.synthetic.solutions import (BurgersDelta, BurgersPeriodic, BurgersStep, KdVDouble, KdVSingle)

logger = logging.getLogger(__name__)

IC_KINDS = ('delta', 'periodic', 'step')
KS_REGIMES = ('pre_chaotic', 'chaotic')


def default_grid(generator, nx=None, nt=None):
    window = SyntheticConfig.WINDOWS[generator]
    x = np.linspace(window['x'][0], window['x'][1], nx or SyntheticConfig.DEFAULT_NX)
    t = np.linspace(window['t'][0], window['t'][1], nt or SyntheticConfig.DEFAULT_NT)
    return x, t


def evaluate_on_grid(solution, x_grid, t_grid):
    x_grid = np.asarray(x_grid, dtype=np.float64)
    t_grid = np.asarray(t_grid, dtype=np.float64)
    xx, tt = np.meshgrid(x_grid, t_grid)
    points = torch.as_tensor(np.column_stack([xx.ravel(), tt.ravel()]))
    with torch.no_grad():
        values = solution(points).numpy()
    return values.reshape(t_grid.size, x_grid.size)


def _closed_form_experiment(solution, generator, x_grid, t_grid, name):
    u = evaluate_on_grid(solution, x_grid, t_grid)
    experiment = Experiment(x=x_grid, t=t_grid, u=u, pde_name=solution.pde_name, params=solution.params(),
                            generator=generator, name=name or generator)
    return experiment.validate()


def burgers_delta(nu, x_grid=None, t_grid=None, amplitude=None, name=None):
    if x_grid is None or t_grid is None:
        default_x, default_t = default_grid('burgers_delta')
        x_grid = default_x if x_grid is None else x_grid
        t_grid = default_t if t_grid is None else t_grid
    if np.any(np.asarray(t_grid) <= 0):
        raise DomainError('Delta initial condition needs t > 0 everywhere on the time grid')
    amplitude = SyntheticConfig.DELTA_AMPLITUDE if amplitude is None else amplitude
    return _closed_form_experiment(BurgersDelta(nu, amplitude), 'burgers_delta', x_grid, t_grid, name)


def burgers_ic_variants(nu, ic_kind, x_grid=None, t_grid=None, name=None, **ic_params):
    """Burgers field at viscosity nu for a delta, periodic (sine) or step initial condition."""
    if ic_kind not in IC_KINDS:
        raise DomainError('Unknown initial condition %s, expected one of %s' % (ic_kind, IC_KINDS))
    generator = 'burgers_%s' % ic_kind
    if x_grid is None or t_grid is None:
        default_x, default_t = default_grid(generator)
        x_grid = default_x if x_grid is None else x_grid
        t_grid = default_t if t_grid is None else t_grid
    if ic_kind == 'delta':
        return burgers_delta(nu, x_grid, t_grid, ic_params.get('amplitude'), name=name)
    if ic_kind == 'periodic':
        solution = BurgersPeriodic(nu, ic_params.get('amplitude', SyntheticConfig.PERIODIC_AMPLITUDE),
                                   SyntheticConfig.PERIODIC_MAX_TERMS)
    else:
        solution = BurgersStep(nu, ic_params.get('u_left', SyntheticConfig.STEP_LEFT),
                               ic_params.get('u_right', SyntheticConfig.STEP_RIGHT), ic_params.get('x0', 0.0))
    return _closed_form_experiment(solution, generator, x_grid, t_grid, name)


def kdv_solitons(kind, speeds=None, x_grid=None, t_grid=None, offsets=None, name=None):
    if kind not in ('single', 'double'):
        raise DomainError('Unknown soliton kind %s' % kind)
    generator = 'kdv_%s' % kind
    if x_grid is None or t_grid is None:
        default_x, default_t = default_grid(generator)
        x_grid = default_x if x_grid is None else x_grid
        t_grid = default_t if t_grid is None else t_grid
    if kind == 'single':
        speed = SyntheticConfig.KDV_SINGLE_SPEED if speeds is None else np.ravel(speeds)[0]
        offset = SyntheticConfig.KDV_SINGLE_OFFSET if offsets is None else np.ravel(offsets)[0]
        solution = KdVSingle(speed, offset)
    else:
        solution = KdVDouble(speeds or SyntheticConfig.KDV_DOUBLE_SPEEDS,
                             offsets or SyntheticConfig.KDV_DOUBLE_OFFSETS)
    return _closed_form_experiment(solution, generator, x_grid, t_grid, name)


def ks_initial_condition(x, domain_length):
    scale = domain_length / (2.0 * np.pi)
    return np.cos(x / scale) * (1.0 + np.sin(x / scale))


class KuramotoSivashinskyETDRK4:
    """Fourth-order exponential time differencing for u_t = -u u_x - u_xx - u_xxxx.

    Periodic domain of length ``domain_length`` with ``nx`` collocation points;
    coefficients use contour-integral quadrature to avoid cancellation for
    small linear eigenvalues.
    """

    def __init__(self, domain_length, nx, dt, num_roots_of_unity=32):
        self.domain_length = domain_length
        self.nx = nx
        self.dt = dt
        self.wavenumbers = 2.0 * np.pi * np.arange(nx // 2 + 1) / domain_length
        linear = self.wavenumbers ** 2 - self.wavenumbers ** 4
        # Nyquist mode is dropped from odd derivatives
        self.derivative = 1j * self.wavenumbers
        if nx % 2 == 0:
            self.derivative[-1] = 0.0
        self.exp_full = np.exp(dt * linear)
        self.exp_half = np.exp(0.5 * dt * linear)
        roots = np.exp(1j * np.pi * (np.arange(num_roots_of_unity) + 0.5) / num_roots_of_unity)
        lr = dt * linear[:, None] + roots[None, :]
        exp_lr = np.exp(lr)
        self.coeff_half = dt * (((np.exp(lr / 2.0) - 1.0) / lr).mean(axis=1)).real
        self.coeff_f1 = dt * (((-4.0 - lr + exp_lr * (4.0 - 3.0 * lr + lr ** 2)) / lr ** 3).mean(axis=1)).real
        self.coeff_f2 = dt * (((2.0 + lr + exp_lr * (lr - 2.0)) / lr ** 3).mean(axis=1)).real
        self.coeff_f3 = dt * (((-4.0 - 3.0 * lr - lr ** 2 + exp_lr * (4.0 - lr)) / lr ** 3).mean(axis=1)).real

    def nonlinear(self, spectrum):
        u = np.fft.irfft(spectrum, n=self.nx)
        return -0.5 * self.derivative * np.fft.rfft(u ** 2)

    def step(self, spectrum):
        n_0 = self.nonlinear(spectrum)
        state_1 = self.exp_half * spectrum + self.coeff_half * n_0
        n_1 = self.nonlinear(state_1)
        state_2 = self.exp_half * spectrum + self.coeff_half * n_1
        n_2 = self.nonlinear(state_2)
        state_3 = self.exp_half * state_1 + self.coeff_half * (2.0 * n_2 - n_0)
        n_3 = self.nonlinear(state_3)
        return (self.exp_full * spectrum + self.coeff_f1 * n_0
                + 2.0 * self.coeff_f2 * (n_1 + n_2) + self.coeff_f3 * n_3)


def ks_numerical(domain_length=None, nx=None, dt=None, n_steps=None, ic=None, save_every=None, name=None):
    """Integrate Kuramoto-Sivashinsky from ``ic`` (callable of x, array, or None for the default IC)."""
    domain_length = domain_length or SyntheticConfig.KS_DOMAIN_LENGTH
    nx = nx or SyntheticConfig.KS_MODES
    dt = dt or SyntheticConfig.KS_DT
    n_steps = SyntheticConfig.KS_STEPS if n_steps is None else n_steps
    save_every = save_every or SyntheticConfig.KS_SAVE_EVERY
    if domain_length <= 0 or nx < 4 or dt <= 0 or n_steps < 1:
        raise DomainError('Invalid KS discretisation: L=%s nx=%s dt=%s steps=%s'
                          % (domain_length, nx, dt, n_steps))
    if nx & (nx - 1):
        logger.warning('KS grid size %d is not a power of two', nx)
    x = domain_length * np.arange(nx) / nx
    if ic is None:
        u0 = ks_initial_condition(x, domain_length)
    elif callable(ic):
        u0 = np.asarray(ic(x), dtype=np.float64)
    else:
        u0 = np.asarray(ic, dtype=np.float64)
    integrator = KuramotoSivashinskyETDRK4(domain_length, nx, dt)
    spectrum = np.fft.rfft(u0)
    snapshots, times = [u0.copy()], [0.0]
    for step in range(1, n_steps + 1):
        spectrum = integrator.step(spectrum)
        if step % save_every == 0 or step == n_steps:
            u = np.fft.irfft(spectrum, n=nx)
            if not np.all(np.isfinite(u)):
                raise NumericError('KS integration became non-finite at step %d (dt=%s)' % (step, dt))
            snapshots.append(u)
            times.append(step * dt)
    logger.debug('KS integration finished after %d steps, %d snapshots', n_steps, len(snapshots))
    experiment = Experiment(x=x, t=np.array(times), u=np.array(snapshots), pde_name='ks',
                            params={'domain_length': float(domain_length), 'dt': float(dt)},
                            generator='ks', name=name or 'ks')
    return experiment.validate()


def ks_regime(experiment, regime, name=None):
    """Keep the first (pre-chaotic) or last (chaotic) quarter of a KS trajectory."""
    if regime not in KS_REGIMES:
        raise DomainError('Unknown KS regime %s, expected one of %s' % (regime, KS_REGIMES))
    quarter = max(experiment.nt // 4, 2)
    rows = slice(0, quarter) if regime == 'pre_chaotic' else slice(experiment.nt - quarter, experiment.nt)
    sampling = dict(experiment.sampling, regime=regime)
    return experiment.replace(t=experiment.t[rows], u=experiment.u[rows], sample_index=None, sampling=sampling,
                              name=name or '%s_%s' % (experiment.name, regime))


def add_noise(experiment, level, seed=0):
    """u <- u + level * std(u_observed) * eps with eps iid standard normal over the whole grid."""
    if level < 0:
        raise DomainError('Noise level must be non-negative, got %s' % level)
    if level == 0:
        return experiment.replace(noise_level=0.0, seed=seed, noise_convention=SyntheticConfig.NOISE_CONVENTION)
    rng = np.random.default_rng(seed)
    sigma = level * np.std(experiment.values())
    noisy = experiment.u + sigma * rng.standard_normal(experiment.u.shape)
    return experiment.replace(u=noisy, noise_level=float(level), seed=seed,
                              noise_convention=SyntheticConfig.NOISE_CONVENTION)


def subsample(experiment, n=None, strategy='random', seed=0, shape=None):
    """Reduce an experiment to n samples.

    ``grid`` keeps a regular (nt, nx) product grid given by ``shape`` (evenly
    spaced rows and columns of the source grid); ``random`` draws n grid nodes
    without replacement and records them in ``sample_index``.
    """
    if strategy == 'grid':
        if shape is None:
            raise DomainError('Grid subsampling needs a (nt, nx) shape')
        nt, nx = shape
        if n is not None and n != nt * nx:
            raise DomainError('Grid shape %s gives %d samples, not %d' % (shape, nt * nx, n))
        if nt > experiment.nt or nx > experiment.nx:
            raise DomainError('Grid shape %s exceeds source grid (%d, %d)' % (shape, experiment.nt, experiment.nx))
        rows = np.unique(np.round(np.linspace(0, experiment.nt - 1, nt)).astype(int))
        cols = np.unique(np.round(np.linspace(0, experiment.nx - 1, nx)).astype(int))
        sampling = dict(experiment.sampling, strategy='grid', shape=[int(nt), int(nx)])
        return experiment.replace(t=experiment.t[rows], x=experiment.x[cols], u=experiment.u[np.ix_(rows, cols)],
                                  sample_index=None, sampling=sampling)
    if strategy == 'random':
        available = experiment.flat_index()
        if n is None or n > available.size:
            raise DomainError('Cannot draw %s samples from %d available' % (n, available.size))
        rng = np.random.default_rng(seed)
        chosen = np.sort(rng.choice(available, size=n, replace=False))
        sampling = dict(experiment.sampling, strategy='random', n=int(n), seed=int(seed))
        return experiment.replace(sample_index=chosen, sampling=sampling)
    raise DomainError('Unknown sampling strategy %s' % strategy)

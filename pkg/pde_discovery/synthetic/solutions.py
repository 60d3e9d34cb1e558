"""Closed-form solutions written with torch operations.

Each solution is a pointwise callable on an (n, 2) tensor of (x, t) rows, so
the same nested autograd routine used for networks yields exact analytic
derivatives of any order.
"""
import math

import numpy as np
import torch
from scipy import special

from pde_discovery.exceptions import DomainError


def _split(points):
    return points[:, 0], points[:, 1]


class BurgersDelta:
    """Cole-Hopf solution of u_t = nu u_xx - u u_x with initial mass ``amplitude`` at x = 0."""
    pde_name = 'burgers'

    def __init__(self, nu, amplitude=1.0):
        if not nu > 0:
            raise DomainError('Viscosity must be positive, got %s' % nu)
        self.nu = float(nu)
        self.amplitude = float(amplitude)

    def params(self):
        return {'nu': self.nu, 'amplitude': self.amplitude}

    def __call__(self, points):
        x, t = _split(points)
        nu = self.nu
        factor = math.expm1(self.amplitude / (2.0 * nu))
        z = x / torch.sqrt(4.0 * nu * t)
        return (torch.sqrt(nu / (math.pi * t)) * factor * torch.exp(-z ** 2)
                / (1.0 + factor / 2.0 * torch.special.erfc(z)))


class BurgersPeriodic:
    """Cole-Hopf Fourier-series solution for u(x, 0) = amplitude * sin(x) on a 2*pi periodic domain.

    The heat-equation potential exp(a cos x), a = amplitude / (2 nu), expands in
    modified Bessel functions; exponentially scaled values keep the series finite.
    """
    pde_name = 'burgers'

    def __init__(self, nu, amplitude=1.0, max_terms=80):
        if not nu > 0:
            raise DomainError('Viscosity must be positive, got %s' % nu)
        self.nu = float(nu)
        self.amplitude = float(amplitude)
        a = self.amplitude / (2.0 * self.nu)
        orders = np.arange(max_terms + 1)
        coefficients = special.ive(orders, a)
        keep = coefficients > 1e-18 * coefficients[0]
        keep[0] = True
        self.orders = torch.as_tensor(orders[keep][1:], dtype=torch.float64)
        self.coefficients = torch.as_tensor(coefficients[keep], dtype=torch.float64)

    def params(self):
        return {'nu': self.nu, 'amplitude': self.amplitude}

    def __call__(self, points):
        x, t = _split(points)
        k = self.orders
        decay = torch.exp(-self.nu * k[None, :] ** 2 * t[:, None]) * self.coefficients[1:][None, :]
        phi = self.coefficients[0] + 2.0 * (decay * torch.cos(k[None, :] * x[:, None])).sum(dim=1)
        flux = (decay * k[None, :] * torch.sin(k[None, :] * x[:, None])).sum(dim=1)
        return 4.0 * self.nu * flux / phi


class BurgersStep:
    """Viscous shock travelling wave u = c - b tanh(b (x - c t - x0) / (2 nu))."""
    pde_name = 'burgers'

    def __init__(self, nu, u_left=1.0, u_right=0.0, x0=0.0):
        if not nu > 0:
            raise DomainError('Viscosity must be positive, got %s' % nu)
        self.nu = float(nu)
        self.u_left = float(u_left)
        self.u_right = float(u_right)
        self.x0 = float(x0)

    def params(self):
        return {'nu': self.nu, 'u_left': self.u_left, 'u_right': self.u_right, 'x0': self.x0}

    def __call__(self, points):
        x, t = _split(points)
        speed = (self.u_left + self.u_right) / 2.0
        jump = (self.u_left - self.u_right) / 2.0
        return speed - jump * torch.tanh(jump * (x - speed * t - self.x0) / (2.0 * self.nu))


class KdVSingle:
    """Single soliton of u_t = -6 u u_x - u_xxx, also a travelling wave u_t = -c u_x."""
    pde_name = 'kdv'

    def __init__(self, speed, x0=0.0):
        if not speed > 0:
            raise DomainError('Soliton speed must be positive, got %s' % speed)
        self.speed = float(speed)
        self.x0 = float(x0)

    def params(self):
        return {'c': self.speed, 'x0': self.x0}

    def __call__(self, points):
        x, t = _split(points)
        c = self.speed
        return c / 2.0 / torch.cosh(math.sqrt(c) * (x - c * t - self.x0) / 2.0) ** 2


class KdVDouble:
    """Two-soliton solution u = 2 d^2/dx^2 log F of u_t = -6 u u_x - u_xxx.

    F = 1 + e1 + e2 + A e1 e2 with e_i = exp(k_i (x - c_i t - x_i)), k_i = sqrt(c_i)
    and A = ((k1 - k2) / (k1 + k2))^2. The numerator F F_xx - F_x^2 is expanded
    so the leading exponentials cancel symbolically.
    """
    pde_name = 'kdv'

    def __init__(self, speeds, offsets=(0.0, 0.0)):
        c1, c2 = (float(c) for c in speeds)
        if not (c1 > 0 and c2 > 0):
            raise DomainError('Soliton speeds must be positive, got %s' % (speeds,))
        if c1 == c2:
            raise DomainError('Double soliton needs distinct speeds, got %s' % (speeds,))
        self.speeds = (c1, c2)
        self.offsets = tuple(float(o) for o in offsets)

    @property
    def interaction(self):
        k1, k2 = (math.sqrt(c) for c in self.speeds)
        return ((k1 - k2) / (k1 + k2)) ** 2

    def params(self):
        return {'c1': self.speeds[0], 'c2': self.speeds[1], 'x1': self.offsets[0], 'x2': self.offsets[1]}

    def __call__(self, points):
        x, t = _split(points)
        (c1, c2), (x1, x2) = self.speeds, self.offsets
        k1, k2 = math.sqrt(c1), math.sqrt(c2)
        a = self.interaction
        e1 = torch.exp(k1 * (x - c1 * t - x1))
        e2 = torch.exp(k2 * (x - c2 * t - x2))
        f = 1.0 + e1 + e2 + a * e1 * e2
        numerator = (k1 ** 2 * e1 + k2 ** 2 * e2 + (a * (k1 + k2) ** 2 + (k1 - k2) ** 2) * e1 * e2
                     + a * k2 ** 2 * e1 ** 2 * e2 + a * k1 ** 2 * e1 * e2 ** 2)
        return 2.0 * numerator / f ** 2


SOLUTIONS = {
    'burgers_delta': lambda p: BurgersDelta(p['nu'], p.get('amplitude', 1.0)),
    'burgers_periodic': lambda p: BurgersPeriodic(p['nu'], p.get('amplitude', 1.0)),
    'burgers_step': lambda p: BurgersStep(p['nu'], p.get('u_left', 1.0), p.get('u_right', 0.0), p.get('x0', 0.0)),
    'kdv_single': lambda p: KdVSingle(p['c'], p.get('x0', 0.0)),
    'kdv_double': lambda p: KdVDouble((p['c1'], p['c2']), (p.get('x1', 0.0), p.get('x2', 0.0))),
}


def has_closed_form(generator):
    return generator in SOLUTIONS


def solution_for(generator, params):
    """Rebuild the closed-form solution an experiment was generated from."""
    if generator not in SOLUTIONS:
        raise DomainError('Generator %s has no closed-form solution' % generator)
    return SOLUTIONS[generator](params)

"""Ridge, randomised adaptive Lasso and randomised adaptive group Lasso.

All penalised problems are solved in Gram form. For experiment i with design
X_i (n_i x p) and target y_i the solver keeps

    G_i = X_i' X_i / n_i,   c_i = X_i' y_i / n_i,   a_i = y_i' y_i / n_i

and minimises

    sum_i 1/(2 n_i) ||y_i - X_i xi_i||^2 + lambda * sum_j ||xi_.j||_2 / W_j

by cyclic block coordinate descent, one block per library column holding that
column's coefficient in every experiment. With a single experiment every block
is a scalar and the problem is the weighted Lasso.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy import linalg, optimize

from pde_discovery.exceptions import ConfigurationError, ConvergenceError, InternalError, NumericError

logger = logging.getLogger(__name__)

DEFAULT_GAMMA = 2.0
DEFAULT_PILOT_ALPHA = 1e-5
PILOT_ZERO = 1e-10
WEIGHT_CAP = 1e20
DEFAULT_TOL = 1e-8
DEFAULT_KKT_TOL = 1e-7
DEFAULT_MAX_ITER = 100000
ACTIVE_SWEEPS = 10
RANDOMISATION_MODES = ('per_column', 'per_group')


def ridge_fit(theta, y, alpha):
    """Solve (theta' theta + n alpha I) xi = theta' y without intercept."""
    theta = np.asarray(theta, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if alpha < 0:
        raise ConfigurationError('Ridge alpha must be non-negative, got %s' % alpha)
    n, p = theta.shape
    if y.shape != (n,):
        raise InternalError('Target length %s does not match design with %d rows' % (y.shape, n))
    if p == 0:
        return np.zeros(0)
    if alpha == 0:
        xi, _, rank, _ = np.linalg.lstsq(theta, y, rcond=None)
        if rank < p:
            raise NumericError('Singular least-squares system: rank %d < %d columns at alpha=0; '
                               'use a positive ridge alpha' % (rank, p))
        return xi
    try:
        return linalg.solve(theta.T @ theta + n * alpha * np.eye(p), theta.T @ y, assume_a='pos')
    except linalg.LinAlgError as e:
        raise NumericError('Ridge system could not be solved with alpha=%g: %s' % (alpha, e))


def soft_threshold(z, threshold):
    return np.sign(z) * np.maximum(np.abs(z) - threshold, 0.0)


def sample_randomisation(p, q, mode='per_column', seed=None):
    """Beta(1, 2) penalty perturbations as a (q, p) matrix.

    ``per_group`` draws one value per column shared by all experiments; ``per_column``
    draws every entry independently. For q = 1 both modes consume the generator
    identically. ``seed`` may be an int or a numpy Generator.
    """
    if p < 1 or q < 1:
        raise ConfigurationError('Randomisation needs p, q >= 1, got p=%s q=%s' % (p, q))
    if mode not in RANDOMISATION_MODES:
        raise ConfigurationError('Unknown randomisation mode %s' % mode)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if mode == 'per_group':
        draws = np.tile(rng.beta(1.0, 2.0, size=p), (q, 1))
    else:
        draws = rng.beta(1.0, 2.0, size=(q, p))
    # Beta(1, 2) has support (0, 1) but a draw can round to 0 in floating point
    return np.clip(draws, np.finfo(np.float64).tiny, 1.0 - np.finfo(np.float64).epsneg)


@dataclass
class AdaptiveWeights:
    w_hat: np.ndarray
    w_random: np.ndarray
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        self.w_hat = np.atleast_2d(np.asarray(self.w_hat, dtype=np.float64))
        self.w_random = np.atleast_2d(np.asarray(self.w_random, dtype=np.float64))
        if self.w_hat.shape != self.w_random.shape:
            raise InternalError('Adaptive weights %s and random weights %s differ in shape'
                                % (self.w_hat.shape, self.w_random.shape))
        if not np.all(np.isfinite(self.w_hat)) or np.any(self.w_hat <= 0):
            raise NumericError('Adaptive weights must be finite and positive')
        if np.any(self.w_random <= 0) or np.any(self.w_random > 1):
            raise NumericError('Random penalty weights must lie in (0, 1]')

    @classmethod
    def uniform(cls, p, q=1):
        return cls(np.ones((q, p)), np.ones((q, p)), gamma=0.0)

    def group_weights(self):
        """One random weight per column; experiments must share it."""
        first = self.w_random[0]
        if not np.all(self.w_random == first):
            raise InternalError('Grouped fits need one random weight per group shared across experiments')
        return first


def pilot_weights(thetas, ys, gamma=DEFAULT_GAMMA, alpha=DEFAULT_PILOT_ALPHA):
    """w_hat = 1 / |xi_pilot|^gamma from a ridge pilot per experiment.

    The pilot solves (theta' theta + alpha I) xi = theta' y. On unit-norm columns
    ``alpha`` is therefore relative to the column curvature whatever the number of
    rows. Pilot coefficients below ``PILOT_ZERO`` in magnitude get the weight ``WEIGHT_CAP``,
    which removes the column from the weighted problem.
    """
    rows = []
    for theta, y in zip(thetas, ys):
        theta = np.asarray(theta, dtype=np.float64)
        xi = np.abs(ridge_fit(theta, y, alpha / max(theta.shape[0], 1)))
        with np.errstate(divide='ignore', over='ignore'):
            w = np.where(xi < PILOT_ZERO, WEIGHT_CAP, 1.0 / xi ** gamma)
        rows.append(np.minimum(w, WEIGHT_CAP))
    return np.vstack(rows)


@dataclass
class GroupSpec:
    """Column groups; a group is one library column across all q experiments."""
    labels: List[str]
    group_ids: np.ndarray
    q: int = 1

    def __post_init__(self):
        self.group_ids = np.asarray(self.group_ids)
        if self.group_ids.shape != (len(self.labels),):
            raise InternalError('Every column needs exactly one group id')
        if np.unique(self.group_ids).size != self.group_ids.size:
            raise ConfigurationError('Only one column per experiment may belong to a group')

    @classmethod
    def by_label(cls, labels, q):
        return cls(list(labels), np.arange(len(labels)), q)

    @property
    def n_groups(self):
        return self.group_ids.size


@dataclass
class GramProblem:
    gram: np.ndarray
    moment: np.ndarray
    energy: np.ndarray
    n: np.ndarray

    @classmethod
    def from_arrays(cls, thetas, ys):
        grams, moments, energies, sizes = [], [], [], []
        p = None
        for theta, y in zip(thetas, ys):
            theta = np.asarray(theta, dtype=np.float64)
            y = np.asarray(y, dtype=np.float64)
            n = theta.shape[0]
            if y.shape != (n,):
                raise InternalError('Target length %s does not match design with %d rows' % (y.shape, n))
            if p is not None and theta.shape[1] != p:
                raise InternalError('Experiments must share the library width')
            p = theta.shape[1]
            grams.append(theta.T @ theta / n)
            moments.append(theta.T @ y / n)
            energies.append(y @ y / n)
            sizes.append(n)
        if not grams:
            raise InternalError('A sparse problem needs at least one experiment')
        return cls(np.stack(grams), np.stack(moments), np.asarray(energies), np.asarray(sizes))

    @property
    def q(self):
        return self.gram.shape[0]

    @property
    def p(self):
        return self.gram.shape[1]

    def scaled(self, column_scales):
        """Problem on columns X_i * diag(column_scales[i])."""
        d = np.asarray(column_scales, dtype=np.float64).reshape(self.q, self.p)
        return GramProblem(self.gram * d[:, :, None] * d[:, None, :], self.moment * d, self.energy, self.n)


@dataclass
class FitResult:
    xi: np.ndarray
    lam: float
    labels: List[str]
    support: frozenset
    kkt_residual: float
    gap: float = 0.0
    n_iter: int = 0
    objective_trace: List[float] = field(default_factory=list)

    def group_norms(self):
        return np.linalg.norm(self.xi, axis=0)

    def active(self):
        return self.group_norms() > 0

    def rescaled(self, scales):
        """Divide coefficients by per-experiment column scales."""
        xi = self.xi / np.asarray(scales, dtype=np.float64).reshape(self.xi.shape)
        return FitResult(xi, self.lam, self.labels, self.support, self.kkt_residual, self.gap, self.n_iter,
                         self.objective_trace)


def _objective(problem, xi, grad, penalty):
    # grad = G xi - c, so xi' G xi - 2 c' xi = xi' (grad - c)
    smooth = 0.5 * np.sum(problem.energy + np.einsum('ij,ij->i', xi, grad - problem.moment))
    return smooth + np.sum(penalty * np.linalg.norm(xi, axis=0))


def _dual(problem, xi, grad, penalty):
    """Dual objective at the scaled residual point; grad = G xi - c."""
    norms = np.linalg.norm(grad, axis=0)
    with np.errstate(divide='ignore', invalid='ignore'):
        ratios = np.where(norms > 0, penalty / norms, np.inf)
    s = min(1.0, float(np.min(ratios))) if ratios.size else 1.0
    a = problem.energy
    c_xi = np.einsum('ij,ij->i', problem.moment, xi)
    xi_g_xi = np.einsum('ij,ij->i', xi, grad + problem.moment)
    residual_sq = a - 2.0 * c_xi + xi_g_xi
    residual_y = a - c_xi
    return float(np.sum(0.5 * a - 0.5 * (s * s * residual_sq - 2.0 * s * residual_y + a)))


def kkt_residual(problem, xi, penalty):
    """Largest violation of the block optimality conditions."""
    grad = np.einsum('ijk,ik->ij', problem.gram, xi) - problem.moment
    return _kkt(xi, grad, penalty)


def _kkt(xi, grad, penalty):
    norms_xi = np.linalg.norm(xi, axis=0)
    violation = np.maximum(np.linalg.norm(grad, axis=0) - penalty, 0.0)
    active = norms_xi > 0
    if np.any(active):
        direction = xi[:, active] / norms_xi[active]
        violation[active] = np.linalg.norm(grad[:, active] + penalty[active] * direction, axis=0)
    return float(np.max(violation)) if violation.size else 0.0


def _block_minimiser(z, h, c):
    """argmin_b sum(h b^2 / 2 - z b) + c ||b||_2 for diagonal curvature h >= 0."""
    norm_z = np.sqrt(z @ z)
    if norm_z <= c:
        return np.zeros_like(z)
    if z.size == 1:
        return soft_threshold(z, c) / h if h[0] > 0 else np.zeros_like(z)
    if np.all(h == h[0]):
        return z * (1.0 - c / norm_z) / h[0] if h[0] > 0 else np.zeros_like(z)
    if c == 0:
        return np.where(h > 0, z / np.where(h > 0, h, 1.0), 0.0)
    nonzero = z != 0
    z2 = z[nonzero] ** 2
    hz = h[nonzero]

    def secular(tau):
        return tau * tau * np.sum(z2 / (hz + tau) ** 2) - c * c

    upper = c * max(float(np.max(h)), np.finfo(np.float64).tiny) / (norm_z - c)
    while secular(upper) < 0:
        upper *= 2.0
    tau = optimize.brentq(secular, 0.0, upper, xtol=1e-300, rtol=4 * np.finfo(np.float64).eps)
    return z / (h + tau)


def _coordinate_descent(problem, penalty, xi0=None, tol=DEFAULT_TOL, kkt_tol=DEFAULT_KKT_TOL,
                        max_iter=DEFAULT_MAX_ITER, record_trace=False):
    q, p = problem.q, problem.p
    xi = np.zeros((q, p)) if xi0 is None else np.array(xi0, dtype=np.float64).reshape(q, p)
    grad = np.einsum('ijk,ik->ij', problem.gram, xi) - problem.moment
    curvature = np.diagonal(problem.gram, axis1=1, axis2=2).copy()
    reference = 0.5 * float(np.sum(problem.energy))
    kkt_scale = kkt_tol * max(1.0, float(np.max(np.abs(problem.moment))) if problem.moment.size else 1.0)
    trace = []

    def update(j):
        old = xi[:, j].copy()
        h = curvature[:, j]
        z = h * old - grad[:, j]
        new = _block_minimiser(z, h, penalty[j])
        delta = new - old
        change = float(np.max(np.abs(delta)))
        if change > 0:
            xi[:, j] = new
            grad[:, :] += problem.gram[:, :, j] * delta[:, None]
        return change

    gap = np.inf
    for sweep in range(1, max_iter + 1):
        # a zero block whose gradient is inside its penalty ball stays zero
        working = np.flatnonzero(np.any(xi != 0, axis=0) | (np.linalg.norm(grad, axis=0) > penalty))
        for j in working:
            update(j)
        active = np.flatnonzero(np.any(xi != 0, axis=0))
        for _ in range(ACTIVE_SWEEPS if active.size else 0):
            if max(update(j) for j in active) <= tol * float(np.max(np.abs(xi))):
                break
        # refresh to stop drift of the incrementally maintained gradient
        grad = np.einsum('ijk,ik->ij', problem.gram, xi) - problem.moment
        primal = _objective(problem, xi, grad, penalty)
        if record_trace:
            trace.append(primal)
        gap = primal - _dual(problem, xi, grad, penalty)
        if gap <= tol * reference and _kkt(xi, grad, penalty) <= kkt_scale:
            return xi, gap, sweep, trace
    raise ConvergenceError('Coordinate descent did not converge in %d sweeps (gap %.3e)' % (max_iter, gap),
                           gap=float(gap))


def solve_penalised(problem, lam, penalty_weights, labels, xi0=None, tol=DEFAULT_TOL, kkt_tol=DEFAULT_KKT_TOL,
                    max_iter=DEFAULT_MAX_ITER, record_trace=False):
    """Minimise the block-penalised problem with per-column penalty lam / penalty_weights."""
    if lam < 0:
        raise ConfigurationError('lambda must be non-negative, got %s' % lam)
    penalty = lam / np.asarray(penalty_weights, dtype=np.float64)
    if lam == 0:
        xi = np.vstack([_least_squares(problem.gram[i], problem.moment[i]) for i in range(problem.q)])
        gap, n_iter, trace = 0.0, 0, []
    elif np.all(problem.energy == 0):
        xi, gap, n_iter, trace = np.zeros((problem.q, problem.p)), 0.0, 0, []
    else:
        xi, gap, n_iter, trace = _coordinate_descent(problem, penalty, xi0, tol, kkt_tol, max_iter, record_trace)
    norms = np.linalg.norm(xi, axis=0)
    support = frozenset(label for label, norm in zip(labels, norms) if norm > 0)
    return FitResult(xi, float(lam), list(labels), support, kkt_residual(problem, xi, penalty), float(gap), n_iter,
                     trace)


def _least_squares(gram, moment):
    try:
        return linalg.solve(gram, moment, assume_a='sym')
    except linalg.LinAlgError:
        logger.warning('Singular Gram matrix at lambda=0, returning the minimum-norm solution')
        return linalg.lstsq(gram, moment)[0]


def library_problem(libraries, weights: Optional[AdaptiveWeights] = None) -> GramProblem:
    """Gram problem of one or more libraries, on columns divided by the adaptive weights."""
    problem = GramProblem.from_arrays([lib.theta for lib in libraries], [lib.dudt for lib in libraries])
    return problem if weights is None else problem.scaled(1.0 / weights.w_hat)


def adaptive_lasso_fit(lib, lam, weights: AdaptiveWeights, **solver_options) -> FitResult:
    """Weighted Lasso on theta_j / w_hat_j with penalty lam / W_j; coefficients in the library's units."""
    if weights.w_hat.shape != (1, lib.p):
        raise InternalError('Weights of shape %s do not fit a library with %d columns' % (weights.w_hat.shape, lib.p))
    problem = library_problem([lib], weights)
    fit = solve_penalised(problem, lam, weights.w_random[0], lib.labels, **solver_options)
    return fit.rescaled(weights.w_hat)


def group_lasso_fit(stacked, lam, weights: AdaptiveWeights, groups: Optional[GroupSpec] = None,
                    **solver_options) -> FitResult:
    """Randomised adaptive group Lasso over stacked experiments, one group per library column."""
    groups = groups or GroupSpec.by_label(stacked.labels, stacked.q)
    if weights.w_hat.shape != (stacked.q, stacked.p):
        raise InternalError('Weights of shape %s do not fit %d experiments with %d columns'
                            % (weights.w_hat.shape, stacked.q, stacked.p))
    order = np.argsort(groups.group_ids)
    if not np.array_equal(order, np.arange(stacked.p)):
        raise InternalError('Group ids must follow the library column order')
    problem = library_problem(stacked.libraries, weights)
    fit = solve_penalised(problem, lam, weights.group_weights(), stacked.labels, **solver_options)
    return fit.rescaled(weights.w_hat)


def lambda_max(problem: GramProblem, penalty_weights=None):
    """Smallest lambda with an all-zero solution: max_j ||c_.j||_2 * W_j."""
    norms = np.linalg.norm(problem.moment, axis=0)
    if penalty_weights is None:
        penalty_weights = np.ones(problem.p)
    return float(np.max(norms * np.asarray(penalty_weights, dtype=np.float64))) if norms.size else 0.0


def lambda_path(lam_max, epsilon=1e-3, m=50):
    if not 0 < epsilon < 1:
        raise ConfigurationError('Path length epsilon must be in (0, 1), got %s' % epsilon)
    if m < 2:
        raise ConfigurationError('A lambda path needs at least 2 values, got %s' % m)
    path = lam_max * np.logspace(0.0, np.log10(epsilon), m)
    path[0] = lam_max
    path[-1] = epsilon * lam_max
    return path

"""
Interaction kernels, potentials, species states and the cross-interaction energy

    E(rho) = sum_i sum_k P_i(x_k) r_ik m_k + 1/2 sum_{i,j} sum_{a,b} K_ij(x_a, x_b) r_jb m_b r_ia m_a

Kernel convolutions are dense sums over all node pairs. On periodic axes the second argument
of a kernel is the minimal image of y seen from x, i.e. K(x, x + wrap(y - x)).
"""
import functools
import logging
import math
import threading
from dataclasses import dataclass

import numpy as np

from nlielab.expression import Expression, coordinate_env, coordinate_names, parse_expression
from nlielab.validation import CheckResult, ValidationReport

logger = logging.getLogger(__name__)

KERNEL_PRESETS = ('quadratic', 'gaussian', 'zero')

# bytes; larger kernel tables are evaluated block wise on every use
DEFAULT_TABLE_MEMORY = 256 * 2 ** 20


class Kernel:
    """
    Interaction kernel K(x, y) with its gradient in the first argument.
    Evaluators take arrays of points (..., d) and broadcast.
    """
    def __init__(self, value, grad_x, name, is_zero=False):
        self._value = value
        self._grad_x = grad_x
        self.name = name
        self.is_zero = is_zero

    def value(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return np.broadcast_to(self._value(x, y), np.broadcast_shapes(x.shape, y.shape)[:-1])

    def grad_x(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return np.broadcast_to(self._grad_x(x, y), np.broadcast_shapes(x.shape, y.shape))

    def __call__(self, x, y):
        return self.value(x, y)

    def __repr__(self):
        return f'Kernel({self.name})'


class Potential:
    """
    External potential P(x) with gradient.
    """
    def __init__(self, value, grad, name, is_zero=False):
        self._value = value
        self._grad = grad
        self.name = name
        self.is_zero = is_zero

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self._value(x), x.shape[:-1])

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self._grad(x), x.shape)

    def __call__(self, x):
        return self.value(x)

    def __repr__(self):
        return f'Potential({self.name})'


def zero_kernel():
    return Kernel(lambda x, y: 0.0, lambda x, y: 0.0, 'zero', is_zero=True)


def quadratic_kernel(a):
    """
    K(x, y) = a |x - y|^2
    """
    a = float(a)
    return Kernel(lambda x, y: a * np.sum((x - y) ** 2, axis=-1),
                  lambda x, y: 2 * a * (x - y),
                  f'quadratic({a:g})', is_zero=a == 0)


def gaussian_kernel(a, sigma):
    """
    K(x, y) = -a exp(-|x - y|^2 / (2 sigma^2)), attractive for a > 0
    """
    a = float(a)
    sigma = float(sigma)
    if sigma <= 0:
        raise ValueError(f'Gaussian kernel width must be positive, got {sigma}.')

    def value(x, y):
        return -a * np.exp(-np.sum((x - y) ** 2, axis=-1) / (2 * sigma ** 2))

    def grad_x(x, y):
        diff = x - y
        return (a / sigma ** 2) * np.exp(-np.sum(diff ** 2, axis=-1) / (2 * sigma ** 2))[..., None] * diff

    return Kernel(value, grad_x, f'gaussian({a:g}, {sigma:g})', is_zero=a == 0)


def _gradient_terms(expr: Expression, prefix, dim):
    """
    Symbolic partial derivatives per axis. In 1D the bare name ("x") is an alias of "x1".
    """
    terms = []
    for name in coordinate_names(prefix, dim):
        derivative = expr.derivative(name)
        if dim == 1:
            alias = expr.derivative(prefix)
            terms.append((derivative, alias))
        else:
            terms.append((derivative,))
    return terms


def _env(dim, **points):
    env = {}
    for prefix, p in points.items():
        env.update(coordinate_env(prefix, p))
        if dim == 1:
            env[prefix] = p[..., 0]
    return env


def _evaluate_gradient(terms, env, shape):
    out = np.zeros(shape)
    for axis, derivatives in enumerate(terms):
        for derivative in derivatives:
            out[..., axis] += derivative.evaluate(env)
    return out


def expression_kernel(expr, dim):
    """
    Kernel from an expression in x1..xd, y1..yd (x and y in 1D), with symbolic gradient.
    """
    if isinstance(expr, str):
        names = coordinate_names('x', dim) + coordinate_names('y', dim) + (['x', 'y'] if dim == 1 else [])
        expr = parse_expression(expr, variables=names)
    terms = _gradient_terms(expr, 'x', dim)

    def value(x, y):
        return expr.evaluate(_env(dim, x=x, y=y))

    def grad_x(x, y):
        shape = np.broadcast_shapes(x.shape, y.shape)
        return _evaluate_gradient(terms, _env(dim, x=x, y=y), shape)

    return Kernel(value, grad_x, expr.source)


def zero_potential():
    return Potential(lambda x: 0.0, lambda x: 0.0, 'zero', is_zero=True)


def quadratic_potential(a):
    """
    P(x) = a |x|^2
    """
    a = float(a)
    return Potential(lambda x: a * np.sum(x ** 2, axis=-1), lambda x: 2 * a * x, f'quadratic({a:g})',
                     is_zero=a == 0)


def gaussian_potential(a, sigma):
    """
    P(x) = -a exp(-|x|^2 / (2 sigma^2))
    """
    a = float(a)
    sigma = float(sigma)
    if sigma <= 0:
        raise ValueError(f'Gaussian potential width must be positive, got {sigma}.')

    def value(x):
        return -a * np.exp(-np.sum(x ** 2, axis=-1) / (2 * sigma ** 2))

    def grad(x):
        return (a / sigma ** 2) * np.exp(-np.sum(x ** 2, axis=-1) / (2 * sigma ** 2))[..., None] * x

    return Potential(value, grad, f'gaussian({a:g}, {sigma:g})', is_zero=a == 0)


def expression_potential(expr, dim):
    """
    Potential from an expression in x1..xd (x in 1D), with symbolic gradient.
    """
    if isinstance(expr, str):
        expr = parse_expression(expr, variables=coordinate_names('x', dim) + (['x'] if dim == 1 else []))
    terms = _gradient_terms(expr, 'x', dim)

    def value(x):
        return expr.evaluate(_env(dim, x=x))

    def grad(x):
        return _evaluate_gradient(terms, _env(dim, x=x), x.shape)

    return Potential(value, grad, expr.source)


def _parse_preset(spec, dim, variables):
    if isinstance(spec, str):
        spec = parse_expression(spec, variables=variables + ['zero'], functions=KERNEL_PRESETS)
    return spec, spec.as_call()


def build_kernel(spec, dim) -> Kernel:
    """
    :param spec: "quadratic(a)", "gaussian(a, sigma)", "zero", an expression or a Kernel
    """
    if isinstance(spec, Kernel):
        return spec
    names = coordinate_names('x', dim) + coordinate_names('y', dim) + (['x', 'y'] if dim == 1 else [])
    expr, call = _parse_preset(spec, dim, names)
    if call is not None:
        name, args = call
        if name == 'zero' and not args:
            return zero_kernel()
        if name == 'quadratic' and len(args) == 1:
            return quadratic_kernel(*args)
        if name == 'gaussian' and len(args) == 2:
            return gaussian_kernel(*args)
        if name in KERNEL_PRESETS:
            raise ValueError(f'Wrong number of arguments for kernel preset "{expr.source}".')
    return expression_kernel(expr, dim)


def build_potential(spec, dim) -> Potential:
    """
    :param spec: "quadratic(a)", "gaussian(a, sigma)", "zero", an expression or a Potential
    """
    if isinstance(spec, Potential):
        return spec
    names = coordinate_names('x', dim) + (['x'] if dim == 1 else [])
    expr, call = _parse_preset(spec, dim, names)
    if call is not None:
        name, args = call
        if name == 'zero' and not args:
            return zero_potential()
        if name == 'quadratic' and len(args) == 1:
            return quadratic_potential(*args)
        if name == 'gaussian' and len(args) == 2:
            return gaussian_potential(*args)
        if name in KERNEL_PRESETS:
            raise ValueError(f'Wrong number of arguments for potential preset "{expr.source}".')
    return expression_potential(expr, dim)


class KernelSet:
    """
    N x N interaction kernels K_ik.

    :param kernels: nested list, kernels[i][k] = K_ik
    :param growth_constant: declared C_K, checked by validate_kernels if given
    :param lipschitz_constant: declared L_K, checked by validate_kernels if given
    """
    def __init__(self, kernels, growth_constant=None, lipschitz_constant=None):
        kernels = [list(row) for row in kernels]
        n = len(kernels)
        if n == 0 or any(len(row) != n for row in kernels):
            raise ValueError(f'Kernel matrix must be square and non empty, got rows of length '
                             f'{[len(row) for row in kernels]}.')
        self._kernels = kernels
        self.growth_constant = growth_constant
        self.lipschitz_constant = lipschitz_constant

    @classmethod
    def single(cls, kernel):
        return cls([[kernel]])

    @property
    def n_species(self):
        return len(self._kernels)

    def __getitem__(self, index):
        i, k = index
        return self._kernels[i][k]

    def pairs(self):
        for i in range(self.n_species):
            for k in range(self.n_species):
                yield i, k, self._kernels[i][k]

    def is_zero(self):
        return all(kernel.is_zero for _, _, kernel in self.pairs())

    def permuted(self, order):
        """
        :returns KernelSet with species relabelled, new species a is old species order[a]
        """
        return KernelSet([[self._kernels[i][k] for k in order] for i in order],
                         self.growth_constant, self.lipschitz_constant)


class PotentialSet:
    def __init__(self, potentials):
        self._potentials = list(potentials)

    @classmethod
    def zeros(cls, n_species):
        return cls([zero_potential() for _ in range(n_species)])

    @property
    def n_species(self):
        return len(self._potentials)

    def __getitem__(self, i):
        return self._potentials[i]

    def __iter__(self):
        return iter(self._potentials)

    def permuted(self, order):
        return PotentialSet([self._potentials[i] for i in order])


class SpeciesState:
    """
    Densities r_i(x_k) >= 0 of N species with respect to the base measure, shape (N, n).
    """
    def __init__(self, densities):
        densities = np.array(densities, dtype=float)
        if densities.ndim == 1:
            densities = densities[None, :]
        if densities.ndim != 2:
            raise ValueError(f'Species densities must have shape (N, n), got {densities.shape}.')
        if not np.all(np.isfinite(densities)):
            raise ValueError('Species densities must be finite.')
        if np.any(densities < 0):
            raise ValueError(f'Species densities must be non negative, found {densities.min()!r}.')
        densities.setflags(write=False)
        self.densities = densities

    @classmethod
    def from_profiles(cls, profiles, weights):
        """
        Normalises non negative profiles (N, n) to unit mass with respect to the node weights.
        """
        profiles = np.atleast_2d(np.asarray(profiles, dtype=float))
        masses = profiles @ np.asarray(weights)
        if np.any(masses <= 0):
            raise ValueError(f'Initial profiles must have positive mass, got {masses.tolist()}.')
        return cls(profiles / masses[:, None])

    @classmethod
    def point_masses(cls, nodes, weights):
        """
        Species i is a unit point mass at node nodes[i].
        """
        weights = np.asarray(weights)
        densities = np.zeros((len(nodes), len(weights)))
        for i, k in enumerate(nodes):
            densities[i, k] = 1 / weights[k]
        return cls(densities)

    @property
    def n_species(self):
        return self.densities.shape[0]

    @property
    def n_nodes(self):
        return self.densities.shape[1]

    def __getitem__(self, i):
        return self.densities[i]

    def masses(self, weights):
        return self.densities @ np.asarray(weights)

    def weighted(self, weights):
        """
        :returns node masses r_ik m_k, shape (N, n)
        """
        return self.densities * np.asarray(weights)[None, :]

    def min_density(self):
        return float(self.densities.min()) if self.densities.size else 0.0

    def check_against(self, weights, mass_tolerance=1e-8):
        """
        :raises ValueError if the node count differs or a species is not a probability vector
        """
        weights = np.asarray(weights)
        if self.n_nodes != len(weights):
            raise ValueError(f'State has {self.n_nodes} nodes, base measure has {len(weights)}.')
        masses = self.masses(weights)
        if np.any(np.abs(masses - 1) > mass_tolerance):
            raise ValueError(f'Species masses must be 1, got {masses.tolist()}.')

    def __repr__(self):
        return f'SpeciesState(N={self.n_species}, n={self.n_nodes})'


class KernelTable:
    """
    Evaluates the kernel convolutions sum_b K_ik(x_a, x_b) f_b (and the gradient version) on the nodes
    of one grid. Kernel matrices are cached when they fit into memory_limit bytes.
    """
    def __init__(self, ks: KernelSet, grid, memory_limit=DEFAULT_TABLE_MEMORY, cache=True):
        self.ks = ks
        self.grid = grid
        self.positions = grid.centers
        self.memory_limit = memory_limit
        self.cache = cache
        self._values = {}
        self._grads = {}
        self._lock = threading.Lock()

    def _rows(self):
        n, d = self.positions.shape
        per_row = 8 * n * d
        return max(1, min(n, self.memory_limit // (4 * per_row)))

    def _block(self, kernel, start, stop, gradient):
        x = self.positions[start:stop, None, :]
        y = x + self.grid.wrap(self.positions[None, :, :] - x)
        return kernel.grad_x(x, y) if gradient else kernel.value(x, y)

    def _matrix(self, kernel, gradient):
        n, d = self.positions.shape
        size = 8 * n * n * (d if gradient else 1)
        if not self.cache or size > self.memory_limit:
            return None
        store = self._grads if gradient else self._values
        key = id(kernel)
        matrix = store.get(key)
        if matrix is None:
            with self._lock:
                matrix = store.get(key)
                if matrix is None:
                    logger.debug(f'Caching {"gradient" if gradient else "value"} table of {kernel.name} '
                                 f'({size / 2 ** 20:.1f} MiB)')
                    matrix = store[key] = np.ascontiguousarray(self._block(kernel, 0, n, gradient))
        return matrix

    def fill(self):
        """
        Caches the value and gradient tables of every non zero kernel that fits into memory_limit.
        """
        n = self.ks.n_species
        for kernel in {id(self.ks[i, k]): self.ks[i, k] for i in range(n) for k in range(n)}.values():
            if not kernel.is_zero:
                self._matrix(kernel, gradient=False)
                self._matrix(kernel, gradient=True)
        return self

    @property
    def cached_tables(self):
        return len(self._values) + len(self._grads)

    def convolve(self, i, k, node_masses):
        """
        :param node_masses: (n,) e.g. r_kb m_b
        :returns (n,) sum_b K_ik(x_a, x_b) node_masses_b
        """
        kernel = self.ks[i, k]
        n = len(self.positions)
        if kernel.is_zero:
            return np.zeros(n)
        matrix = self._matrix(kernel, gradient=False)
        if matrix is not None:
            return matrix @ node_masses
        out = np.empty(n)
        rows = self._rows()
        for start in range(0, n, rows):
            stop = min(n, start + rows)
            out[start:stop] = self._block(kernel, start, stop, False) @ node_masses
        return out

    def convolve_grad(self, i, k, node_masses):
        """
        :returns (n, d) sum_b grad_x K_ik(x_a, x_b) node_masses_b
        """
        kernel = self.ks[i, k]
        n, d = self.positions.shape
        if kernel.is_zero:
            return np.zeros((n, d))
        matrix = self._matrix(kernel, gradient=True)
        if matrix is not None:
            return np.einsum('abd,b->ad', matrix, node_masses)
        out = np.empty((n, d))
        rows = self._rows()
        for start in range(0, n, rows):
            stop = min(n, start + rows)
            out[start:stop] = np.einsum('abd,b->ad', self._block(kernel, start, stop, True), node_masses)
        return out


@functools.lru_cache(maxsize=2)
def kernel_table(ks: KernelSet, grid) -> KernelTable:
    """
    Shared table for a kernel set on a grid, reused between calls that do not pass a table.
    """
    return KernelTable(ks, grid)


def _check_sizes(ks, ps, state, bm):
    if state.n_nodes != bm.n_nodes:
        raise ValueError(f'State has {state.n_nodes} nodes, base measure has {bm.n_nodes}.')
    if not (ks.n_species == ps.n_species == state.n_species):
        raise ValueError(f'Species count mismatch: kernels {ks.n_species}, potentials {ps.n_species}, '
                         f'state {state.n_species}.')


def variational_derivative(ks: KernelSet, ps: PotentialSet, state: SpeciesState, bm, i, table=None):
    """
    phi_i(x_k) = P_i(x_k) + sum_j sum_b K_ij(x_k, x_b) r_jb m_b

    :raises ValueError if i is not a species index
    """
    _check_sizes(ks, ps, state, bm)
    if not 0 <= i < state.n_species:
        raise ValueError(f'Species index {i} out of range 0..{state.n_species - 1}.')
    table = table or kernel_table(ks, bm.grid)
    weighted = state.weighted(bm.weights)
    potential = ps[i]
    phi = np.zeros(bm.n_nodes) if potential.is_zero else np.array(potential.value(bm.positions), dtype=float)
    for j in range(state.n_species):
        phi += table.convolve(i, j, weighted[j])
    return phi


def variational_derivatives(ks: KernelSet, ps: PotentialSet, state: SpeciesState, bm, table=None):
    """
    :returns (N, n) array of all phi_i
    """
    return np.stack([variational_derivative(ks, ps, state, bm, i, table) for i in range(state.n_species)])


def energy(ks: KernelSet, ps: PotentialSet, state: SpeciesState, bm, table=None):
    """
    Potential plus cross-interaction energy by double quadrature sum.
    """
    _check_sizes(ks, ps, state, bm)
    table = table or kernel_table(ks, bm.grid)
    weighted = state.weighted(bm.weights)
    total = 0.0
    for i in range(state.n_species):
        if not ps[i].is_zero:
            total += float(np.dot(ps[i].value(bm.positions), weighted[i]))
        for k in range(state.n_species):
            if not ks[i, k].is_zero:
                total += 0.5 * float(np.dot(weighted[i], table.convolve(i, k, weighted[k])))
    return total


def second_moments(state: SpeciesState, positions, weights):
    """
    :returns (N,) sum_k |x_k|^2 r_ik m_k
    """
    r2 = np.sum(np.asarray(positions) ** 2, axis=-1)
    return state.weighted(weights) @ r2


@dataclass(frozen=True)
class KernelSamplePlan:
    """
    :param points: (m, d) sample points used for both arguments
    :param shells: radii of the growth shells for the K4 check
    :param shell_samples: points per growth shell
    :param step: finite difference step
    """
    points: np.ndarray
    shells: tuple = (1.0, 2.0, 4.0, 8.0, 16.0)
    shell_samples: int = 64
    step: float = 1e-5
    seed: int = 0

    @classmethod
    def default(cls, dim, radius=2.0, count=48, seed=0):
        rng = np.random.default_rng(seed)
        return cls(rng.uniform(-radius, radius, (count, dim)), seed=seed)


def _shell_points(rng, dim, radius, count):
    directions = rng.normal(size=(count, dim))
    directions /= np.linalg.norm(directions, axis=-1, keepdims=True)
    return radius * directions


def _growth_exponent(shells, maxima):
    """
    log-log slope of max |grad K| against 1 + 2R over the two outermost shells
    """
    (r0, m0), (r1, m1) = list(zip(shells, maxima))[-2:]
    if m1 <= 0:
        return -math.inf
    if m0 <= 0:
        return math.inf
    return math.log(m1 / m0) / math.log((1 + 2 * r1) / (1 + 2 * r0))


def validate_kernels(ks: KernelSet, sampling: KernelSamplePlan = None, dim=1, rtol=1e-10):
    """
    Sampled checks: K2 exchange symmetry, cross symmetry K_ik = K_ki, K3 empirical Lipschitz type
    constant, K4 linear growth of the gradient, and finite difference consistency of the gradients.
    """
    plan = sampling or KernelSamplePlan.default(dim)
    points = np.asarray(plan.points, dtype=float)
    dim = points.shape[-1]
    x = points[:, None, :]
    y = points[None, :, :]
    rng = np.random.default_rng(plan.seed)
    report = ValidationReport('kernels')

    for i, k, kernel in ks.pairs():
        tag = f'K{i + 1}{k + 1}'
        kxy = kernel.value(x, y)
        kyx = kernel.value(y, x)
        scale = 1 + np.abs(kxy)
        asym = float(np.max(np.abs(kxy - kyx) / scale))
        report.add(CheckResult(f'K2_exchange_symmetry {tag}', passed=asym <= rtol, worst_margin=rtol - asym,
                               detail=f'max rel |K(x,y) - K(y,x)| = {asym:.3g}'))

        if i < k:
            other = ks[k, i].value(x, y)
            cross = float(np.max(np.abs(kxy - other) / scale))
            report.add(CheckResult(f'cross_symmetry {tag}', passed=cross <= rtol, worst_margin=rtol - cross,
                                   detail=f'max rel |K{i + 1}{k + 1} - K{k + 1}{i + 1}| = {cross:.3g}'))

        # K3: |K(x,y) - K(x',y')| <= L (r v r^2), r = |x - x'| + |y - y'|
        m = len(points)
        first = rng.integers(0, m, (4 * m, 2))
        second = rng.integers(0, m, (4 * m, 2))
        r = (np.linalg.norm(points[first[:, 0]] - points[second[:, 0]], axis=-1)
             + np.linalg.norm(points[first[:, 1]] - points[second[:, 1]], axis=-1))
        keep = r > 0
        diff = np.abs(kernel.value(points[first[keep, 0]], points[first[keep, 1]])
                      - kernel.value(points[second[keep, 0]], points[second[keep, 1]]))
        empirical = float(np.max(diff / np.maximum(r[keep], r[keep] ** 2))) if np.any(keep) else 0.0
        declared = ks.lipschitz_constant
        report.add(CheckResult(
            f'K3_lipschitz {tag}', passed=declared is None or empirical <= declared,
            worst_margin=(declared - empirical) if declared is not None else 0.0,
            detail=f'empirical L_K = {empirical:.4g}' + (f' vs declared {declared:g}' if declared is not None else '')))

        # K4 on growing shells
        maxima, ratios = [], []
        for radius in plan.shells:
            xs = _shell_points(rng, dim, radius, plan.shell_samples)
            ys = _shell_points(rng, dim, radius, plan.shell_samples)
            norm = np.linalg.norm(kernel.grad_x(xs, ys), axis=-1)
            maxima.append(float(np.max(norm)))
            ratios.append(float(np.max(norm / (1 + 2 * radius))))
        exponent = _growth_exponent(plan.shells, maxima)
        empirical_ck = max(ratios)
        declared = ks.growth_constant
        passed = exponent <= 1.25 and (declared is None or empirical_ck <= declared)
        report.add(CheckResult(
            f'K4_growth {tag}', passed=passed, worst_margin=1.25 - exponent,
            detail=f'growth exponent {exponent:.3g}, empirical C_K = {empirical_ck:.4g}'))

        # central differences against the supplied gradient
        h = plan.step
        xs, ys = np.broadcast_arrays(x, y)
        grad = kernel.grad_x(xs, ys)
        worst = 0.0
        for axis in range(dim):
            e = np.zeros(dim)
            e[axis] = h
            fd = (kernel.value(xs + e, ys) - kernel.value(xs - e, ys)) / (2 * h)
            worst = max(worst, float(np.max(np.abs(fd - grad[..., axis]) / (1 + np.abs(grad[..., axis])))))
        tol = 1e-4
        report.add(CheckResult(f'gradient_consistency {tag}', passed=worst <= tol, worst_margin=tol - worst,
                               detail=f'max rel finite difference error {worst:.3g} (h={h:g})'))
    return report


def validate_potentials(ps: PotentialSet, sampling: KernelSamplePlan = None, dim=1):
    """
    Potentials must be finite on the samples and match their gradients.
    """
    plan = sampling or KernelSamplePlan.default(dim)
    points = np.asarray(plan.points, dtype=float)
    dim = points.shape[-1]
    report = ValidationReport('potentials')
    for i, potential in enumerate(ps):
        values = potential.value(points)
        report.add(CheckResult(f'finite P{i + 1}', passed=bool(np.all(np.isfinite(values))), worst_margin=0.0,
                               detail=potential.name))
        grad = potential.grad(points)
        worst = 0.0
        for axis in range(dim):
            e = np.zeros(dim)
            e[axis] = plan.step
            fd = (potential.value(points + e) - potential.value(points - e)) / (2 * plan.step)
            worst = max(worst, float(np.max(np.abs(fd - grad[..., axis]) / (1 + np.abs(grad[..., axis])))))
        report.add(CheckResult(f'gradient_consistency P{i + 1}', passed=worst <= 1e-4, worst_margin=1e-4 - worst,
                               detail=f'max rel finite difference error {worst:.3g}'))
    return report

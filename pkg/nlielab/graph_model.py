"""
Base measure, edge connectivity and the epsilon-scaled graphs built from them.

Nodes are the cell centres of a regular grid (periodic torus by default), the
node weight is midpoint quadrature of the density, m_k = density(x_k) * cell volume.
"""
import itertools
import logging
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import integrate, sparse
from scipy.special import gamma

from nlielab.expression import Expression, coordinate_env, parse_expression, coordinate_names
from nlielab.validation import CheckResult, ValidationReport

logger = logging.getLogger(__name__)


def unit_ball_volume(dim):
    return math.pi ** (dim / 2) / gamma(dim / 2 + 1)


@dataclass(frozen=True)
class SpatialGrid:
    """
    Regular grid of cells, node k is the centre of cell k (C-order over the axes).

    :param dim: 1 or 2
    :param bounds: per axis interval (lo, hi)
    :param cells: cells per axis
    :param periodic: torus if True, bounded box otherwise
    """
    dim: int
    bounds: tuple
    cells: tuple
    periodic: bool = True

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f'Grid dimension must be 1 or 2, got {self.dim}.')
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        cells = tuple(int(c) for c in self.cells)
        if len(bounds) != self.dim or len(cells) != self.dim:
            raise ValueError(f'Expected {self.dim} bounds and cell counts, got {bounds} and {cells}.')
        for lo, hi in bounds:
            if not hi > lo:
                raise ValueError(f'Empty axis interval ({lo}, {hi}).')
        for c in cells:
            if c < 1:
                raise ValueError(f'Cells per axis must be positive, got {cells}.')
        object.__setattr__(self, 'bounds', bounds)
        object.__setattr__(self, 'cells', cells)

    @property
    def shape(self):
        return self.cells

    @property
    def n_nodes(self):
        return int(np.prod(self.cells))

    @cached_property
    def lower(self):
        return np.array([lo for lo, _ in self.bounds])

    @cached_property
    def lengths(self):
        return np.array([hi - lo for lo, hi in self.bounds])

    @cached_property
    def spacing(self):
        return self.lengths / np.array(self.cells)

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    @cached_property
    def centers(self):
        """
        :returns (n, d) array of cell centres
        """
        axes = [self.lower[a] + (np.arange(self.cells[a]) + 0.5) * self.spacing[a] for a in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing='ij')
        out = np.stack([m.ravel() for m in mesh], axis=-1)
        out.setflags(write=False)
        return out

    @cached_property
    def multi_indices(self):
        out = np.indices(self.cells).reshape(self.dim, -1).T
        out.setflags(write=False)
        return out

    def wrap(self, displacement):
        """
        Minimal image of displacements (..., d) on periodic grids, identity otherwise.
        """
        displacement = np.asarray(displacement, dtype=float)
        if not self.periodic:
            return displacement
        return displacement - self.lengths * np.round(displacement / self.lengths)

    def wrap_points(self, points):
        """
        Maps points back into the fundamental domain on periodic grids.
        """
        points = np.asarray(points, dtype=float)
        if not self.periodic:
            return points
        return self.lower + np.mod(points - self.lower, self.lengths)

    def displacement(self, x, y):
        """
        :returns y - x, minimal image on periodic grids
        """
        return self.wrap(np.asarray(y, dtype=float) - np.asarray(x, dtype=float))

    def boundary_distance(self):
        """
        :returns per node distance to the box boundary (inf on the torus)
        """
        if self.periodic:
            return np.full(self.n_nodes, np.inf)
        upper = self.lower + self.lengths
        return np.min(np.minimum(self.centers - self.lower, upper - self.centers), axis=1)

    def interior_mask(self, margin):
        """
        Nodes at distance >= margin from the boundary; every node on the torus.
        """
        return self.boundary_distance() >= margin


class BaseMeasure:
    """
    Base measure with Lebesgue density, sampled at the grid nodes.
    """
    def __init__(self, grid: SpatialGrid, density):
        density = np.array(density, dtype=float).reshape(-1)
        if density.shape[0] != grid.n_nodes:
            raise ValueError(f'Density has {density.shape[0]} values, grid has {grid.n_nodes} nodes.')
        density.setflags(write=False)
        self.grid = grid
        self.density = density

        weights = density * grid.cell_volume
        weights.setflags(write=False)
        self.weights = weights

    @property
    def n_nodes(self):
        return self.grid.n_nodes

    @property
    def positions(self):
        return self.grid.centers

    @property
    def dim(self):
        return self.grid.dim

    def total_mass(self):
        return float(np.sum(self.weights))

    def __repr__(self):
        return f'BaseMeasure({self.grid}, mass={self.total_mass():.6g})'


def evaluate_on_points(spec, points, prefix='x'):
    """
    Evaluates a density like specification at points (n, d).

    :param spec: number, callable(points) -> values, Expression or expression string in x1..xd
    :returns (n,) float array
    """
    points = np.asarray(points, dtype=float)
    n, dim = points.shape
    if isinstance(spec, str):
        spec = parse_expression(spec, variables=coordinate_names(prefix, dim))
    if isinstance(spec, Expression):
        values = spec.evaluate(coordinate_env(prefix, points))
    elif callable(spec):
        values = spec(points)
    else:
        values = spec
    return np.broadcast_to(np.asarray(values, dtype=float), (n,)).copy()


def build_base_measure(grid: SpatialGrid, density_spec) -> BaseMeasure:
    """
    :param grid: spatial grid
    :param density_spec: number, callable, Expression or expression string in x1..xd
    :returns BaseMeasure with weights density(centre) * cell volume
    :raises ValueError naming the first node with a non positive or non finite density
    """
    density = evaluate_on_points(density_spec, grid.centers)
    bad = np.flatnonzero(~np.isfinite(density) | (density <= 0))
    if bad.size:
        k = int(bad[0])
        raise ValueError(f'Base measure density must be positive and finite: node {k} at '
                         f'{grid.centers[k].tolist()} has value {density[k]!r} '
                         f'({bad.size} offending nodes).')
    return BaseMeasure(grid, density)


def lebesgue_measure(grid: SpatialGrid) -> BaseMeasure:
    return BaseMeasure(grid, np.ones(grid.n_nodes))


def _modulus_table(distances, differences, deltas):
    table = []
    for delta in deltas:
        mask = distances <= delta * (1 + 1e-12)
        table.append((float(delta), float(np.max(differences[mask])) if np.any(mask) else 0.0))
    return table


def _default_deltas(grid: SpatialGrid, count=8):
    h = float(np.min(grid.spacing))
    limit = float(np.max(grid.lengths)) / (2 if grid.periodic else 1)
    deltas = [h * 2 ** i for i in range(count) if h * 2 ** i <= limit]
    return deltas or [h]


def validate_base_measure(bm: BaseMeasure, declared_bounds, sample_pairs=2000, seed=0, deltas=None):
    """
    Checks the density bounds c_mu <= density <= C_mu (hard) and samples the modulus of continuity.

    :param declared_bounds: (c_mu, C_mu)
    :param sample_pairs: number of random node pairs used next to all axis neighbour pairs
    :returns ValidationReport with table "omega_mu": [(delta, max |density(x) - density(y)| over |x-y| <= delta)]
    """
    lower, upper = (float(b) for b in declared_bounds)
    if not (lower > 0 and upper >= lower):
        raise ValueError(f'Declared density bounds must satisfy 0 < c_mu <= C_mu, got ({lower}, {upper}).')

    report = ValidationReport('base_measure')
    density = bm.density

    margins = np.minimum(density - lower, upper - density)
    offenders = np.flatnonzero(margins < 0)
    report.add(CheckResult(
        'mu2_bounds', passed=offenders.size == 0, worst_margin=float(np.min(margins)),
        detail=(f'density range [{density.min():.6g}, {density.max():.6g}] vs declared [{lower:.6g}, {upper:.6g}]'
                + (f', {offenders.size} nodes outside, first node {int(offenders[0])}' if offenders.size else '')),
        hard=True, offenders=tuple(int(k) for k in offenders[:20])))

    report.add(CheckResult(
        'weights_positive', passed=bool(np.all(bm.weights > 0)), worst_margin=float(np.min(bm.weights)),
        detail=f'min weight {np.min(bm.weights):.6g}', hard=True))

    # modulus of continuity on axis neighbours plus random pairs
    grid = bm.grid
    firsts, seconds = [], []
    strides = np.cumprod((1,) + grid.cells[::-1])[:-1][::-1]
    idx = grid.multi_indices
    for a in range(grid.dim):
        target = idx.copy()
        target[:, a] += 1
        if grid.periodic:
            target[:, a] %= grid.cells[a]
            keep = np.ones(len(idx), dtype=bool)
        else:
            keep = target[:, a] < grid.cells[a]
        firsts.append(np.flatnonzero(keep))
        seconds.append(target[keep] @ strides)
    rng = np.random.default_rng(seed)
    if sample_pairs > 0 and bm.n_nodes > 1:
        firsts.append(rng.integers(0, bm.n_nodes, sample_pairs))
        seconds.append(rng.integers(0, bm.n_nodes, sample_pairs))
    first = np.concatenate(firsts)
    second = np.concatenate(seconds)
    if first.size:
        distances = np.linalg.norm(grid.displacement(grid.centers[first], grid.centers[second]), axis=-1)
        differences = np.abs(density[first] - density[second])
        report.tables['omega_mu'] = _modulus_table(distances, differences, deltas or _default_deltas(grid))
    return report


class Connectivity:
    """
    Edge connectivity theta(z, w) >= 0 in midpoint z and displacement w, with its structural constants.

    :param evaluator: vectorised callable (z, w) -> values, z and w of shape (..., d)
    :param dim: spatial dimension
    :param support_radius: C_supp, theta(z, w) = 0 for |w| > C_supp
    :param moment_bound: C_mom, |w|^2 theta(z, w) <= C_mom
    :param nondegeneracy: c_nd, int |w . xi|^2 theta(z, w) dw >= c_nd |xi|^2
    :param z_invariant: theta does not depend on z
    """
    def __init__(self, evaluator, dim, support_radius, moment_bound, nondegeneracy, name='connectivity',
                 z_invariant=False):
        if support_radius <= 0:
            raise ValueError(f'Support radius must be positive, got {support_radius}.')
        self._evaluator = evaluator
        self.dim = int(dim)
        self.support_radius = float(support_radius)
        self.moment_bound = float(moment_bound)
        self.nondegeneracy = float(nondegeneracy)
        self.name = name
        self.z_invariant = z_invariant

    def __call__(self, z, w):
        z = np.asarray(z, dtype=float)
        w = np.asarray(w, dtype=float)
        shape = np.broadcast_shapes(z.shape[:-1], w.shape[:-1])
        return np.broadcast_to(np.asarray(self._evaluator(z, w), dtype=float), shape)

    def __repr__(self):
        return f'Connectivity({self.name}, C_supp={self.support_radius:g}, C_mom={self.moment_bound:g}, ' \
               f'c_nd={self.nondegeneracy:g})'


def ball_indicator(r2, boundary=1.0):
    """
    1 inside the unit level set, boundary on it, 0 outside.
    """
    return np.where(r2 < 1, 1.0, np.where(r2 == 1, boundary, 0.0))


def indicator_ball(value, dim):
    """
    theta(z, w) = value * 1{|w| <= 1}, closed ball.
    """
    return _ball(value, dim, 1.0, 'indicator_ball')


def trapezoid_ball(value, dim):
    """
    theta(z, w) = value on |w| < 1 and value / 2 on |w| = 1.

    On a lattice with eps a multiple of the spacing the sphere carries nodes, and the half weight there
    is the trapezoidal rule for the moments of the closed ball.
    """
    return _ball(value, dim, 0.5, 'trapezoid_ball')


def _ball(value, dim, boundary, name):
    value = float(value)

    def evaluator(z, w):
        return value * ball_indicator(np.sum(w * w, axis=-1), boundary)

    return Connectivity(evaluator, dim, support_radius=1.0, moment_bound=value,
                        nondegeneracy=value * unit_ball_volume(dim) / (dim + 2),
                        name=f'{name}({value:g})', z_invariant=True)


def gaussian_cutoff(sigma, radius, dim):
    """
    theta(z, w) = exp(-|w|^2 / (2 sigma^2)) on |w| < radius, half of it on |w| = radius.
    """
    sigma = float(sigma)
    radius = float(radius)
    if sigma <= 0 or radius <= 0:
        raise ValueError(f'gaussian_cutoff needs positive sigma and radius, got ({sigma}, {radius}).')

    def evaluator(z, w):
        r2 = np.sum(w * w, axis=-1)
        return np.exp(-r2 / (2 * sigma ** 2)) * ball_indicator(r2 / radius ** 2, boundary=0.5)

    r_star = min(math.sqrt(2) * sigma, radius)
    moment = r_star ** 2 * math.exp(-r_star ** 2 / (2 * sigma ** 2))
    # isotropic: int |w.xi|^2 theta dw = |S^{d-1}| / d * int_0^R r^{d+1} exp(-r^2/2s^2) dr
    sphere = 2 * math.pi ** (dim / 2) / gamma(dim / 2)
    radial, _ = integrate.quad(lambda r: r ** (dim + 1) * math.exp(-r * r / (2 * sigma ** 2)), 0, radius)
    return Connectivity(evaluator, dim, support_radius=radius, moment_bound=moment,
                        nondegeneracy=sphere * radial / dim,
                        name=f'gaussian_cutoff({sigma:g}, {radius:g})', z_invariant=True)


def expression_connectivity(expr, dim, support_radius, moment_bound, nondegeneracy):
    """
    Connectivity from an expression in z1..zd, w1..wd with user declared constants.
    """
    if isinstance(expr, str):
        expr = parse_expression(expr, variables=coordinate_names('z', dim) + coordinate_names('w', dim))

    def evaluator(z, w):
        env = coordinate_env('z', z)
        env.update(coordinate_env('w', w))
        return expr.evaluate(env)

    z_invariant = not any(name.startswith('z') for name in expr.identifiers())
    return Connectivity(evaluator, dim, support_radius, moment_bound, nondegeneracy, name=str(expr.source),
                        z_invariant=z_invariant)


def scaled_edge_weight(conn: Connectivity, epsilon, x, y, grid: SpatialGrid = None):
    """
    eta^eps(x, y) = eps^-(d+2) theta((x + y)/2, (x - y)/eps)

    :param grid: if given and periodic, x - y is the minimal image and the midpoint is wrapped
    :raises ValueError for x == y or non positive epsilon
    """
    if epsilon <= 0:
        raise ValueError(f'Epsilon must be positive, got {epsilon}.')
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    dxy = grid.displacement(y, x) if grid is not None else x - y
    if not np.any(dxy):
        raise ValueError(f'Edge weights are not defined on the diagonal (x = y = {x.tolist()}).')
    midpoint = y + dxy / 2
    if grid is not None:
        midpoint = grid.wrap_points(midpoint)
    dim = x.shape[-1]
    return float(epsilon ** -(dim + 2) * conn(midpoint, dxy / epsilon))


class Graph:
    """
    Weighted graph on the nodes of a base measure. Each unordered edge {k, l} is stored once,
    oriented k -> l, together with its weight eta(x_k, x_l) = eta(x_l, x_k) and the displacement x_l - x_k.
    """
    def __init__(self, base: BaseMeasure, epsilon, sources, targets, eta, displacements, connectivity=None):
        sources = np.asarray(sources, dtype=np.int64)
        targets = np.asarray(targets, dtype=np.int64)
        eta = np.asarray(eta, dtype=float)
        displacements = np.asarray(displacements, dtype=float).reshape(len(eta), base.dim)
        if not (sources.shape == targets.shape == eta.shape):
            raise ValueError('Edge arrays must have equal length.')
        if np.any(sources == targets):
            raise ValueError('Graphs have no self loops.')
        if np.any(eta < 0):
            raise ValueError(f'Edge weights must be non negative, found {eta.min()!r}.')
        for arr in (sources, targets, eta, displacements):
            arr.setflags(write=False)

        self.base = base
        self.epsilon = float(epsilon)
        self.connectivity = connectivity
        self.sources = sources
        self.targets = targets
        self.eta = eta
        self.displacements = displacements

        n, m = base.n_nodes, len(eta)
        columns = np.arange(m)
        # node x edge indicator matrices for per node reductions
        self._at_source = sparse.csr_matrix((np.ones(m), (sources, columns)), shape=(n, m))
        self._at_target = sparse.csr_matrix((np.ones(m), (targets, columns)), shape=(n, m))

    @classmethod
    def from_edges(cls, base: BaseMeasure, edges, eta, epsilon=1.0):
        """
        Graph with explicitly given edges (k, l) and weights, e.g. for small hand made fixtures.
        """
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        positions = base.positions
        displacements = base.grid.displacement(positions[edges[:, 0]], positions[edges[:, 1]])
        return cls(base, epsilon, edges[:, 0], edges[:, 1], eta, displacements)

    @property
    def n_nodes(self):
        return self.base.n_nodes

    @property
    def n_edges(self):
        return len(self.eta)

    @property
    def positions(self):
        return self.base.positions

    @property
    def weights(self):
        return self.base.weights

    @property
    def grid(self):
        return self.base.grid

    def sum_at_sources(self, edge_values):
        """
        :param edge_values: (..., E)
        :returns (..., n): per node sum over edges leaving the node in stored orientation
        """
        return np.asarray(self._at_source @ np.asarray(edge_values).T).T

    def sum_at_targets(self, edge_values):
        return np.asarray(self._at_target @ np.asarray(edge_values).T).T

    def neighbors(self, k):
        """
        :returns (neighbor indices, weights, displacements x_l - x_k) of node k
        """
        out_mask = self.sources == k
        in_mask = self.targets == k
        nodes = np.concatenate([self.targets[out_mask], self.sources[in_mask]])
        eta = np.concatenate([self.eta[out_mask], self.eta[in_mask]])
        disp = np.concatenate([self.displacements[out_mask], -self.displacements[in_mask]])
        return nodes, eta, disp

    def weight(self, k, l):
        """
        :returns eta(x_k, x_l), 0 if the nodes are not connected
        """
        mask = ((self.sources == k) & (self.targets == l)) | ((self.sources == l) & (self.targets == k))
        return float(self.eta[mask][0]) if np.any(mask) else 0.0

    def __repr__(self):
        return f'Graph(eps={self.epsilon:g}, nodes={self.n_nodes}, edges={self.n_edges})'


def _half_offsets(windows):
    """
    Integer offsets in the window box whose first non zero component is positive.
    """
    for offset in itertools.product(*(range(-w, w + 1) for w in windows)):
        nonzero = [o for o in offset if o != 0]
        if nonzero and nonzero[0] > 0:
            yield np.array(offset)


def build_graph(bm: BaseMeasure, conn: Connectivity, epsilon) -> Graph:
    """
    Builds G^eps: all node pairs at (minimal image) distance <= eps * C_supp with positive weight.

    :raises ValueError if eps * C_supp reaches half the domain on a periodic grid
    """
    if epsilon <= 0:
        raise ValueError(f'Epsilon must be positive, got {epsilon}.')
    grid = bm.grid
    if conn.dim != grid.dim:
        raise ValueError(f'Connectivity dimension {conn.dim} does not match grid dimension {grid.dim}.')
    reach = epsilon * conn.support_radius
    if grid.periodic and np.any(reach >= grid.lengths / 2):
        raise ValueError(f'eps * C_supp = {reach:g} must be smaller than half the periodic domain '
                         f'{(grid.lengths / 2).tolist()}.')

    windows = [int(math.ceil(reach / h * (1 + 1e-12))) for h in grid.spacing]
    if not grid.periodic:
        windows = [min(w, c - 1) for w, c in zip(windows, grid.cells)]

    idx = grid.multi_indices
    strides = np.cumprod((1,) + grid.cells[::-1])[:-1][::-1]
    positions = grid.centers
    scale = epsilon ** -(grid.dim + 2)

    sources, targets, weights, displacements = [], [], [], []
    for offset in _half_offsets(windows):
        disp = offset * grid.spacing
        if np.linalg.norm(disp) > reach * (1 + 1e-12):
            continue
        target = idx + offset
        if grid.periodic:
            target = np.mod(target, grid.cells)
            src = np.arange(grid.n_nodes)
        else:
            keep = np.all((target >= 0) & (target < np.array(grid.cells)), axis=1)
            target = target[keep]
            src = np.flatnonzero(keep)
        if src.size == 0:
            continue
        midpoint = grid.wrap_points(positions[src] + disp / 2)
        eta = scale * conn(midpoint, np.broadcast_to(-disp / epsilon, midpoint.shape))
        keep = eta > 0
        if np.any(eta < 0):
            raise ValueError(f'Connectivity {conn.name} is negative at displacement {disp.tolist()}.')
        sources.append(src[keep])
        targets.append(target[keep] @ strides)
        weights.append(eta[keep])
        displacements.append(np.broadcast_to(disp, (int(np.sum(keep)), grid.dim)))

    if sources:
        graph = Graph(bm, epsilon, np.concatenate(sources), np.concatenate(targets), np.concatenate(weights),
                      np.concatenate(displacements), connectivity=conn)
    else:
        graph = Graph(bm, epsilon, [], [], [], np.zeros((0, grid.dim)), connectivity=conn)
    logger.info(f'Built graph eps={epsilon:g} with {conn.name}: {graph.n_nodes} nodes, {graph.n_edges} edges')
    return graph


def midpoint_grid(dim, radius, resolution):
    """
    Midpoint quadrature nodes on [-radius, radius]^d.

    :returns (points (M, d), cell volume)
    """
    h = 2 * radius / resolution
    axis = -radius + (np.arange(resolution) + 0.5) * h
    mesh = np.meshgrid(*([axis] * dim), indexing='ij')
    return np.stack([m.ravel() for m in mesh], axis=-1), h ** dim


@dataclass(frozen=True)
class SamplePlan:
    """
    Sampling used to validate a connectivity.

    :param z_points: (m, d) midpoints
    :param w_points: (p, d) displacements, should reach beyond the declared support
    :param directions: (q, d) unit vectors for the non degeneracy check
    :param resolution: quadrature cells per axis for int |w.xi|^2 theta dw
    :param w_extent: quadrature box half width in units of C_supp
    :param rtol: relative tolerance for the moment and non degeneracy checks
    """
    z_points: np.ndarray
    w_points: np.ndarray
    directions: np.ndarray
    resolution: int = 512
    w_extent: float = 1.5
    rtol: float = 1e-2

    @classmethod
    def default(cls, conn: Connectivity, z_box=None, n_z=5, n_w=512, n_directions=8, resolution=None, seed=0):
        dim = conn.dim
        rng = np.random.default_rng(seed)
        if z_box is None:
            z_box = [(-1.0, 1.0)] * dim
        lo = np.array([b[0] for b in z_box])
        hi = np.array([b[1] for b in z_box])
        z_points = lo + (hi - lo) * rng.random((n_z, dim))
        radius = 2.0 * conn.support_radius
        w_points = rng.uniform(-radius, radius, (n_w, dim))
        if dim == 1:
            directions = np.array([[1.0]])
        else:
            angles = np.pi * np.arange(n_directions) / n_directions
            directions = np.stack([np.cos(angles), np.sin(angles)], axis=-1)
        if resolution is None:
            resolution = 2048 if dim == 1 else 256
        return cls(z_points, w_points, directions, resolution=resolution)


def validate_connectivity(conn: Connectivity, sampling: SamplePlan = None) -> ValidationReport:
    """
    Sampled checks of theta1 (symmetry), theta2 (z continuity table), theta3 (support, hard),
    theta4 (moment bound) and theta5 (non degeneracy by quadrature).
    """
    plan = sampling or SamplePlan.default(conn)
    report = ValidationReport(f'connectivity {conn.name}')
    z = plan.z_points[:, None, :]
    w = plan.w_points[None, :, :]
    values = conn(z, w)
    mirrored = conn(z, -w)
    scale = 1.0 + float(np.max(np.abs(values)))

    report.add(CheckResult(
        'theta_nonnegative', passed=bool(np.all(values >= 0)), worst_margin=float(np.min(values)),
        detail=f'min sampled value {np.min(values):.6g}', hard=True))

    asym = float(np.max(np.abs(values - mirrored)))
    tol = 1e-12 * scale
    report.add(CheckResult(
        'theta1_symmetry', passed=asym <= tol, worst_margin=tol - asym,
        detail=f'max |theta(z,w) - theta(z,-w)| = {asym:.6g}'))

    # z continuity: |theta(z,w) - theta(z',w)| against |z - z'|
    if len(plan.z_points) > 1:
        a, b = np.triu_indices(len(plan.z_points), 1)
        distances = np.linalg.norm(plan.z_points[a] - plan.z_points[b], axis=-1)
        differences = np.max(np.abs(values[a] - values[b]), axis=-1)
        deltas = np.unique(np.sort(distances))[:8]
        report.tables['omega_theta'] = _modulus_table(distances, differences, deltas)

    norms = np.linalg.norm(plan.w_points, axis=-1)
    outside = norms > conn.support_radius * (1 + 1e-12)
    overflow = float(np.max(values[:, outside])) if np.any(outside) else 0.0
    report.add(CheckResult(
        'theta3_support', passed=overflow == 0.0, worst_margin=-overflow,
        detail=f'max theta beyond |w| > C_supp = {conn.support_radius:g}: {overflow:.6g}', hard=True))

    moment = float(np.max(norms[None, :] ** 2 * values))
    report.add(CheckResult(
        'theta4_moment', passed=moment <= conn.moment_bound * (1 + plan.rtol),
        worst_margin=conn.moment_bound - moment,
        detail=f'max |w|^2 theta = {moment:.6g} vs C_mom = {conn.moment_bound:g}'))

    points, volume = midpoint_grid(conn.dim, plan.w_extent * conn.support_radius, plan.resolution)
    worst = np.inf
    for zk in plan.z_points:
        theta = conn(zk[None, :], points)
        for xi in plan.directions:
            xi = xi / np.linalg.norm(xi)
            worst = min(worst, float(np.sum((points @ xi) ** 2 * theta) * volume))
    report.add(CheckResult(
        'theta5_nondegeneracy', passed=worst >= conn.nondegeneracy * (1 - plan.rtol),
        worst_margin=worst - conn.nondegeneracy,
        detail=f'min int |w.xi|^2 theta dw = {worst:.6g} vs c_nd = {conn.nondegeneracy:g}'))
    return report

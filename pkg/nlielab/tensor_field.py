"""
epsilon tensors of built graphs, the limit tensor

    T(x) = 1/2 int w (x) w density(x) theta(x, w) dw

by midpoint quadrature, and the ellipsoid connectivities with closed form T = D.
"""
import logging
import math

import numpy as np
from scipy.special import gamma

from nlielab.graph_model import (BaseMeasure, Connectivity, Graph, SpatialGrid, ball_indicator,
                                 indicator_ball, midpoint_grid, unit_ball_volume)

logger = logging.getLogger(__name__)


class TensorField:
    """
    Symmetric d x d matrix per node of a grid, values of shape (n, d, d).
    """
    def __init__(self, grid: SpatialGrid, values, symmetry_tol=1e-12):
        values = np.array(values, dtype=float)
        n, d = grid.n_nodes, grid.dim
        if values.shape != (n, d, d):
            raise ValueError(f'Tensor field must have shape {(n, d, d)}, got {values.shape}.')
        scale = 1.0 + np.max(np.abs(values)) if values.size else 1.0
        asym = float(np.max(np.abs(values - np.swapaxes(values, 1, 2)))) if values.size else 0.0
        if asym > symmetry_tol * scale:
            raise ValueError(f'Tensor field is not symmetric (max deviation {asym:.3g}).')
        values = 0.5 * (values + np.swapaxes(values, 1, 2))
        values.setflags(write=False)
        self.grid = grid
        self.values = values

    @classmethod
    def constant(cls, grid: SpatialGrid, matrix):
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        return cls(grid, np.broadcast_to(matrix, (grid.n_nodes, grid.dim, grid.dim)))

    @classmethod
    def identity(cls, grid: SpatialGrid):
        return cls.constant(grid, np.eye(grid.dim))

    @property
    def dim(self):
        return self.grid.dim

    def __getitem__(self, k):
        return self.values[k]

    def __mul__(self, factor):
        return TensorField(self.grid, self.values * factor)

    __rmul__ = __mul__

    def apply(self, vectors):
        """
        :param vectors: (..., n, d)
        :returns T(x_k) v_k, same shape
        """
        return np.einsum('kab,...kb->...ka', self.values, vectors)

    def eigenvalues(self):
        """
        :returns (n, d) ascending eigenvalues per node
        """
        return np.linalg.eigvalsh(self.values)

    def spd_failures(self, mask=None):
        """
        Cholesky certification per node.

        :returns indices of nodes (within mask) whose matrix is not positive definite
        """
        nodes = np.arange(self.grid.n_nodes) if mask is None else np.flatnonzero(mask)
        try:
            np.linalg.cholesky(self.values[nodes])
            return np.array([], dtype=int)
        except np.linalg.LinAlgError:
            pass
        failed = [k for k in nodes if np.linalg.eigvalsh(self.values[k])[0] <= 0]
        return np.array(failed, dtype=int)

    def is_spd(self, mask=None):
        return self.spd_failures(mask).size == 0

    def inverse(self):
        return np.linalg.inv(self.values)

    def __repr__(self):
        return f'TensorField(n={self.grid.n_nodes}, d={self.dim})'


def epsilon_tensor(graph: Graph, k):
    """
    1/2 sum_l (x_k - x_l) (x) (x_k - x_l) eta(x_k, x_l) m_l
    """
    nodes, eta, disp = graph.neighbors(k)
    m = graph.weights[nodes]
    return 0.5 * np.einsum('e,ea,eb->ab', eta * m, disp, disp)


def epsilon_tensor_field(graph: Graph) -> TensorField:
    """
    epsilon tensor at every node.
    """
    d = graph.base.dim
    m = graph.weights
    values = np.zeros((graph.n_nodes, d, d))
    for a in range(d):
        for b in range(a, d):
            outer = graph.eta * graph.displacements[:, a] * graph.displacements[:, b]
            entry = 0.5 * (graph.sum_at_sources(outer * m[graph.targets]) + graph.sum_at_targets(outer * m[graph.sources]))
            values[:, a, b] = entry
            values[:, b, a] = entry
    return TensorField(graph.grid, values)


def limit_tensor(conn: Connectivity, density_value, resolution=2048, point=None):
    """
    1/2 int w (x) w density theta(point, w) dw, midpoint rule on [-C_supp, C_supp]^d.

    :param density_value: base measure density at the point
    :param point: midpoint argument of theta, the origin if None
    """
    points, volume = midpoint_grid(conn.dim, conn.support_radius, resolution)
    z = np.zeros(conn.dim) if point is None else np.asarray(point, dtype=float)
    theta = conn(z[None, :], points)
    return 0.5 * float(density_value) * np.einsum('m,ma,mb->ab', theta * volume, points, points)


def limit_tensor_error(conn: Connectivity, density_value, point=None, resolution=512):
    """
    :returns (tensor at twice the resolution, Frobenius difference to the tensor at resolution)
    """
    coarse = limit_tensor(conn, density_value, resolution, point)
    fine = limit_tensor(conn, density_value, 2 * resolution, point)
    return fine, float(np.linalg.norm(fine - coarse))


def limit_tensor_field(conn: Connectivity, base: BaseMeasure, resolution=None) -> TensorField:
    """
    Limit tensor at every node of the base measure.
    """
    if resolution is None:
        resolution = 2048 if conn.dim == 1 else 512
    if conn.z_invariant:
        unit = limit_tensor(conn, 1.0, resolution)
        values = base.density[:, None, None] * unit[None, :, :]
    else:
        values = np.stack([limit_tensor(conn, base.density[k], resolution, base.positions[k])
                           for k in range(base.n_nodes)])
    logger.debug(f'Limit tensor field of {conn.name} at resolution {resolution}')
    return TensorField(base.grid, values)


def tensor_error(a: TensorField, b: TensorField, mask=None):
    """
    :returns max over nodes (within mask) of the Frobenius norm of the difference
    """
    diff = np.linalg.norm(a.values - b.values, axis=(1, 2))
    if mask is not None:
        diff = diff[mask]
    return float(np.max(diff)) if diff.size else 0.0


def ellipsoid_constant(dim):
    """
    C_d = pi^(d/2) / (2 Gamma(d/2 + 2)) = |B_1| / (d + 2)
    """
    return math.pi ** (dim / 2) / (2 * gamma(dim / 2 + 2))


def identity_connectivity(dim):
    """
    Indicator of the unit ball scaled so that the limit tensor is the identity for density 1.
    """
    return indicator_ball(2 * (dim + 2) / unit_ball_volume(dim), dim)


def ellipsoid_connectivity(matrix, bounds=None, dim=None, samples=None, boundary=1.0):
    """
    theta(z, w) = 2 / (C_d sqrt(det D(z))) on the closed ellipsoid <w, D(z)^-1 w> <= 1,
    whose limit tensor is D(z) for density 1.

    :param matrix: constant SPD matrix, or callable z (..., d) -> (..., d, d)
    :param bounds: (D_lower, D_upper) with D_lower Id <= D(z) <= D_upper Id, taken from the eigenvalues if constant
    :param samples: points z (m, d) at which a matrix field is checked
    :param boundary: fraction of the height taken on the ellipsoid surface, 1/2 for the trapezoid variant
    :raises ValueError if a (sampled) matrix is not SPD or violates the bounds
    """
    if callable(matrix):
        if dim is None or bounds is None:
            raise ValueError('Matrix fields need dim and bounds.')
        field = matrix
        check_at = np.zeros((1, dim)) if samples is None else np.asarray(samples, dtype=float)
        sampled = np.asarray(field(check_at), dtype=float).reshape(-1, dim, dim)
    else:
        constant = np.atleast_2d(np.asarray(matrix, dtype=float))
        dim = constant.shape[0]
        if constant.shape != (dim, dim):
            raise ValueError(f'Ellipsoid matrix must be square, got shape {constant.shape}.')
        sampled = constant[None]

        def field(z):
            return constant

    if np.max(np.abs(sampled - np.swapaxes(sampled, 1, 2))) > 1e-12 * (1 + np.max(np.abs(sampled))):
        raise ValueError('Ellipsoid matrix is not symmetric.')
    try:
        np.linalg.cholesky(sampled)
    except np.linalg.LinAlgError:
        raise ValueError('Ellipsoid matrix is not positive definite.') from None
    eig = np.linalg.eigvalsh(sampled)
    if bounds is None:
        bounds = (float(eig.min()), float(eig.max()))
    lower, upper = (float(b) for b in bounds)
    if eig.min() < lower * (1 - 1e-12) or eig.max() > upper * (1 + 1e-12):
        raise ValueError(f'Ellipsoid matrix eigenvalues [{eig.min():.6g}, {eig.max():.6g}] violate the bounds '
                         f'({lower:g}, {upper:g}).')

    c_d = ellipsoid_constant(dim)

    def evaluator(z, w):
        values = np.asarray(field(z), dtype=float)
        inverse = np.linalg.inv(values)
        quad = np.einsum('...a,...ab,...b->...', w, inverse, w)
        height = 2 / (c_d * np.sqrt(np.linalg.det(values)))
        return height * ball_indicator(quad, boundary)

    prefix = 'ellipsoid' if boundary == 1 else f'ellipsoid[boundary={boundary:g}]'
    name = f'{prefix}({np.array2string(sampled[0], separator=",")})' if not callable(matrix) else f'{prefix}(field)'
    return Connectivity(evaluator, dim,
                        support_radius=math.sqrt(upper),
                        moment_bound=upper * 2 / (c_d * lower ** (dim / 2)),
                        nondegeneracy=2 * lower,
                        name=name.replace('\n', ''), z_invariant=not callable(matrix))

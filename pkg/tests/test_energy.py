import numpy as np
import pytest

from nlielab.energy import KernelSamplePlan, KernelSet, KernelTable, PotentialSet, SpeciesState, build_kernel, \
    build_potential, energy, expression_kernel, gaussian_kernel, quadratic_kernel, second_moments, \
    validate_kernels, validate_potentials, variational_derivative, variational_derivatives, zero_kernel


def test_build_presets():
    assert build_kernel('quadratic(0.5)', 1).name == 'quadratic(0.5)'
    assert build_kernel('gaussian(1, 0.1)', 1).name == 'gaussian(1, 0.1)'
    assert build_kernel('zero', 2).is_zero
    assert build_potential('zero', 1).is_zero
    with pytest.raises(ValueError):
        build_kernel('quadratic(1, 2)', 1)
    with pytest.raises(ValueError):
        build_kernel('gaussian(1, 0)', 1)


def test_expression_kernel_gradient():
    kernel = build_kernel('(x - y)^2 + x', 1)
    x = np.array([[2.0]])
    y = np.array([[0.5]])
    assert kernel.value(x, y)[0] == pytest.approx(4.25)
    assert kernel.grad_x(x, y)[0, 0] == pytest.approx(4.0)

    kernel = expression_kernel('x1 * y2 - x2 * y1', 2)
    np.testing.assert_allclose(kernel.grad_x(np.array([[1.0, 2.0]]), np.array([[3.0, 5.0]])), [[5.0, -3.0]])


def test_energy_of_two_half_masses(two_nodes, single):
    bm = two_nodes()
    ks, ps = single(quadratic_kernel(1))
    state = SpeciesState([[0.5, 0.5]])
    assert energy(ks, ps, state, bm) == pytest.approx(0.25)


def test_cross_interaction_energy(two_nodes):
    bm = two_nodes()
    ks = KernelSet([[zero_kernel(), quadratic_kernel(1)], [quadratic_kernel(1), zero_kernel()]])
    state = SpeciesState.point_masses([0, 1], bm.weights)
    assert energy(ks, PotentialSet.zeros(2), state, bm) == pytest.approx(1.0)


def test_potential_energy(two_nodes, single):
    bm = two_nodes()
    ks, ps = single(zero_kernel(), build_potential('x', 1))
    state = SpeciesState.point_masses([1], bm.weights)
    assert energy(ks, ps, state, bm) == pytest.approx(1.0)
    assert second_moments(state, bm.positions, bm.weights)[0] == pytest.approx(1.0)


def test_variational_derivative(two_nodes, single):
    bm = two_nodes()
    ks, ps = single(quadratic_kernel(1))
    state = SpeciesState.point_masses([1], bm.weights)
    np.testing.assert_allclose(variational_derivative(ks, ps, state, bm, 0), [1.0, 0.0])
    with pytest.raises(ValueError):
        variational_derivative(ks, ps, state, bm, 1)


def test_variational_derivative_is_energy_gradient(torus):
    bm = torus(32)
    ks = KernelSet([[gaussian_kernel(1, 0.2), quadratic_kernel(0.3)],
                    [quadratic_kernel(0.3), gaussian_kernel(0.5, 0.1)]])
    ps = PotentialSet([build_potential('cos(2 * pi * x)', 1), build_potential('zero', 1)])
    x = bm.positions[:, 0]
    state = SpeciesState.from_profiles([1 + 0.5 * np.sin(2 * np.pi * x), 1 + 0.3 * np.cos(4 * np.pi * x)],
                                       bm.weights)
    phi = variational_derivatives(ks, ps, state, bm)

    direction = np.random.default_rng(3).normal(size=state.densities.shape)
    h = 1e-6
    plus = SpeciesState(state.densities + h * direction)
    minus = SpeciesState(state.densities - h * direction)
    fd = (energy(ks, ps, plus, bm) - energy(ks, ps, minus, bm)) / (2 * h)
    assert fd == pytest.approx(np.sum(phi * direction * bm.weights[None, :]), rel=1e-6)


def test_state_checks():
    with pytest.raises(ValueError):
        SpeciesState([[0.5, -0.1]])
    with pytest.raises(ValueError):
        SpeciesState([[np.nan, 1.0]])
    state = SpeciesState.from_profiles([[1.0, 3.0]], [1.0, 1.0])
    np.testing.assert_allclose(state.densities, [[0.25, 0.75]])
    state.check_against([1.0, 1.0])
    with pytest.raises(ValueError):
        state.check_against([2.0, 2.0])
    with pytest.raises(ValueError):
        SpeciesState.from_profiles([[0.0, 0.0]], [1.0, 1.0])


def test_species_count_mismatch(two_nodes, single):
    bm = two_nodes()
    ks, ps = single(quadratic_kernel(1))
    with pytest.raises(ValueError):
        energy(ks, ps, SpeciesState([[0.5, 0.5], [0.5, 0.5]]), bm)


def test_permuted_sets():
    a, b, c, d = (quadratic_kernel(v) for v in (1, 2, 3, 4))
    ks = KernelSet([[a, b], [c, d]]).permuted([1, 0])
    assert ks[0, 0] is d
    assert ks[0, 1] is c
    ps = PotentialSet.zeros(2)
    assert ps.permuted([1, 0])[0] is ps[1]


def test_blocked_table_matches_cached(torus):
    bm = torus(64)
    ks = KernelSet.single(gaussian_kernel(1, 0.1))
    masses = np.random.default_rng(0).random(64)
    cached = KernelTable(ks, bm.grid)
    blocked = KernelTable(ks, bm.grid, memory_limit=4096, cache=False)
    np.testing.assert_allclose(blocked.convolve(0, 0, masses), cached.convolve(0, 0, masses))
    np.testing.assert_allclose(blocked.convolve_grad(0, 0, masses), cached.convolve_grad(0, 0, masses))


def test_kernel_validation_passes_presets():
    ks = KernelSet([[quadratic_kernel(1), gaussian_kernel(1, 0.5)], [gaussian_kernel(1, 0.5), quadratic_kernel(2)]])
    report = validate_kernels(ks, dim=1)
    assert report.passed, str(report)


def test_kernel_validation_failures():
    report = validate_kernels(KernelSet.single(build_kernel('x - y', 1)))
    assert not report.get_check('K2_exchange_symmetry K11').passed

    report = validate_kernels(KernelSet.single(build_kernel('(x - y)^4', 1)))
    assert not report.get_check('K4_growth K11').passed
    assert report.get_check('gradient_consistency K11').passed

    ks = KernelSet([[zero_kernel(), quadratic_kernel(1)], [quadratic_kernel(2), zero_kernel()]])
    report = validate_kernels(ks)
    assert not report.get_check('cross_symmetry K12').passed


def test_declared_lipschitz_constant_checked():
    ks = KernelSet.single(quadratic_kernel(1))
    ks.lipschitz_constant = 1e-3
    report = validate_kernels(ks, KernelSamplePlan.default(1))
    assert not report.get_check('K3_lipschitz K11').passed


def test_potential_validation():
    report = validate_potentials(PotentialSet([build_potential('quadratic(0.5)', 1),
                                               build_potential('sin(x) + x^2', 1)]))
    assert report.passed, str(report)


def _three_species(torus):
    bm = torus(48)
    cross = quadratic_kernel(0.3)
    far = gaussian_kernel(-0.5, 0.2)
    ks = KernelSet([[gaussian_kernel(1, 0.1), cross, far],
                    [cross, zero_kernel(), quadratic_kernel(0.1)],
                    [far, quadratic_kernel(0.1), gaussian_kernel(0.4, 0.3)]])
    x = bm.positions[:, 0]
    state = SpeciesState.from_profiles([1 + 0.5 * np.sin(2 * np.pi * x), 1 + 0.3 * np.cos(4 * np.pi * x),
                                        np.exp(-((x - 0.4) / 0.1) ** 2)], bm.weights)
    return bm, ks, state


def test_energy_is_invariant_under_species_relabelling(torus):
    bm, ks, state = _three_species(torus)
    ps = PotentialSet([build_potential('cos(2 * pi * x)', 1), build_potential('zero', 1),
                       build_potential('x^2', 1)])
    reference = energy(ks, ps, state, bm)
    for order in ([1, 0, 2], [2, 0, 1], [2, 1, 0]):
        relabelled = SpeciesState(state.densities[order])
        assert energy(ks.permuted(order), ps.permuted(order), relabelled, bm) == pytest.approx(reference, rel=1e-12)


def test_variational_derivative_is_linear_in_the_densities(torus):
    bm, ks, state = _three_species(torus)
    ps = PotentialSet.zeros(3)
    other = SpeciesState(np.random.default_rng(5).random(state.densities.shape))
    combined = SpeciesState(0.3 * state.densities + 2.5 * other.densities)
    for i in range(3):
        np.testing.assert_allclose(variational_derivative(ks, ps, combined, bm, i),
                                   0.3 * variational_derivative(ks, ps, state, bm, i)
                                   + 2.5 * variational_derivative(ks, ps, other, bm, i), rtol=1e-12, atol=1e-12)


def test_energy_is_half_the_paired_derivative(torus):
    bm, ks, state = _three_species(torus)
    weighted = state.densities * bm.weights[None, :]
    phi = variational_derivatives(ks, PotentialSet.zeros(3), state, bm)
    assert energy(ks, PotentialSet.zeros(3), state, bm) == pytest.approx(0.5 * np.sum(phi * weighted), abs=1e-12)

    # the potential enters once in the energy and once in phi
    ps = PotentialSet([build_potential('cos(2 * pi * x)', 1), build_potential('zero', 1),
                       build_potential('x^2', 1)])
    potentials = np.stack([np.broadcast_to(p.value(bm.positions), (bm.n_nodes,)) for p in ps])
    phi = variational_derivatives(ks, ps, state, bm)
    assert energy(ks, ps, state, bm) == pytest.approx(0.5 * np.sum((phi + potentials) * weighted), abs=1e-12)

import numpy as np
import pytest

from eit_shapes.exceptions import GeometryError, MeshingError
from eit_shapes.fem import Conductivity, ForwardProblem
from eit_shapes.gradients import (MAX_LIPSCHITZ, DeformationField, boundary_shape_directional, calA, coeff_fd_check,
                                  coeff_gradient, fd_check, random_deformation, shape_directional, vertex_descent)
from eit_shapes.measurements import patterns, phantom, synthesize
from eit_shapes.meshing import coarse_mesh, refine

from .conftest import square_partition


def _problem(truth, coarse, fine):
    flux = patterns(4)
    data = ForwardProblem(fine, truth, flux).solve(adjoint=False).traces
    values = truth.region_values
    values[1:] *= 0.8
    sigma = truth.with_region_values(values)
    return sigma, flux, data, ForwardProblem(fine, sigma, flux, data).solve()


def test_field_vanishes_on_boundary(pentagon_meshes):
    coarse, _ = pentagon_meshes
    values = np.zeros((coarse.n_nodes, 2))
    values[coarse.boundary.nodes[3]] = (0.1, 0.0)
    with pytest.raises(GeometryError, match='must vanish'):
        DeformationField(coarse, values)


def test_hat_field(pentagon_meshes):
    coarse, fine = pentagon_meshes
    U = DeformationField.hat(coarse, 2, 1)
    assert U.values[2].tolist() == [0, 1]
    assert np.count_nonzero(U.values) == 1
    on_fine = U.on(fine)
    assert on_fine[2] == pytest.approx([0, 1])
    assert np.all(on_fine[fine.boundary_mask] == 0)


def test_calA_trace_free(pentagon_meshes, rng):
    coarse, fine = pentagon_meshes
    A = calA(random_deformation(coarse, rng), fine)
    assert A.shape == (fine.n_triangles, 2, 2)
    assert np.trace(A, axis1=1, axis2=2) == pytest.approx(np.zeros(fine.n_triangles), abs=1e-12)
    assert A == pytest.approx(np.swapaxes(A, 1, 2))
    assert calA(DeformationField.zero(coarse), fine) == pytest.approx(np.zeros_like(A))


def test_vertex_descent_matches_hat_fields(pentagon, pentagon_meshes):
    coarse, fine = pentagon_meshes
    sigma, _, _, sol = _problem(pentagon, coarse, fine)
    theta = vertex_descent(sigma, coarse, fine, sol.states, sol.adjoints).theta
    assert theta.shape == (5, 2)
    expected = np.array([
        [-shape_directional(sigma, fine, sol.states, sol.adjoints, DeformationField.hat(coarse, v, c)) for c in (0, 1)]
        for v in range(5)
    ])
    assert theta == pytest.approx(expected, rel=1e-10, abs=1e-14)


def test_vertex_descent_grows_small_guess():
    # a too small guess inside the true square must be pushed outwards
    corners = [(0.6, 0.6), (0.75, 0.6), (0.75, 0.75), (0.6, 0.75)]
    trial = Conductivity(square_partition(corners), (10.0,), 1.0)
    coarse = coarse_mesh(trial.partition, 4)
    fine = refine(coarse, 3)
    data = synthesize(phantom('square'), 4, refine_levels=3).resample(fine.boundary)
    sol = ForwardProblem(fine, trial, patterns(4), data).solve()
    theta = vertex_descent(trial, coarse, fine, sol.states, sol.adjoints).theta
    outward = np.array(corners) - np.mean(corners, axis=0)
    outward /= np.linalg.norm(outward, axis=1)[:, None]
    assert np.sum(theta * outward) > 0


def test_vertex_descent_not_nested(pentagon, pentagon_meshes):
    coarse, fine = pentagon_meshes
    _, _, _, sol = _problem(pentagon, coarse, fine)
    with pytest.raises(MeshingError, match='not a refinement'):
        vertex_descent(pentagon, coarse_mesh(pentagon.partition, 4), fine, sol.states, sol.adjoints)


def test_gradients_vanish_at_truth(pentagon, pentagon_meshes):
    coarse, fine = pentagon_meshes
    flux = patterns(4)
    data = ForwardProblem(fine, pentagon, flux).solve(adjoint=False).traces
    sol = ForwardProblem(fine, pentagon, flux, data).solve()
    grad = vertex_descent(pentagon, coarse, fine, sol.states, sol.adjoints)
    assert grad.max_norm == pytest.approx(0, abs=1e-8)
    assert coeff_gradient(fine, sol.states, sol.adjoints).values == pytest.approx([0, 0], abs=1e-8)


def test_shape_fd(pentagon, pentagon_meshes, rng):
    coarse, fine = pentagon_meshes
    sigma, flux, data, _ = _problem(pentagon, coarse, fine)
    for _ in range(20):
        check = fd_check(sigma, fine, random_deformation(coarse, rng), 1e-5, flux, data)
        assert check.rel_err <= 1e-4, check


def test_coeff_fd(pentagon, pentagon_meshes):
    coarse, fine = pentagon_meshes
    sigma, flux, data, sol = _problem(pentagon, coarse, fine)
    grad = coeff_gradient(fine, sol.states, sol.adjoints, 2)
    assert grad.values.shape == (2,)
    for region in (0, 1):
        check = coeff_fd_check(sigma, fine, flux, data, region)
        assert check.analytic == pytest.approx(grad.values[region])
        assert check.rel_err <= 1e-6, check


def test_boundary_form_needs_one_inclusion():
    heart_lung = phantom('heart_lung')
    coarse = coarse_mesh(heart_lung.partition, 4)
    fine = refine(coarse, 1)
    zeros = np.zeros((fine.n_nodes, 1))
    with pytest.raises(GeometryError, match='exactly one inclusion, got 3'):
        boundary_shape_directional(heart_lung, fine, zeros, zeros, DeformationField.zero(coarse))


def test_boundary_form_converges():
    square = phantom('square')
    coarse = coarse_mesh(square.partition, 4)
    U = random_deformation(coarse, np.random.default_rng(0))
    gaps = []
    for levels in (2, 3):
        fine = refine(coarse, levels)
        sigma, _, _, sol = _problem(square, coarse, fine)
        distributed = shape_directional(sigma, fine, sol.states, sol.adjoints, U)
        boundary = boundary_shape_directional(sigma, fine, sol.states, sol.adjoints, U)
        gaps.append(abs(distributed - boundary) / abs(distributed))
    # the gap is not monotone in the level
    assert max(gaps) <= 0.05, gaps


def test_random_deformation(pentagon_meshes, rng):
    coarse, _ = pentagon_meshes
    U = random_deformation(coarse, rng, scale=0.01)
    assert np.all(U.values[coarse.boundary_mask] == 0)
    assert np.abs(U.values).max() <= 0.01
    assert U.lipschitz() > 0
    assert DeformationField.zero(coarse).lipschitz() == 0


def test_random_deformation_lipschitz_bound(pentagon_meshes, rng):
    coarse, _ = pentagon_meshes
    for scale in (0.05, 0.5, 1.0):
        U = random_deformation(coarse, rng, scale=scale)
        assert 0 < U.lipschitz() <= MAX_LIPSCHITZ + 1e-12
    assert random_deformation(coarse, rng, scale=1.0, max_lipschitz=0.1).lipschitz() <= 0.1 + 1e-12

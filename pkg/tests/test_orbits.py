"""
Tests for periodic orbits, Poincare maps and orbit tables
"""
import numpy as np
import numpy.testing as npt
import pytest

from billiard_lab.core.errors import IllConditionedError, NonHyperbolicOrbitError, ShadowedItineraryError
from billiard_lab.core.geometry import ConvexObstacle, Scene, normal_and_shape
from billiard_lab.core.orbits import (
    SYMPLECTIC_J,
    PeriodicOrbit,
    cyclic_length,
    eigen_split,
    enumerate_orbits,
    find_periodic_orbit,
    flight_block,
    is_strict_minimum,
    jacobian_agreement,
    mirror_block,
    poincare_jacobian,
    reflection_residual,
    solve_orbit_points,
)
from billiard_lab.io.scene_file import equilateral_spheres, two_spheres

PAIR_LAMBDA = (5.0 - 2.0 * np.sqrt(6.0)) ** 2
TRIANGLE_LENGTH = 18.0 - 3.0 * np.sqrt(3.0)


@pytest.fixture(scope="module")
def pair_orbit(pair_scene):
    return find_periodic_orbit(pair_scene, (1, 2))


@pytest.fixture(scope="module")
def triangle_orbit(triangle_scene):
    return find_periodic_orbit(triangle_scene, (1, 2, 3))


@pytest.fixture(scope="module")
def triangle_table(triangle_scene):
    return enumerate_orbits(triangle_scene, 6)


class TestFindOrbit:
    def test_two_spheres(self, pair_orbit):
        assert pair_orbit.d_gamma == pytest.approx(8.0, abs=1e-10)
        npt.assert_allclose(pair_orbit.points, [[1, 0, 0], [5, 0, 0]], atol=1e-10)
        assert pair_orbit.word == "1-2"

    def test_triangle(self, triangle_orbit):
        assert triangle_orbit.d_gamma == pytest.approx(TRIANGLE_LENGTH, abs=1e-9)
        centroid = np.array([3.0, np.sqrt(3.0), 0.0])
        npt.assert_allclose(np.linalg.norm(triangle_orbit.points - centroid, axis=1),
                            2 * np.sqrt(3.0) - 1, atol=1e-9)

    def test_triangle_pair_axis(self, triangle_scene):
        assert find_periodic_orbit(triangle_scene, (2, 3)).d_gamma == pytest.approx(8.0, abs=1e-10)

    def test_rotation_is_canonical(self, triangle_scene, triangle_orbit):
        rotated = find_periodic_orbit(triangle_scene, (3, 1, 2))
        assert rotated.itinerary == (1, 2, 3)
        assert rotated.d_gamma == pytest.approx(triangle_orbit.d_gamma, abs=1e-10)

    def test_strict_minimum(self, triangle_scene, triangle_orbit):
        assert is_strict_minimum(triangle_scene, triangle_orbit)

    def test_reflection_law(self, triangle_scene, triangle_orbit):
        assert reflection_residual(triangle_scene, (1, 2, 3), triangle_orbit.points) < 1e-9

    def test_ellipsoid_orbit(self):
        scene = Scene.build([
            ConvexObstacle.ellipsoid([0, 0, 0], [1.0, 2.0, 1.5]),
            ConvexObstacle.sphere([6, 0.5, 0], 1.0),
        ])
        points, residual, _ = solve_orbit_points(scene, (1, 2))
        assert residual < 1e-9
        # the orbit is a common normal of the two bodies
        n1 = normal_and_shape(scene.obstacle(1), points[0]).normal
        e = (points[1] - points[0]) / np.linalg.norm(points[1] - points[0])
        npt.assert_allclose(n1, e, atol=1e-8)

    def test_shadowed(self, eclipsed_scene):
        with pytest.raises(ShadowedItineraryError, match="shadowed itinerary"):
            find_periodic_orbit(eclipsed_scene, (1, 2))


class TestLinearization:
    def test_flight_block(self):
        block = flight_block(2.0)
        npt.assert_allclose(block @ np.r_[0, 0, 0, 1, 0, 0], [2, 0, 0, 1, 0, 0])

    def test_pair_period_map(self, pair_scene, pair_orbit):
        # per bounce [[1, 4], [2, 9]] in (offset, slope); the period map is its square
        # conjugated to the mid-leg section
        tm = poincare_jacobian(pair_scene, pair_orbit)
        values = np.sort(np.abs(np.linalg.eigvals(tm.matrix)))
        npt.assert_allclose(values, [PAIR_LAMBDA, PAIR_LAMBDA, 1 / PAIR_LAMBDA, 1 / PAIR_LAMBDA],
                            rtol=1e-8)

    def test_pair_lambda(self, pair_orbit):
        assert pair_orbit.lambda_gamma == pytest.approx(0.0102051443, abs=1e-9)
        npt.assert_allclose(np.abs(pair_orbit.mu), PAIR_LAMBDA, rtol=1e-8)

    def test_analytic_matches_finite_differences(self, pair_scene, pair_orbit, triangle_scene, triangle_orbit):
        assert jacobian_agreement(pair_scene, pair_orbit) < 1e-5
        assert jacobian_agreement(triangle_scene, triangle_orbit) < 1e-5

    def test_symplectic(self, triangle_scene, triangle_orbit):
        tm = poincare_jacobian(triangle_scene, triangle_orbit)
        assert tm.symplectic_defect < 1e-8
        M = tm.matrix
        npt.assert_allclose(M.T @ SYMPLECTIC_J @ M, SYMPLECTIC_J, atol=1e-6 * np.abs(M).max() ** 2)

    def test_triangle_lambda(self, triangle_orbit):
        assert 0.0 < triangle_orbit.lambda_gamma < 0.05

    def test_flat_mirror_limit(self):
        big = 1e6
        scene = Scene.build([
            ConvexObstacle.sphere([-big, 0, 0], big),
            ConvexObstacle.sphere([1.0 + big, 0, 0], big),
        ])
        points, _, _ = solve_orbit_points(scene, (1, 2))
        orbit = PeriodicOrbit((1, 2), points, cyclic_length(points), 0.0, 0)
        tm = poincare_jacobian(scene, orbit)
        npt.assert_allclose(np.abs(np.linalg.eigvals(tm.matrix)), 1.0, atol=1e-2)
        assert eigen_split(tm).lambda_gamma > 0.99

    def test_identity_is_not_hyperbolic(self):
        with pytest.raises(NonHyperbolicOrbitError):
            eigen_split(np.eye(4))

    def test_grazing_mirror_refused(self):
        sphere = ConvexObstacle.sphere([0, 0, 0], 1.0)
        surface = normal_and_shape(sphere, [0, 1, 0])
        e = np.array([1.0, -1e-6, 0.0])
        e /= np.linalg.norm(e)
        with pytest.raises(IllConditionedError, match="ill-conditioned linearization"):
            mirror_block(e, e - 2 * e.dot(surface.normal) * surface.normal, surface)


class TestOrbitTable:
    def test_two_spheres_single_orbit(self, pair_scene):
        table = enumerate_orbits(pair_scene, 6)
        assert [o.word for o in table] == ["1-2"]
        assert not table.failures

    def test_triangle_pairs(self, triangle_scene):
        table = enumerate_orbits(triangle_scene, 2)
        assert [o.word for o in table] == ["1-2", "1-3", "2-3"]

    def test_triangle_length_three(self, triangle_table):
        table = triangle_table.truncated(3)
        assert [o.word for o in table] == ["1-2", "1-3", "2-3", "1-2-3", "1-3-2"]
        forward, backward = table.get((1, 2, 3)), table.get((1, 3, 2))
        assert forward.d_gamma == pytest.approx(backward.d_gamma, abs=1e-10)
        assert forward.lambda_gamma == pytest.approx(backward.lambda_gamma, rel=1e-8)

    def test_length_one_is_empty(self, pair_scene):
        table = enumerate_orbits(pair_scene, 1)
        assert len(table) == 0
        assert table.to_frame().empty

    def test_spectrum_pairing(self, triangle_scene, triangle_table):
        assert not triangle_table.failures
        for orbit in triangle_table:
            split = eigen_split(poincare_jacobian(triangle_scene, orbit))
            assert split.pairing_defect < 1e-6
            assert sum(abs(z) < 1 for z in orbit.spectrum) == 2

    def test_length_bounds(self, triangle_scene, triangle_table):
        for orbit in triangle_table:
            m = len(orbit.itinerary)
            assert orbit.d_gamma / triangle_scene.hull_diameter <= m <= orbit.d_gamma / triangle_scene.d_min + 1e-9

    @pytest.mark.slow
    def test_length_bounds_to_eight_letters(self, triangle_scene):
        table = enumerate_orbits(triangle_scene, 8)
        assert table.shell(8) and not table.failures
        for orbit in table:
            m = len(orbit.itinerary)
            assert orbit.d_gamma / triangle_scene.hull_diameter <= m <= orbit.d_gamma / triangle_scene.d_min + 1e-9

    def test_legs_exceed_gap(self, triangle_scene, triangle_table):
        for orbit in triangle_table:
            assert np.all(orbit.leg_lengths >= triangle_scene.d_min - 1e-9)

    def test_lambda_invariant_under_reversal(self, triangle_table):
        for members in triangle_table.reversal_classes().values():
            lams = [o.lambda_gamma for o in members]
            npt.assert_allclose(lams, lams[0], rtol=1e-7)

    def test_parallel_matches_serial(self, triangle_scene, triangle_table):
        parallel = enumerate_orbits(triangle_scene, 4, workers=4)
        serial = triangle_table.truncated(4)
        assert [o.word for o in parallel] == [o.word for o in serial]
        npt.assert_allclose([o.d_gamma for o in parallel], [o.d_gamma for o in serial], rtol=1e-12)

    def test_frame_columns(self, triangle_table):
        frame = triangle_table.to_frame()
        assert list(frame.columns) == ["word", "length", "d_gamma", "mu1", "mu2", "lambda",
                                       "residual", "solver_iters"]
        assert frame["length"].is_monotonic_increasing

    def test_eclipsed_scene_collects_failures(self, eclipsed_scene):
        table = enumerate_orbits(eclipsed_scene, 2)
        assert "1-2" in table.failures
        assert table.failures["1-2"] == "shadowed itinerary"
        assert {o.word for o in table} == {"1-3", "2-3"}


@pytest.mark.slow
def test_scaled_scene_has_longer_orbits():
    near = find_periodic_orbit(equilateral_spheres(6.0), (1, 2, 3))
    far = find_periodic_orbit(equilateral_spheres(24.0), (1, 2, 3))
    assert far.d_gamma > near.d_gamma
    assert far.lambda_gamma < near.lambda_gamma


def test_pair_scene_distance_dependence():
    assert find_periodic_orbit(two_spheres(10.0), (1, 2)).lambda_gamma < PAIR_LAMBDA

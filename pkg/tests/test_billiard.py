"""
Tests for ray tracing, reflection, tangency counting and flow probes
"""
import numpy as np
import numpy.testing as npt
import pytest

from billiard_lab.core.billiard import (
    PhasePoint,
    SpeedBand,
    TrappedGrid,
    Tube,
    divergence_probe,
    first_hit,
    reflect,
    tangency_classify,
    trace,
    trapped_sample,
)
from billiard_lab.core.errors import GeometryError, ReflectionError, TangencyError
from billiard_lab.core.geometry import ConvexObstacle, Scene
from billiard_lab.io.scene_file import two_spheres


@pytest.fixture(scope="module")
def lone_sphere():
    # a far second obstacle keeps the scene valid
    return Scene.build([
        ConvexObstacle.sphere([0, 0, 0], 1.0),
        ConvexObstacle.sphere([0, 0, 100], 1.0),
    ])


class TestFirstHit:
    def test_head_on(self, lone_sphere):
        hit = first_hit(lone_sphere, PhasePoint([-10, 0, 0], [1, 0, 0]))
        assert hit.obstacle == 1
        assert hit.time == pytest.approx(9.0)
        npt.assert_allclose(hit.point, [-1, 0, 0])

    def test_pointing_away(self, lone_sphere):
        assert first_hit(lone_sphere, PhasePoint([-10, 0, 0], [-1, 0, 0])) is None

    def test_grazing_line(self, lone_sphere):
        hit = first_hit(lone_sphere, PhasePoint([-10, 1, 0], [1, 0, 0]))
        assert hit.time == pytest.approx(10.0)
        npt.assert_allclose(hit.point, [0, 1, 0])

    def test_leaving_boundary_point(self, lone_sphere):
        assert first_hit(lone_sphere, PhasePoint([1, 0, 0], [1, 0, 0])) is None

    def test_ellipsoid(self):
        scene = Scene.build([
            ConvexObstacle.ellipsoid([0, 0, 0], [2.0, 1.0, 1.0]),
            ConvexObstacle.sphere([0, 0, 50], 1.0),
        ])
        hit = first_hit(scene, PhasePoint([-10, 0, 0], [2, 0, 0]))
        assert hit.time == pytest.approx(4.0)
        npt.assert_allclose(hit.point, [-2, 0, 0])


class TestReflect:
    def test_normal_incidence(self):
        npt.assert_allclose(reflect([0, 0, -1], [0, 0, 1]), [0, 0, 1])

    def test_mirror_law(self):
        s = np.sqrt(0.5)
        npt.assert_allclose(reflect([s, 0, -s], [0, 0, 1]), [s, 0, s])

    def test_grazing_unchanged(self):
        npt.assert_allclose(reflect([1, 0, 0], [0, 0, 1]), [1, 0, 0])

    def test_from_inside(self):
        with pytest.raises(ReflectionError, match="reflection from inside"):
            reflect([0, 0, 1], [0, 0, 1])

    def test_norm_preserved(self):
        v = np.array([0.3, -2.0, -0.7])
        n = np.array([0.0, 0.6, 0.8])
        assert np.linalg.norm(reflect(v, n)) == pytest.approx(np.linalg.norm(v), rel=1e-15)


class TestTrace:
    def test_axis_orbit(self, pair_scene):
        ray = trace(pair_scene, PhasePoint([2, 0, 0], [1, 0, 0]), 16.0)
        assert ray.story == (2, 1, 2, 1)
        npt.assert_allclose(np.diff(ray.event_times), 4.0)
        assert ray.event_times[0] == pytest.approx(3.0)
        assert ray.total_time == 16.0
        assert not ray.truncated and not ray.escaped

    def test_escape(self, pair_scene):
        ray = trace(pair_scene, PhasePoint([0, 10, 0], [0, 1, 0]), 5.0)
        assert ray.events == ()
        assert ray.escaped
        npt.assert_allclose(ray.final.x, [0, 15, 0])

    def test_off_axis_defocusing(self, pair_scene):
        ray = trace(pair_scene, PhasePoint([2, 1e-4, 0], [1, 0, 0]), 40.0)
        assert 1 <= len(ray.events) < 10
        assert ray.escaped

    def test_tangency_raises(self, lone_sphere):
        with pytest.raises(TangencyError) as info:
            trace(lone_sphere, PhasePoint([-10, 1, 0], [1, 0, 0]), 20.0)
        assert info.value.event.obstacle == 1
        assert info.value.event.time == pytest.approx(10.0)

    def test_grazing_allowed(self, lone_sphere):
        ray = trace(lone_sphere, PhasePoint([-10, 1, 0], [1, 0, 0]), 20.0, allow_grazing=True)
        npt.assert_allclose(ray.final.xi, [1, 0, 0], atol=1e-12)

    def test_truncation(self, pair_scene):
        ray = trace(pair_scene, PhasePoint([2, 0, 0], [1, 0, 0]), 100.0, max_events=3)
        assert ray.truncated
        assert len(ray.events) == 3
        assert ray.total_time == pytest.approx(11.0)

    def test_start_inside(self, pair_scene):
        with pytest.raises(GeometryError):
            trace(pair_scene, PhasePoint([0.5, 0, 0], [1, 0, 0]), 1.0)

    def test_speed_conserved(self, triangle_scene):
        p = PhasePoint([3.0, 1.2, 0.3], [0.8, 1.1, -0.2])
        ray = trace(triangle_scene, p, 60.0, allow_grazing=True)
        speeds = [np.linalg.norm(e.outgoing) for e in ray.events]
        npt.assert_allclose(speeds, p.speed, rtol=1e-12)

    def test_story_admissible(self, triangle_scene):
        ray = trace(triangle_scene, PhasePoint([3.0, 1.7, 0.0], [1.0, 0.35, 0.0]), 200.0,
                    allow_grazing=True)
        assert all(a != b for a, b in zip(ray.story, ray.story[1:]))

    def test_time_reversal(self, triangle_scene):
        p = PhasePoint([3.0, 1.7, 0.05], [1.0, 0.35, 0.01])
        forward = trace(triangle_scene, p, 25.0)
        backward = trace(triangle_scene, forward.final.reversed(), 25.0)
        assert backward.story == forward.story[::-1]
        for a, b in zip(forward.events, backward.events[::-1]):
            npt.assert_allclose(a.point, b.point, atol=1e-8)
        npt.assert_allclose(backward.final.x, p.x, atol=1e-8)

    def test_to_frame(self, pair_scene):
        frame = trace(pair_scene, PhasePoint([2, 0, 0], [1, 0, 0]), 9.0).to_frame()
        assert list(frame.columns) == ["event_index", "time", "obstacle",
                                       "px", "py", "pz", "dx", "dy", "dz"]
        assert frame["obstacle"].tolist() == [2, 1]
        assert frame["dx"].tolist() == [-1.0, 1.0]


class TestTangencyClassify:
    def test_axis_orbit(self, pair_scene):
        assert tangency_classify(pair_scene, PhasePoint([2, 0, 0], [1, 0, 0]), 1e-3, horizon=40.0) == 0

    def test_single_grazing_escape(self, pair_scene):
        p = PhasePoint([3, 1.0005, 0], [1, 0, 0])
        assert tangency_classify(pair_scene, p, 1e-3) == 1

    def test_far_line(self, pair_scene):
        assert tangency_classify(pair_scene, PhasePoint([3, 0, 0], [0, 0, 1]), 1e-3) == 0


class TestDivergenceProbe:
    def test_identical_points(self, triangle_scene):
        p = PhasePoint([3.0, 1.7, 0.05], [1.0, 0.35, 0.01])
        sample = divergence_probe(triangle_scene, p, p, 10.0, 0.5)
        assert sample.distance < 1e-9
        assert sample.t_prime == pytest.approx(10.0, abs=1e-3)
        assert sample.initial_distance == 0.0

    def test_time_shift_recovered(self, pair_scene):
        p = PhasePoint([2, 0, 0], [1, 0, 0])
        q = PhasePoint([2.3, 0, 0], [1, 0, 0])
        sample = divergence_probe(pair_scene, p, q, 10.0, 0.5)
        assert sample.distance < 1e-8
        assert sample.t_prime == pytest.approx(9.7, abs=1e-6)

    def test_tangency_flagged(self, lone_sphere):
        p = PhasePoint([-10, 1, 0], [1, 0, 0])
        sample = divergence_probe(lone_sphere, p, p, 12.0, 0.5)
        assert sample.flagged
        assert np.isnan(sample.distance)


class TestTrappedSample:
    def test_axis_points_trapped(self, pair_scene):
        tube = Tube.between(pair_scene, 1, 2, 0.1)
        frame = trapped_sample(pair_scene, tube, 20.0)
        assert len(frame) > 0
        on_axis = (frame["y"].abs() < 1e-12) & (frame["z"].abs() < 1e-12)
        assert on_axis.any()
        assert (frame.loc[on_axis, "xi_x"].abs() == 1.0).all()

    def test_transverse_tube_empty(self):
        scene = two_spheres()
        tube = Tube(np.array([3.0, 20.0, -5.0]), np.array([3.0, 20.0, 5.0]), 0.1)
        frame = trapped_sample(scene, tube, 50.0, TrappedGrid(n_axial=5))
        assert frame.empty

    def test_speed_band_respected(self, pair_scene):
        band = SpeedBand(0.5, 2.0)
        tube = Tube.between(pair_scene, 1, 2, 0.1, band)
        frame = trapped_sample(pair_scene, tube, 10.0, TrappedGrid(n_speed=3))
        speeds = np.linalg.norm(frame[["xi_x", "xi_y", "xi_z"]].to_numpy(), axis=1)
        assert len(frame) > 0
        assert np.all((speeds >= 0.5 - 1e-12) & (speeds <= 2.0 + 1e-12))

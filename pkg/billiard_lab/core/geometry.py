"""
Strictly convex obstacles and scenes
Boundary projection, differential geometry and the no-eclipse check
"""
from dataclasses import dataclass, field
import hashlib
import json

import numpy as np
from scipy import optimize

from billiard_lab.config import (
    FRAME_TOL, MIN_GAP, TOL_BOUNDARY, logger
)
from billiard_lab.core.errors import GeometryError

SPHERE = "sphere"
ELLIPSOID = "ellipsoid"


def _as_point(x):
    return np.asarray(x, dtype=float).reshape(3)


def _frozen(array):
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


def fibonacci_directions(n):
    """Quasi-uniform unit vectors on the sphere, shape (n, 3)"""
    i = np.arange(n) + 0.5
    polar = np.arccos(1.0 - 2.0 * i / n)
    azimuth = np.pi * (1.0 + 5 ** 0.5) * i
    return np.column_stack([
        np.sin(polar) * np.cos(azimuth),
        np.sin(polar) * np.sin(azimuth),
        np.cos(polar),
    ])


def _direction(angles):
    theta, phi = angles
    return np.array([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])


def _maximize_on_sphere(func, n_grid=2000, n_refine=4):
    """
    Maximize a function of unit directions.

    A Fibonacci grid locates the best candidates, each is refined with
    Nelder-Mead in spherical angles. `func` maps an (n, 3) array to (n,).
    """
    grid = fibonacci_directions(n_grid)
    values = func(grid)
    best_value = -np.inf
    best_dir = grid[int(np.argmax(values))]
    for idx in np.argsort(values)[::-1][:n_refine]:
        u = grid[idx]
        start = [np.arccos(np.clip(u[2], -1.0, 1.0)), np.arctan2(u[1], u[0])]
        res = optimize.minimize(
            lambda ang: -func(_direction(ang)[None, :])[0],
            start,
            method="Nelder-Mead",
            options={"xatol": 1e-11, "fatol": 1e-14, "maxiter": 4000},
        )
        value = -res.fun
        if value > best_value:
            best_value = value
            best_dir = _direction(res.x)
    return best_value, best_dir


def tangent_frame(normal):
    """Orthonormal basis (2, 3) of the plane orthogonal to `normal`"""
    n = _as_point(normal)
    n = n / np.linalg.norm(n)
    axis = np.zeros(3)
    axis[int(np.argmin(np.abs(n)))] = 1.0
    t1 = axis - axis.dot(n) * n
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(n, t1)
    return np.vstack([t1, t2])


# ============================================
# OBSTACLES
# ============================================
@dataclass(frozen=True, eq=False)
class ConvexObstacle:
    """
    Sphere or ellipsoid in R^3.

    `orientation` rows are the body axes in world coordinates, so local
    coordinates are u = orientation @ (x - center).
    """
    kind: str
    center: np.ndarray
    semiaxes: np.ndarray
    orientation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        if self.kind not in (SPHERE, ELLIPSOID):
            raise GeometryError(f"unknown obstacle kind '{self.kind}'")
        center = _frozen(_as_point(self.center))
        semiaxes = _frozen(np.broadcast_to(np.asarray(self.semiaxes, dtype=float), (3,)))
        orientation = _frozen(np.asarray(self.orientation, dtype=float).reshape(3, 3))
        if np.any(semiaxes <= 0) or not np.all(np.isfinite(semiaxes)):
            raise GeometryError("radius and semiaxes must be positive")
        if np.max(np.abs(orientation @ orientation.T - np.eye(3))) > FRAME_TOL:
            raise GeometryError("orientation frame is not orthonormal")
        if self.kind == SPHERE and np.ptp(semiaxes) > 0:
            raise GeometryError("a sphere has a single radius")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "semiaxes", semiaxes)
        object.__setattr__(self, "orientation", orientation)

    @classmethod
    def sphere(cls, center, radius):
        return cls(SPHERE, center, np.full(3, float(radius)))

    @classmethod
    def ellipsoid(cls, center, semiaxes, orientation=None):
        return cls(ELLIPSOID, center, semiaxes,
                   np.eye(3) if orientation is None else orientation)

    @property
    def is_sphere(self):
        return self.kind == SPHERE

    @property
    def radius(self):
        return float(self.semiaxes[0])

    @property
    def scale(self):
        return float(np.max(self.semiaxes))

    def to_local(self, x):
        return self.orientation @ (np.asarray(x, dtype=float) - self.center)

    def to_world(self, u):
        return self.center + self.orientation.T @ u

    def level(self, x):
        """Implicit function, negative inside, zero on the boundary"""
        u = self.to_local(x)
        return float(np.sum((u / self.semiaxes) ** 2) - 1.0)

    def contains(self, x):
        return self.level(x) < 0.0

    def support(self, directions):
        """Support function h(u) = max over the body of x.u, vectorized"""
        u = np.atleast_2d(directions)
        local = u @ self.orientation.T
        return u @ self.center + np.linalg.norm(local * self.semiaxes, axis=1)

    def boundary_distance_estimate(self, x):
        if self.is_sphere:
            return abs(np.linalg.norm(np.asarray(x) - self.center) - self.radius)
        u = self.to_local(x)
        grad = 2.0 * u / self.semiaxes ** 2
        lvl = np.sum((u / self.semiaxes) ** 2) - 1.0
        return abs(lvl) / max(np.linalg.norm(grad), 1e-300)

    def exit_point(self, direction):
        """Boundary point hit by the ray from the center along `direction`"""
        d = _as_point(direction)
        d = d / np.linalg.norm(d)
        scaled = (self.orientation @ d) / self.semiaxes
        return self.center + d / np.linalg.norm(scaled)

    def to_dict(self):
        if self.is_sphere:
            return {"kind": SPHERE, "center": self.center.tolist(), "radius": self.radius}
        return {
            "kind": ELLIPSOID,
            "center": self.center.tolist(),
            "semiaxes": self.semiaxes.tolist(),
            "orientation": self.orientation.tolist(),
        }


def boundary_project(obstacle, x):
    """Nearest boundary point of `obstacle` to an exterior (or boundary) point"""
    x = _as_point(x)
    if obstacle.is_sphere:
        d = x - obstacle.center
        dist = np.linalg.norm(d)
        if dist < obstacle.radius - TOL_BOUNDARY * max(1.0, obstacle.radius):
            raise GeometryError("interior point", point=x.tolist())
        return obstacle.center + obstacle.radius * d / dist

    a = obstacle.semiaxes
    p = obstacle.to_local(x)
    lvl = float(np.sum((p / a) ** 2) - 1.0)
    if lvl < 0.0:
        if obstacle.boundary_distance_estimate(x) > TOL_BOUNDARY * max(1.0, obstacle.scale):
            raise GeometryError("interior point", point=x.tolist())
        # within tolerance: radial correction in scaled coordinates
        return obstacle.to_world(p / np.sqrt(lvl + 1.0))
    if lvl == 0.0:
        return x.copy()

    def g(t):
        return float(np.sum((a * p / (a ** 2 + t)) ** 2) - 1.0)

    upper = a.max() * np.linalg.norm(p) + 1.0
    try:
        t = optimize.brentq(g, 0.0, upper, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    except (ValueError, RuntimeError) as e:
        raise GeometryError(f"boundary projection failed: {e}", point=x.tolist())
    return obstacle.to_world(a ** 2 * p / (a ** 2 + t))


def closest_point(obstacle, x):
    """Nearest point of the closed body (x itself when inside)"""
    x = _as_point(x)
    if obstacle.level(x) <= 0.0:
        return x
    return boundary_project(obstacle, x)


def outward_normal(obstacle, p):
    """Unit outward normal at (or near) a boundary point, unchecked"""
    if obstacle.is_sphere:
        d = np.asarray(p, dtype=float) - obstacle.center
        return d / np.linalg.norm(d)
    R = obstacle.orientation
    grad = R.T @ (obstacle.to_local(p) / obstacle.semiaxes ** 2)
    return grad / np.linalg.norm(grad)


@dataclass(frozen=True)
class SurfaceFrame:
    """Outward normal, tangent basis (rows) and shape operator in that basis"""
    point: np.ndarray
    normal: np.ndarray
    tangents: np.ndarray
    shape: np.ndarray

    @property
    def principal_curvatures(self):
        return np.linalg.eigvalsh(self.shape)

    @property
    def shape_3d(self):
        """Shape operator as a symmetric 3x3 map vanishing on the normal"""
        return self.tangents.T @ self.shape @ self.tangents


def normal_and_shape(obstacle, p):
    """Unit outward normal and shape operator at a boundary point"""
    p = _as_point(p)
    if obstacle.boundary_distance_estimate(p) > TOL_BOUNDARY * max(1.0, obstacle.scale):
        raise GeometryError("not a boundary point", point=p.tolist())
    if obstacle.is_sphere:
        normal = (p - obstacle.center) / np.linalg.norm(p - obstacle.center)
        tangents = tangent_frame(normal)
        return SurfaceFrame(p, normal, tangents, np.eye(2) / obstacle.radius)

    R = obstacle.orientation
    metric = R.T @ np.diag(1.0 / obstacle.semiaxes ** 2) @ R
    grad = 2.0 * metric @ (p - obstacle.center)
    grad_norm = np.linalg.norm(grad)
    normal = grad / grad_norm
    tangents = tangent_frame(normal)
    shape = tangents @ (2.0 * metric) @ tangents.T / grad_norm
    return SurfaceFrame(p, normal, tangents, 0.5 * (shape + shape.T))


# ============================================
# SCENES
# ============================================
def closest_pair(first, second, max_iter=20_000):
    """Nearest points (p, q) of two bodies; p == q when they meet"""
    if first.is_sphere and second.is_sphere:
        axis = second.center - first.center
        axis = axis / np.linalg.norm(axis)
        return first.center + first.radius * axis, second.center - second.radius * axis
    # alternating projections between the two convex bodies
    q = second.center.copy()
    p = closest_point(first, q)
    scale = max(first.scale, second.scale)
    for _ in range(max_iter):
        q_new = closest_point(second, p)
        p_new = closest_point(first, q_new)
        moved = max(np.linalg.norm(q_new - q), np.linalg.norm(p_new - p))
        p, q = p_new, q_new
        if moved < 1e-14 * (scale + np.linalg.norm(p)):
            break
    return p, q


def pair_gap(first, second):
    """Boundary-to-boundary distance; 0 when the bodies meet"""
    if first.is_sphere and second.is_sphere:
        gap = np.linalg.norm(first.center - second.center) - first.radius - second.radius
        return max(float(gap), 0.0)
    p, q = closest_pair(first, second)
    return float(np.linalg.norm(p - q))


def pair_diameter(first, second):
    """Largest distance between a point of `first` and a point of `second`"""
    if first.is_sphere and second.is_sphere:
        if first is second:
            return 2.0 * first.radius
        return float(np.linalg.norm(first.center - second.center) + first.radius + second.radius)
    value, _ = _maximize_on_sphere(lambda u: first.support(u) + second.support(-u))
    return float(value)


def scene_metrics(obstacles):
    """(d_min, hull_diameter) of a scene or of a sequence of obstacles"""
    obstacles = tuple(getattr(obstacles, "obstacles", obstacles))
    d_min = np.inf
    hull_diameter = 0.0
    for i, first in enumerate(obstacles):
        hull_diameter = max(hull_diameter, pair_diameter(first, first))
        for j in range(i + 1, len(obstacles)):
            second = obstacles[j]
            gap = pair_gap(first, second)
            if gap <= 1e-12 or first.contains(second.center) or second.contains(first.center):
                raise GeometryError("obstacles intersect", pair=(i + 1, j + 1))
            d_min = min(d_min, gap)
            hull_diameter = max(hull_diameter, pair_diameter(first, second))
    return float(d_min), float(hull_diameter)


@dataclass(frozen=True, eq=False)
class Scene:
    """Immutable obstacle collection; obstacle letters run from 1 to N"""
    obstacles: tuple
    d_min: float
    hull_diameter: float

    @classmethod
    def build(cls, obstacles):
        obstacles = tuple(obstacles)
        if len(obstacles) < 2:
            raise GeometryError("a scene needs at least two obstacles")
        d_min, hull_diameter = scene_metrics(obstacles)
        if d_min < MIN_GAP:
            raise GeometryError("obstacles nearly touching", d_min=d_min)
        return cls(obstacles, d_min, hull_diameter)

    @property
    def n(self):
        return len(self.obstacles)

    def obstacle(self, letter):
        return self.obstacles[letter - 1]

    @property
    def centroid(self):
        return np.mean([o.center for o in self.obstacles], axis=0)

    def to_dict(self):
        return {"obstacles": [o.to_dict() for o in self.obstacles]}

    def fingerprint(self):
        payload = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()

    def with_separation_scaled(self, factor):
        """Centers moved away from the centroid by `factor`, shapes unchanged"""
        c = self.centroid
        moved = [
            ConvexObstacle(o.kind, c + factor * (o.center - c), o.semiaxes, o.orientation)
            for o in self.obstacles
        ]
        return Scene.build(moved)


# ============================================
# NO-ECLIPSE CONDITION
# ============================================
@dataclass(frozen=True)
class EclipseVerdict:
    passed: bool
    vacuous: bool = False
    triple: tuple = None
    witness: np.ndarray = None
    margin: float = np.inf


def _sphere_hull_margin(first, second, third):
    """
    Exact separation margin of Conv(B_i u B_j) from B_k.

    The hull is the union over s of balls centered (1-s)c_i + s c_j with
    radius (1-s)r_i + s r_j, and the gap to c_k is convex in s.
    """
    ci, cj, ck = first.center, second.center, third.center
    ri, rj = first.radius, second.radius

    def gap(s):
        return np.linalg.norm(ck - ((1 - s) * ci + s * cj)) - ((1 - s) * ri + s * rj)

    res = optimize.minimize_scalar(gap, bounds=(0.0, 1.0), method="bounded",
                                   options={"xatol": 1e-12})
    s = min([0.0, 1.0, float(res.x)], key=gap)
    x = (1 - s) * ci + s * cj
    radius = (1 - s) * ri + s * rj
    to_k = ck - x
    dist = np.linalg.norm(to_k)
    witness = ck.copy() if dist <= radius else x + radius * to_k / dist
    return float(gap(s) - third.radius), witness


def _general_hull_margin(first, second, third):
    def margin(u):
        return -(np.maximum(first.support(u), second.support(u)) + third.support(-u))

    value, _ = _maximize_on_sphere(margin, n_grid=4000, n_refine=6)
    witness = None
    if value <= 0.0:
        witness = _hull_witness(first, second, third)
    return float(value), witness


def _hull_witness(first, second, third):
    """Point of Conv(first u second) minimizing the level function of `third`"""
    def point(z):
        v1, v2, s = z[:3], z[3:6], z[6]
        p = first.to_world(first.semiaxes * v1)
        q = second.to_world(second.semiaxes * v2)
        return (1 - s) * p + s * q

    constraints = [
        {"type": "ineq", "fun": lambda z: 1.0 - z[:3].dot(z[:3])},
        {"type": "ineq", "fun": lambda z: 1.0 - z[3:6].dot(z[3:6])},
    ]
    res = optimize.minimize(
        lambda z: third.level(point(z)), np.r_[np.zeros(6), 0.5],
        method="SLSQP", bounds=[(-1, 1)] * 6 + [(0, 1)], constraints=constraints,
    )
    return point(res.x)


def no_eclipse_check(scene):
    """Ikawa's second condition: no obstacle meets the hull of two others"""
    obstacles = scene.obstacles
    n = len(obstacles)
    if n < 3:
        return EclipseVerdict(passed=True, vacuous=True)
    worst = np.inf
    for i in range(n):
        for j in range(i + 1, n):
            for k in range(n):
                if k in (i, j):
                    continue
                first, second, third = obstacles[i], obstacles[j], obstacles[k]
                if first.is_sphere and second.is_sphere and third.is_sphere:
                    margin, witness = _sphere_hull_margin(first, second, third)
                else:
                    margin, witness = _general_hull_margin(first, second, third)
                if margin <= 0.0:
                    logger.info(f"Eclipse: obstacle {k + 1} meets the hull of {i + 1} and {j + 1}")
                    return EclipseVerdict(False, False, (i + 1, j + 1, k + 1),
                                          np.asarray(witness), margin)
                worst = min(worst, margin)
    return EclipseVerdict(passed=True, margin=float(worst))

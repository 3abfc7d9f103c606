"""
Billiard flow outside the obstacles
Ray tracing, specular reflection, tangency counting and flow probes
"""
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import optimize

from billiard_lab.config import TANGENCY_TOL, TOL_BOUNDARY, logger
from billiard_lab.core.errors import GeometryError, ReflectionError, TangencyError
from billiard_lab.core.geometry import closest_pair, outward_normal, tangent_frame


@dataclass(frozen=True)
class SpeedBand:
    alpha0: float = 1.0
    beta0: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.alpha0 <= self.beta0:
            raise GeometryError("speed band needs 0 < alpha0 <= beta0")

    def contains(self, speed, rtol=1e-12):
        return self.alpha0 * (1 - rtol) <= speed <= self.beta0 * (1 + rtol)


@dataclass(frozen=True, eq=False)
class PhasePoint:
    x: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.array(self.x, dtype=float).reshape(3))
        object.__setattr__(self, "xi", np.array(self.xi, dtype=float).reshape(3))

    @property
    def speed(self):
        return float(np.linalg.norm(self.xi))

    def reversed(self):
        return PhasePoint(self.x, -self.xi)


def phase_distance(first, second):
    """Euclidean distance on positions plus euclidean distance on velocities"""
    return float(np.linalg.norm(first.x - second.x) + np.linalg.norm(first.xi - second.xi))


@dataclass(frozen=True)
class HitEvent:
    time: float
    obstacle: int
    point: np.ndarray


@dataclass(frozen=True)
class ReflectionEvent:
    time: float
    obstacle: int
    point: np.ndarray
    incoming: np.ndarray
    outgoing: np.ndarray

    @property
    def cos_incidence(self):
        n = (self.outgoing - self.incoming)
        norm = np.linalg.norm(n)
        if norm == 0.0:
            return 0.0
        return float(norm / (2.0 * np.linalg.norm(self.incoming)))


@dataclass(frozen=True)
class BrokenRay:
    initial: PhasePoint
    events: tuple
    total_time: float
    truncated: bool = False
    escaped: bool = False

    @property
    def story(self):
        return tuple(e.obstacle for e in self.events)

    @property
    def event_times(self):
        return np.array([e.time for e in self.events])

    def states_at(self, times):
        """Positions and velocities at the given times (arrays of shape (n, 3))"""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        anchors = np.vstack([self.initial.x] + [e.point for e in self.events])
        velocities = np.vstack([self.initial.xi] + [e.outgoing for e in self.events])
        starts = np.r_[0.0, self.event_times]
        idx = np.searchsorted(starts, times, side="right") - 1
        idx = np.clip(idx, 0, len(starts) - 1)
        positions = anchors[idx] + (times - starts[idx])[:, None] * velocities[idx]
        return positions, velocities[idx]

    def state_at(self, t):
        x, v = self.states_at([t])
        return PhasePoint(x[0], v[0])

    @property
    def final(self):
        return self.state_at(self.total_time)

    def to_frame(self):
        rows = [
            {
                "event_index": k,
                "time": e.time,
                "obstacle": e.obstacle,
                "px": e.point[0], "py": e.point[1], "pz": e.point[2],
                "dx": e.outgoing[0], "dy": e.outgoing[1], "dz": e.outgoing[2],
            }
            for k, e in enumerate(self.events, start=1)
        ]
        columns = ["event_index", "time", "obstacle", "px", "py", "pz", "dx", "dy", "dz"]
        return pd.DataFrame(rows, columns=columns)


# ============================================
# PRIMITIVES
# ============================================
def _ray_roots(obstacle, x, v):
    """Coefficients (A, B, C) of A t^2 + 2 B t + C for the ray x + t v"""
    if obstacle.is_sphere:
        d = x - obstacle.center
        return v.dot(v), d.dot(v), d.dot(d) - obstacle.radius ** 2
    u0 = obstacle.to_local(x) / obstacle.semiaxes
    w = (obstacle.orientation @ v) / obstacle.semiaxes
    return w.dot(w), u0.dot(w), u0.dot(u0) - 1.0


def first_hit(scene, p, exclude=None):
    """Earliest positive time at which the ray x + t xi meets an obstacle"""
    x, v = p.x, p.xi
    best = None
    for letter, obstacle in enumerate(scene.obstacles, start=1):
        if letter == exclude:
            continue
        A, B, C = _ray_roots(obstacle, x, v)
        disc = B * B - A * C
        if disc < 0.0 or A == 0.0:
            continue
        if C <= 0.0 and B >= 0.0:
            # on the boundary and leaving
            continue
        q = -(B + np.copysign(np.sqrt(disc), B))
        roots = [q / A] if q == 0.0 else [q / A, C / q]
        positive = [t for t in roots if t > 0.0]
        if not positive:
            continue
        t = min(positive)
        if best is None or t < best.time:
            best = HitEvent(float(t), letter, x + t * v)
    return best


def reflect(incoming, normal):
    """Specular reflection v - 2 (v.n) n"""
    v = np.asarray(incoming, dtype=float)
    n = np.asarray(normal, dtype=float)
    dot = v.dot(n)
    if dot > 1e-12 * np.linalg.norm(v):
        raise ReflectionError("reflection from inside")
    return v - 2.0 * dot * n


def check_phase_point(scene, p, band=None):
    for letter, obstacle in enumerate(scene.obstacles, start=1):
        if obstacle.level(p.x) < 0.0 and obstacle.boundary_distance_estimate(p.x) > TOL_BOUNDARY:
            raise GeometryError(f"phase point inside obstacle {letter}")
    if band is not None and not band.contains(p.speed):
        raise GeometryError(f"speed {p.speed:.6g} outside [{band.alpha0}, {band.beta0}]")


def trace(scene, p, T, max_events=10_000, allow_grazing=False):
    """
    Follow the broken ray from `p` over [0, T].

    Tangential hits raise TangencyError unless `allow_grazing`, in which
    case they are continued as (nearly) unchanged reflections. Reaching
    `max_events` stops the ray at that event with the truncated flag set.
    """
    check_phase_point(scene, p)
    x, v = p.x, p.xi
    speed = np.linalg.norm(v)
    t = 0.0
    events = []
    last = None
    truncated = escaped = False
    while True:
        hit = first_hit(scene, PhasePoint(x, v), exclude=last)
        if hit is None:
            escaped = True
            break
        if t + hit.time > T:
            break
        normal = outward_normal(scene.obstacle(hit.obstacle), hit.point)
        cos = -v.dot(normal) / speed
        if cos < TANGENCY_TOL and not allow_grazing:
            event = HitEvent(t + hit.time, hit.obstacle, hit.point)
            raise TangencyError("tangency", event=event)
        outgoing = v - 2.0 * min(v.dot(normal), 0.0) * normal
        t += hit.time
        events.append(ReflectionEvent(t, hit.obstacle, hit.point, v, outgoing))
        x, v, last = hit.point, outgoing, hit.obstacle
        if len(events) >= max_events:
            truncated = True
            break
    if truncated or (escaped and not np.isfinite(T)):
        total_time = t
    else:
        total_time = float(T)
    return BrokenRay(p, tuple(events), total_time, truncated, escaped)


# ============================================
# TANGENCY
# ============================================
def _leg_offset(obstacle, x0, v, duration, arriving):
    """
    Impact-parameter offset of a straight leg from tangency to `obstacle`,
    or None when the closest approach lies outside the leg.
    """
    if obstacle.is_sphere:
        w = x0 - obstacle.center
        s = -w.dot(v) / v.dot(v)
        closest = np.linalg.norm(w + s * v)
        if arriving:
            return abs(obstacle.radius - closest)
        if 0.0 <= s <= duration:
            return abs(closest - obstacle.radius)
        return None
    u0 = obstacle.to_local(x0) / obstacle.semiaxes
    w = (obstacle.orientation @ v) / obstacle.semiaxes
    s = -u0.dot(w) / w.dot(w)
    rho = np.linalg.norm(u0 + s * w)
    if arriving or 0.0 <= s <= duration:
        return abs(rho - 1.0) * float(np.min(obstacle.semiaxes))
    return None


def tangency_classify(scene, p, eta, horizon=None):
    """Number of maximal stretches the forward ray spends within eta of tangency"""
    if horizon is None:
        horizon = 50.0 * scene.hull_diameter / p.speed
    ray = trace(scene, p, horizon, allow_grazing=True)
    starts = [p.x] + [e.point for e in ray.events]
    velocities = [p.xi] + [e.outgoing for e in ray.events]
    times = [0.0] + [e.time for e in ray.events]
    crossings = 0
    inside = False
    for k, (x0, v) in enumerate(zip(starts, velocities)):
        if k < len(ray.events):
            duration = ray.events[k].time - times[k]
            arriving = ray.events[k].obstacle
        else:
            duration = np.inf if ray.escaped else ray.total_time - times[k]
            arriving = None
        near = False
        for letter, obstacle in enumerate(scene.obstacles, start=1):
            offset = _leg_offset(obstacle, x0, v, duration, letter == arriving)
            if offset is not None and offset < eta:
                near = True
                break
        if near and not inside:
            crossings += 1
        inside = near
    return crossings


# ============================================
# DIVERGENCE
# ============================================
@dataclass(frozen=True)
class DivergenceSample:
    t_prime: float
    distance: float
    initial_distance: float
    flagged: bool = False


def divergence_probe(scene, p, q, t, tau, n_grid=401):
    """Best time alignment t' in [t - tau, t + tau] of the ray from q with Phi_t(p)"""
    initial = phase_distance(p, q)
    try:
        target = trace(scene, p, t).state_at(t)
        other = trace(scene, q, t + tau)
    except TangencyError as e:
        logger.debug(f"Divergence sample excluded: {e.message}")
        return DivergenceSample(np.nan, np.nan, initial, flagged=True)

    def distance(times):
        x, v = other.states_at(times)
        return (np.linalg.norm(x - target.x, axis=1)
                + np.linalg.norm(v - target.xi, axis=1))

    grid = np.linspace(max(0.0, t - tau), t + tau, n_grid)
    values = distance(grid)
    k = int(np.argmin(values))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, n_grid - 1)]
    best_t, best_d = grid[k], values[k]
    if hi > lo:
        res = optimize.minimize_scalar(lambda s: distance([s])[0], bounds=(lo, hi),
                                       method="bounded", options={"xatol": 1e-13})
        if res.fun < best_d:
            best_t, best_d = float(res.x), float(res.fun)
    return DivergenceSample(float(best_t), float(best_d), initial)


# ============================================
# TRAPPED SETS
# ============================================
@dataclass(frozen=True, eq=False)
class Tube:
    """Positions within delta of a segment, velocities in the speed band"""
    start: np.ndarray
    end: np.ndarray
    delta: float
    band: SpeedBand = field(default_factory=SpeedBand)

    @classmethod
    def between(cls, scene, i, j, delta, band=None):
        p, q = closest_pair(scene.obstacle(i), scene.obstacle(j))
        return cls(p, q, delta, band or SpeedBand())

    @property
    def axis(self):
        d = self.end - self.start
        return d / np.linalg.norm(d)

    def distance(self, positions):
        d = self.end - self.start
        s = np.clip((positions - self.start) @ d / d.dot(d), 0.0, 1.0)
        return np.linalg.norm(positions - (self.start + s[:, None] * d), axis=1)

    def contains(self, positions, velocities):
        speeds = np.linalg.norm(velocities, axis=1)
        in_band = (speeds >= self.band.alpha0 * (1 - 1e-12)) & (speeds <= self.band.beta0 * (1 + 1e-12))
        return (self.distance(positions) < self.delta) & in_band


@dataclass(frozen=True)
class TrappedGrid:
    n_axial: int = 9
    n_transverse: int = 3
    n_tilt: int = 3
    max_tilt: float = None
    n_speed: int = 1


def tube_grid(tube, grid):
    """Grid phase points of the tube, both orientations of the axis"""
    axis = tube.axis
    frame = tangent_frame(axis)
    length = np.linalg.norm(tube.end - tube.start)
    max_tilt = grid.max_tilt if grid.max_tilt is not None else tube.delta / length
    s_values = (np.arange(grid.n_axial) + 0.5) / grid.n_axial
    offsets = np.linspace(-tube.delta / 2, tube.delta / 2, grid.n_transverse)
    tilts = np.tan(np.linspace(-max_tilt, max_tilt, grid.n_tilt))
    speeds = np.linspace(tube.band.alpha0, tube.band.beta0, grid.n_speed)
    points = []
    for s in s_values:
        base = tube.start + s * (tube.end - tube.start)
        for a in offsets:
            for b in offsets:
                x = base + a * frame[0] + b * frame[1]
                for sign in (1.0, -1.0):
                    for ta in tilts:
                        for tb in tilts:
                            d = sign * axis + ta * frame[0] + tb * frame[1]
                            d /= np.linalg.norm(d)
                            for speed in speeds:
                                points.append(PhasePoint(x, speed * d))
    return points


def stays_in_tube(scene, tube, p, T):
    dt = tube.delta / (4.0 * tube.band.beta0)
    times = np.append(np.arange(0.0, T, dt), T)
    ray = trace(scene, p, T, allow_grazing=True)
    x, v = ray.states_at(times)
    return bool(np.all(tube.contains(x, v)))


def trapped_sample(scene, tube, T, grid=None):
    """Grid points rho of the tube with Phi_t(rho) in the tube at all sampled t in [0, T]"""
    grid = grid or TrappedGrid()
    rows = []
    for p in tube_grid(tube, grid):
        if any(o.level(p.x) <= 0.0 for o in scene.obstacles):
            continue
        if stays_in_tube(scene, tube, p, T):
            rows.append({"x": p.x[0], "y": p.x[1], "z": p.x[2],
                         "xi_x": p.xi[0], "xi_y": p.xi[1], "xi_z": p.xi[2]})
    logger.debug(f"Trapped sample: {len(rows)} points stay in the tube up to T={T}")
    return pd.DataFrame(rows, columns=["x", "y", "z", "xi_x", "xi_y", "xi_z"])

"""
Empirical probes of the billiard flow
Seeded batch experiments: tangency crossings, divergence of nearby rays,
trapped-set decay, event-count bounds and shadowing of periodic orbits
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import pandas as pd

from billiard_lab.config import THREADS, logger
from billiard_lab.core.billiard import (
    PhasePoint,
    SpeedBand,
    divergence_probe,
    tangency_classify,
    trace,
)
from billiard_lab.core.errors import BilliardLabError, InsufficientDataError, TangencyError
from billiard_lab.core.geometry import tangent_frame


def _parallel_map(func, items, workers=None):
    """Map preserving item order"""
    workers = workers or THREADS
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            return list(executor.map(func, items))
    return [func(item) for item in items]


def _unit_vectors(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1)[:, None]


def sample_exterior_points(scene, rng, n, radius=None):
    """Uniform points of the ball around the scene centroid lying outside every obstacle"""
    radius = radius or scene.hull_diameter
    points = []
    while len(points) < n:
        batch = scene.centroid + radius * _unit_vectors(rng, 2 * n) * rng.random(2 * n)[:, None] ** (1 / 3)
        for x in batch:
            if all(o.level(x) > 1e-6 for o in scene.obstacles):
                points.append(x)
                if len(points) == n:
                    break
    return np.array(points)


def sample_phase_points(scene, rng, n, band=None, radius=None):
    band = band or SpeedBand()
    positions = sample_exterior_points(scene, rng, n, radius)
    speeds = rng.uniform(band.alpha0, band.beta0, n)
    velocities = _unit_vectors(rng, n) * speeds[:, None]
    return [PhasePoint(x, v) for x, v in zip(positions, velocities)]


def choose_tau(scene, delta, band=None):
    """tau = min(delta / (2 beta0), gap-crossing time / 4)"""
    band = band or SpeedBand()
    return min(delta / (2.0 * band.beta0), scene.d_min / band.beta0 / 4.0)


# ============================================
# TANGENCY
# ============================================
def tangency_sweep(scene, n_rays, eta=1e-3, seed=0, band=None, horizon=None, workers=None):
    """Crossing count of the eta-neighborhood of tangent rays for random forward rays"""
    rng = np.random.default_rng(seed)
    points = sample_phase_points(scene, rng, n_rays, band)
    if horizon is None:
        horizon = 50.0 * scene.hull_diameter / (band or SpeedBand()).alpha0
    counts = _parallel_map(lambda p: tangency_classify(scene, p, eta, horizon), points, workers)
    frame = pd.DataFrame({"sample": np.arange(n_rays), "crossings": counts})
    logger.info(f"Tangency sweep: {n_rays} rays, max crossings {frame['crossings'].max()}")
    return frame


# ============================================
# DIVERGENCE
# ============================================
def divergence_sweep(scene, n_pairs, t=10.0, tau=None, seed=0, band=None,
                     min_offset=1e-6, max_offset=1e-2, workers=None):
    """Best-aligned distance after time t for random pairs of nearby phase points"""
    rng = np.random.default_rng(seed)
    band = band or SpeedBand()
    tau = tau if tau is not None else choose_tau(scene, 0.1 * scene.d_min, band)
    anchors = sample_phase_points(scene, rng, n_pairs, band)
    sizes = np.exp(rng.uniform(np.log(min_offset), np.log(max_offset), n_pairs))
    dx = _unit_vectors(rng, n_pairs) * sizes[:, None]
    dv = _unit_vectors(rng, n_pairs) * sizes[:, None]
    pairs = []
    for p, a, b in zip(anchors, dx, dv):
        q = PhasePoint(p.x + a, p.xi + b)
        if any(o.level(q.x) <= 0.0 for o in scene.obstacles):
            q = PhasePoint(p.x, p.xi + b)
        pairs.append((p, q))

    def probe(pair):
        return divergence_probe(scene, pair[0], pair[1], t, tau)

    samples = _parallel_map(probe, pairs, workers)
    excluded = sum(s.flagged for s in samples)
    if excluded:
        logger.warning(f"Divergence sweep: {excluded} samples excluded for tangency")
    return pd.DataFrame({
        "sample": np.arange(n_pairs),
        "initial_distance": [s.initial_distance for s in samples],
        "t_prime": [s.t_prime for s in samples],
        "distance": [s.distance for s in samples],
        "flagged": [s.flagged for s in samples],
    })


@dataclass(frozen=True)
class DivergenceFit:
    C: float
    mu: float
    r2: float
    n_used: int


def fit_divergence_exponent(frame):
    """Least squares of log d_t = log C + mu log d_0 over unflagged samples"""
    use = frame[~frame["flagged"] & (frame["distance"] > 0.0) & (frame["initial_distance"] > 0.0)]
    if len(use) < 3:
        raise InsufficientDataError("insufficient data", samples=len(use))
    x = np.log(use["initial_distance"].to_numpy())
    y = np.log(use["distance"].to_numpy())
    mu, logC = np.polyfit(x, y, 1)
    total = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum((y - (mu * x + logC)) ** 2) / total if total > 0.0 else 1.0
    return DivergenceFit(float(np.exp(logC)), float(mu), float(r2), len(use))


# ============================================
# TRAPPED SETS
# ============================================
def sample_tube(tube, rng, n):
    """Uniform positions in the tube, uniform directions, speeds uniform in the band"""
    axis = tube.end - tube.start
    s = rng.random(n)
    r = tube.delta * np.sqrt(rng.random(n))
    phi = rng.uniform(0.0, 2.0 * np.pi, n)
    frame = tangent_frame(axis)
    positions = (tube.start + s[:, None] * axis
                 + (r * np.cos(phi))[:, None] * frame[0] + (r * np.sin(phi))[:, None] * frame[1])
    speeds = rng.uniform(tube.band.alpha0, tube.band.beta0, n)
    return positions, _unit_vectors(rng, n) * speeds[:, None]


def tube_exit_time(scene, tube, p, T_max):
    """First sampled time at which the ray leaves the tube (inf if it stays up to T_max)"""
    dt = tube.delta / (4.0 * tube.band.beta0)
    times = np.append(np.arange(0.0, T_max, dt), T_max)
    try:
        ray = trace(scene, p, T_max)
    except TangencyError:
        ray = trace(scene, p, T_max, allow_grazing=True)
    x, v = ray.states_at(times)
    outside = ~tube.contains(x, v)
    if not outside.any():
        return np.inf
    return float(times[np.argmax(outside)])


def trapped_fraction(scene, tube, T_values, n_samples=2000, seed=0, workers=None):
    """Monte-Carlo measure of T_T(D) relative to T_0(D) = D for each T"""
    rng = np.random.default_rng(seed)
    positions, velocities = sample_tube(tube, rng, n_samples)
    keep = [k for k, x in enumerate(positions) if all(o.level(x) > 0.0 for o in scene.obstacles)]
    points = [PhasePoint(positions[k], velocities[k]) for k in keep]
    T_values = np.asarray(T_values, dtype=float)
    exits = np.array(_parallel_map(lambda p: tube_exit_time(scene, tube, p, T_values.max()), points, workers))
    trapped = np.array([int(np.sum(exits > T)) for T in T_values])
    return pd.DataFrame({"T": T_values, "trapped": trapped, "fraction": trapped / max(len(points), 1)})


# ============================================
# PERIODIC ORBIT NEIGHBORHOODS
# ============================================
def orbit_distance(orbit, positions, velocities):
    """Phase distance to the periodic trajectory traversed at the sample's own speed"""
    positions = np.atleast_2d(positions)
    velocities = np.atleast_2d(velocities)
    speeds = np.linalg.norm(velocities, axis=1)
    starts = orbit.points
    ends = np.roll(orbit.points, -1, axis=0)
    best = np.full(len(positions), np.inf)
    for a, b in zip(starts, ends):
        d = b - a
        e = d / np.linalg.norm(d)
        s = np.clip((positions - a) @ d / d.dot(d), 0.0, 1.0)
        gap = np.linalg.norm(positions - (a + s[:, None] * d), axis=1)
        turn = np.linalg.norm(velocities - speeds[:, None] * e, axis=1)
        best = np.minimum(best, gap + turn)
    return best


@dataclass(frozen=True)
class EventBound:
    max_events: int
    mean_events: float
    n_used: int
    n_rejected: int


def event_count_bound(scene, table, delta, T, n_samples=500, seed=0, band=None, workers=None):
    """Largest event count over [0, T] for random points at distance >= delta from every orbit"""
    rng = np.random.default_rng(seed)
    points = sample_phase_points(scene, rng, n_samples, band)
    far = []
    for p in points:
        if all(orbit_distance(o, p.x, p.xi)[0] >= delta for o in table):
            far.append(p)

    def count(p):
        try:
            return len(trace(scene, p, T).events)
        except TangencyError:
            return len(trace(scene, p, T, allow_grazing=True).events)

    counts = np.array(_parallel_map(count, far, workers), dtype=int)
    if counts.size == 0:
        raise InsufficientDataError("insufficient data", samples=0)
    bound = EventBound(int(counts.max()), float(counts.mean()), len(far), n_samples - len(far))
    logger.info(f"Event count bound over [0, {T}]: {bound.max_events} ({bound.n_used} samples)")
    return bound


def shadowing_probe(scene, orbit, delta, n_samples=200, seed=0, band=None, n_times=64):
    """
    Largest excursion max_t d(Phi_t(rho), gamma) over [0, tau] for samples
    with d(rho, gamma) < delta and d(Phi_tau(rho), gamma) < delta.
    """
    rng = np.random.default_rng(seed)
    band = band or SpeedBand()
    tau = choose_tau(scene, delta, band)
    legs = np.roll(orbit.points, -1, axis=0) - orbit.points
    rows = []
    for k in range(n_samples):
        i = rng.integers(len(legs))
        e = legs[i] / np.linalg.norm(legs[i])
        speed = rng.uniform(band.alpha0, band.beta0)
        x = orbit.points[i] + rng.uniform(0.1, 0.9) * legs[i] + 0.25 * delta * _unit_vectors(rng, 1)[0]
        v = speed * e + 0.25 * delta * _unit_vectors(rng, 1)[0]
        if any(o.level(x) <= 0.0 for o in scene.obstacles):
            continue
        p = PhasePoint(x, v)
        try:
            ray = trace(scene, p, tau)
        except BilliardLabError:
            continue
        times = np.linspace(0.0, tau, n_times)
        xs, vs = ray.states_at(times)
        distances = orbit_distance(orbit, xs, vs)
        if distances[0] < delta and distances[-1] < delta:
            rows.append({"sample": k, "start": distances[0], "end": distances[-1],
                         "max_excursion": distances.max()})
    frame = pd.DataFrame(rows, columns=["sample", "start", "end", "max_excursion"])
    logger.info(f"Shadowing probe: tau={tau:.4g}, {len(frame)} admissible samples")
    return tau, frame

"""
Periodic broken rays
Length minimization per cyclic word, Poincare linearization and the
contracting spectrum (d_gamma, mu, mu', lambda_gamma)
"""
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from billiard_lab.config import (
    FD_STEP,
    HYPERBOLIC_TOL,
    ILL_CONDITIONED_COS,
    ORBIT_MOVE_TOL,
    ORBIT_SWEEP_BUDGET,
    RESIDUAL_TOL,
    THREADS,
    logger,
)
from billiard_lab.core.billiard import PhasePoint, first_hit, trace
from billiard_lab.core.errors import (
    BilliardLabError,
    IllConditionedError,
    NonHyperbolicOrbitError,
    ShadowedItineraryError,
    SolverStalledError,
)
from billiard_lab.core.geometry import boundary_project, no_eclipse_check, normal_and_shape, tangent_frame
from billiard_lab.core.symbolic import (
    PrimitiveStory,
    enumerate_primitive_cyclic,
    reversal_key,
    serialize_word,
)

NEWTON_SWITCH = 1e-6
ARMIJO = 1e-4
SYMPLECTIC_J = np.block([[np.zeros((2, 2)), np.eye(2)], [-np.eye(2), np.zeros((2, 2))]])


def _unit(v):
    norm = np.linalg.norm(v)
    return v / norm, norm


def cyclic_length(points):
    points = np.asarray(points)
    return float(np.sum(np.linalg.norm(np.roll(points, -1, axis=0) - points, axis=1)))


# ============================================
# LENGTH MINIMIZATION
# ============================================
def initial_points(scene, word):
    """Boundary points of each obstacle facing the centroid of the itinerary's centers"""
    centers = np.array([scene.obstacle(j).center for j in word])
    target = centers.mean(axis=0)
    points = []
    for k, j in enumerate(word):
        obstacle = scene.obstacle(j)
        direction = target - obstacle.center
        if np.linalg.norm(direction) < 1e-12 * scene.hull_diameter:
            direction = centers[(k + 1) % len(word)] - obstacle.center
        points.append(obstacle.exit_point(direction))
    return np.array(points)


def _point_newton(obstacle, q, prev, nxt):
    """One Riemannian Newton step for |q - prev| + |q - nxt| on the boundary"""
    frame = normal_and_shape(obstacle, q)
    ua, la = _unit(q - prev)
    ub, lb = _unit(q - nxt)
    g = ua + ub
    H = (np.eye(3) - np.outer(ua, ua)) / la + (np.eye(3) - np.outer(ub, ub)) / lb
    T = frame.tangents
    grad = T @ g
    if np.linalg.norm(grad) < 1e-15:
        return q
    hess = T @ H @ T.T - g.dot(frame.normal) * frame.shape
    try:
        step = -np.linalg.solve(hess, grad)
    except np.linalg.LinAlgError:
        step = -grad * min(la, lb)
    if step.dot(grad) >= 0.0:
        step = -grad * min(la, lb)

    def f(x):
        return np.linalg.norm(x - prev) + np.linalg.norm(x - nxt)

    f0 = la + lb
    slope = step.dot(grad)
    beta = 1.0
    for _ in range(40):
        candidate = boundary_project(obstacle, q + beta * (T.T @ step))
        if f(candidate) <= f0 + ARMIJO * beta * slope + 1e-15 * f0:
            return candidate
        beta *= 0.5
    return q


def stacked_system(scene, word, points):
    """Reduced gradient (2m,) and Riemannian Hessian (2m, 2m) of the cyclic length"""
    m = len(word)
    frames = [normal_and_shape(scene.obstacle(j), q) for j, q in zip(word, points)]
    grad3 = np.zeros((m, 3))
    hess3 = np.zeros((m, m, 3, 3))
    for i in range(m):
        j = (i + 1) % m
        u, length = _unit(points[i] - points[j])
        K = (np.eye(3) - np.outer(u, u)) / length
        grad3[i] += u
        grad3[j] -= u
        hess3[i, i] += K
        hess3[j, j] += K
        hess3[i, j] -= K
        hess3[j, i] -= K
    grad = np.concatenate([f.tangents @ g for f, g in zip(frames, grad3)])
    hess = np.zeros((2 * m, 2 * m))
    for i in range(m):
        for j in range(m):
            hess[2 * i:2 * i + 2, 2 * j:2 * j + 2] = frames[i].tangents @ hess3[i, j] @ frames[j].tangents.T
        hess[2 * i:2 * i + 2, 2 * i:2 * i + 2] -= grad3[i].dot(frames[i].normal) * frames[i].shape
    return grad, 0.5 * (hess + hess.T), frames


def reflection_residual(scene, word, points):
    """Largest tangential component of e_in - e_out over the reflection points"""
    grad, _, _ = stacked_system(scene, word, points)
    return float(np.max(np.linalg.norm(grad.reshape(-1, 2), axis=1)))


def _stacked_newton(scene, word, points, max_iter=30):
    points = points.copy()
    for it in range(max_iter):
        grad, hess, frames = stacked_system(scene, word, points)
        if np.max(np.abs(grad)) < 1e-15:
            return points, it
        try:
            step = -np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            return points, it
        if step.dot(grad) >= 0.0:
            return points, it
        L0 = cyclic_length(points)
        slope = step.dot(grad)
        beta = 1.0
        for _ in range(40):
            moved = np.array([
                boundary_project(scene.obstacle(j), q + beta * (f.tangents.T @ step[2 * k:2 * k + 2]))
                for k, (j, q, f) in enumerate(zip(word, points, frames))
            ])
            if cyclic_length(moved) <= L0 + ARMIJO * beta * slope + 1e-15 * L0:
                break
            beta *= 0.5
        else:
            return points, it
        points = moved
    return points, max_iter


def check_unshadowed(scene, word, points):
    m = len(word)
    for i in range(m):
        j = (i + 1) % m
        start, end = points[i], points[j]
        hit = first_hit(scene, PhasePoint(start, end - start), exclude=word[i])
        if hit is None or hit.obstacle != word[j] or abs(hit.time - 1.0) > 1e-8:
            blocker = None if hit is None else hit.obstacle
            raise ShadowedItineraryError("shadowed itinerary", word=serialize_word(word), leg=i + 1,
                                         blocker=blocker)


def solve_orbit_points(scene, word, max_sweeps=ORBIT_SWEEP_BUDGET):
    """
    Reflection points of the periodic orbit with itinerary `word`.

    Cyclic coordinate descent re-optimizes one point at a time with its two
    neighbors fixed; once the sweeps move points by less than NEWTON_SWITCH
    the stacked Newton iteration polishes all points together.
    Returns (points, residual, iterations).
    """
    word = tuple(word)
    m = len(word)
    points = initial_points(scene, word)
    iterations = 0
    residual = np.inf
    for sweep in range(1, max_sweeps + 1):
        move = 0.0
        for i in range(m):
            new = _point_newton(scene.obstacle(word[i]), points[i], points[i - 1], points[(i + 1) % m])
            move = max(move, float(np.linalg.norm(new - points[i])))
            points[i] = new
        iterations = sweep
        if move < NEWTON_SWITCH:
            polished, n_newton = _stacked_newton(scene, word, points)
            polished_residual = reflection_residual(scene, word, polished)
            if polished_residual < RESIDUAL_TOL:
                points, residual = polished, polished_residual
                iterations += n_newton
                break
        if move < ORBIT_MOVE_TOL * scene.hull_diameter:
            residual = reflection_residual(scene, word, points)
            break
    else:
        residual = reflection_residual(scene, word, points)
    if residual > RESIDUAL_TOL:
        logger.error(f"Orbit solver stalled on {serialize_word(word)}: residual {residual:.3g}")
        raise SolverStalledError("orbit solver stalled", residual=residual, word=serialize_word(word))
    logger.debug(f"Orbit {serialize_word(word)} converged in {iterations} iterations")
    return points, residual, iterations


# ============================================
# LINEARIZATION
# ============================================
@dataclass(frozen=True, eq=False)
class TransferMatrix:
    """
    Linearized return map on the transverse section through the middle of
    the first leg, acting on (position, direction) variations in the
    section frame.
    """
    matrix: np.ndarray
    section_point: np.ndarray
    section_direction: np.ndarray
    frame: np.ndarray

    @property
    def symplectic_defect(self):
        M = self.matrix
        scale = max(1.0, np.linalg.norm(M, 2) ** 2)
        return float(np.linalg.norm(M.T @ SYMPLECTIC_J @ M - SYMPLECTIC_J, 2) / scale)


def flight_block(length):
    block = np.eye(6)
    block[:3, 3:] = length * np.eye(3)
    return block


def mirror_block(e_in, e_out, surface):
    """Reflection of (delta x, delta e) at a boundary point, both measured transverse to the ray"""
    n = surface.normal
    W = surface.shape_3d
    c = e_in.dot(n)
    if abs(c) < ILL_CONDITIONED_COS:
        raise IllConditionedError("ill-conditioned linearization", cos_incidence=abs(c))
    A = np.eye(3) - np.outer(e_in, n) / c
    block = np.zeros((6, 6))
    block[:3, :3] = (np.eye(3) - np.outer(e_out, e_out)) @ A
    block[3:, :3] = -2.0 * (np.outer(n, e_in) + c * np.eye(3)) @ W @ A
    block[3:, 3:] = np.eye(3) - 2.0 * np.outer(n, n)
    return block


def _section(points):
    e0, length = _unit(points[1] - points[0])
    return 0.5 * (points[0] + points[1]), e0, length, tangent_frame(e0)


def _analytic_jacobian(scene, word, points):
    m = len(word)
    middle, e0, l0, frame = _section(points)
    M = flight_block(0.5 * l0)
    for step in range(1, m + 1):
        i = step % m
        e_in, _ = _unit(points[i] - points[i - 1])
        e_out, length = _unit(points[(i + 1) % m] - points[i])
        surface = normal_and_shape(scene.obstacle(word[i]), points[i])
        M = mirror_block(e_in, e_out, surface) @ M
        M = flight_block(0.5 * l0 if i == 0 else length) @ M
    embed = np.zeros((6, 4))
    embed[:3, :2] = frame.T
    embed[3:, 2:] = frame.T
    return TransferMatrix(embed.T @ M @ embed, middle, e0, frame)


def _return_map(scene, word, middle, e0, frame, state):
    m = len(word)
    x = middle + frame.T @ state[:2]
    d = e0 + frame.T @ state[2:]
    d /= np.linalg.norm(d)
    ray = trace(scene, PhasePoint(x, d), np.inf, max_events=m)
    expected = tuple(word[1:]) + (word[0],)
    if ray.story != expected:
        raise IllConditionedError("perturbed ray leaves the itinerary", story=serialize_word(ray.story))
    last = ray.events[-1]
    v = last.outgoing / np.linalg.norm(last.outgoing)
    s = (middle - last.point).dot(e0) / v.dot(e0)
    xs = last.point + s * v
    return np.concatenate([frame @ (xs - middle), frame @ v])


def _fd_jacobian(scene, word, points, step=FD_STEP):
    middle, e0, _, frame = _section(points)
    M = np.zeros((4, 4))
    for k in range(4):
        h = np.zeros(4)
        h[k] = step
        plus = _return_map(scene, word, middle, e0, frame, h)
        minus = _return_map(scene, word, middle, e0, frame, -h)
        M[:, k] = (plus - minus) / (2.0 * step)
    return TransferMatrix(M, middle, e0, frame)


def poincare_jacobian(scene, orbit, method="analytic"):
    """4x4 linearized Poincare map of a periodic orbit ('analytic' or 'finite_difference')"""
    if method == "analytic":
        return _analytic_jacobian(scene, orbit.itinerary, orbit.points)
    if method == "finite_difference":
        return _fd_jacobian(scene, orbit.itinerary, orbit.points)
    raise ValueError(f"unknown jacobian method '{method}'")


def jacobian_agreement(scene, orbit):
    """Largest entrywise relative gap between the analytic and finite-difference maps"""
    analytic = poincare_jacobian(scene, orbit).matrix
    numeric = poincare_jacobian(scene, orbit, method="finite_difference").matrix
    scale = np.max(np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric)) / scale)


@dataclass(frozen=True)
class EigenSplit:
    expanding: tuple
    contracting: tuple
    lambda_gamma: float
    pairing_defect: float


def eigen_split(tm):
    """
    Expanding pair, contracting pair (mu, mu') and lambda = sqrt(|mu mu'|).

    The contracting pair is read off the symplectic inverse -J M^T J, whose
    dominant eigenvalues are 1/mu and 1/mu', so tiny eigenvalues keep their
    relative accuracy.
    """
    M = tm.matrix if isinstance(tm, TransferMatrix) else np.asarray(tm, dtype=float)
    values = np.linalg.eigvals(M)
    if np.any(np.abs(np.abs(values) - 1.0) < HYPERBOLIC_TOL):
        raise NonHyperbolicOrbitError("non-hyperbolic orbit", spectrum=[complex(v) for v in values])
    if np.sum(np.abs(values) < 1.0) != 2:
        raise NonHyperbolicOrbitError("non-hyperbolic orbit", spectrum=[complex(v) for v in values])
    inverse = -SYMPLECTIC_J @ M.T @ SYMPLECTIC_J
    inverse_values = np.linalg.eigvals(inverse)
    expanding = values[np.argsort(-np.abs(values))][:2]
    contracting = 1.0 / inverse_values[np.argsort(-np.abs(inverse_values))][:2]
    defect = float(max(abs(abs(z * mu) - 1.0) for z, mu in zip(expanding, contracting)))
    lam = float(np.sqrt(abs(contracting[0]) * abs(contracting[1])))
    return EigenSplit(tuple(expanding), tuple(contracting), lam, defect)


# ============================================
# ORBITS
# ============================================
@dataclass(frozen=True, eq=False)
class PeriodicOrbit:
    itinerary: tuple
    points: np.ndarray
    d_gamma: float
    residual: float
    solver_iters: int
    spectrum: tuple = ()
    mu: tuple = ()
    lambda_gamma: float = float("nan")

    @property
    def word(self):
        return serialize_word(self.itinerary)

    @property
    def leg_lengths(self):
        return np.linalg.norm(np.roll(self.points, -1, axis=0) - self.points, axis=1)

    def to_row(self):
        return {
            "word": self.word,
            "length": len(self.itinerary),
            "d_gamma": self.d_gamma,
            "mu1": abs(self.mu[0]),
            "mu2": abs(self.mu[1]),
            "lambda": self.lambda_gamma,
            "residual": self.residual,
            "solver_iters": self.solver_iters,
        }


def find_periodic_orbit(scene, word):
    """Periodic orbit of a primitive cyclic word, points ordered along its canonical rotation"""
    itinerary = PrimitiveStory(tuple(word)).word
    points, residual, iterations = solve_orbit_points(scene, itinerary)
    check_unshadowed(scene, itinerary, points)
    orbit = PeriodicOrbit(itinerary, points, cyclic_length(points), residual, iterations)
    split = eigen_split(poincare_jacobian(scene, orbit))
    return replace(
        orbit,
        spectrum=split.expanding + split.contracting,
        mu=split.contracting,
        lambda_gamma=split.lambda_gamma,
    )


def length_hessian(scene, orbit):
    _, hess, _ = stacked_system(scene, orbit.itinerary, orbit.points)
    return hess


def is_strict_minimum(scene, orbit, tol=1e-8):
    return bool(np.min(np.linalg.eigvalsh(length_hessian(scene, orbit))) > tol)


@dataclass
class OrbitTable:
    """Periodic orbits keyed by canonical primitive word, in length-then-lexicographic order"""
    max_word_len: int
    orbits: list = field(default_factory=list)
    failures: dict = field(default_factory=dict)
    attempted: int = 0

    def __len__(self):
        return len(self.orbits)

    def __iter__(self):
        return iter(self.orbits)

    def get(self, word):
        word = PrimitiveStory(tuple(word)).word
        return next((o for o in self.orbits if o.itinerary == word), None)

    def shell(self, k):
        return [o for o in self.orbits if len(o.itinerary) == k]

    @property
    def failure_rate(self):
        return len(self.failures) / self.attempted if self.attempted else 0.0

    def truncated(self, k):
        keep_failures = {w: msg for w, msg in self.failures.items() if len(w.split("-")) <= k}
        orbits = [o for o in self.orbits if len(o.itinerary) <= k]
        return OrbitTable(min(k, self.max_word_len), orbits, keep_failures,
                          len(orbits) + len(keep_failures))

    def reversal_classes(self):
        classes = defaultdict(list)
        for orbit in self.orbits:
            classes[reversal_key(orbit.itinerary)].append(orbit)
        return dict(classes)

    def to_frame(self):
        columns = ["word", "length", "d_gamma", "mu1", "mu2", "lambda", "residual", "solver_iters"]
        return pd.DataFrame([o.to_row() for o in self.orbits], columns=columns)


def _solve_word(scene, word):
    try:
        return word, find_periodic_orbit(scene, word), None
    except BilliardLabError as e:
        logger.warning(f"No orbit for {serialize_word(word)}: {e.message}")
        return word, None, e.message


def enumerate_orbits(scene, max_word_len, workers=None):
    """One periodic orbit per canonical primitive cyclic word of length <= max_word_len"""
    verdict = no_eclipse_check(scene)
    if not verdict.passed:
        logger.warning(f"Scene fails the no-eclipse check (triple {verdict.triple}); "
                       f"shadowed itineraries will be reported as failures")
    words = list(enumerate_primitive_cyclic(scene.n, max_word_len)) if max_word_len >= 2 else []
    workers = workers or THREADS
    if workers > 1 and len(words) > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            results = list(executor.map(lambda w: _solve_word(scene, w), words))
    else:
        results = [_solve_word(scene, w) for w in words]
    table = OrbitTable(max_word_len, attempted=len(words))
    for word, orbit, error in results:
        if orbit is None:
            table.failures[serialize_word(word)] = error
        else:
            table.orbits.append(orbit)
    logger.info(f"Orbit table up to length {max_word_len}: {len(table.orbits)} orbits, "
                f"{len(table.failures)} failures")
    return table

"""
Geometric-optics amplitudes along reflected rays
Wavefront curvature transport, the curvature products Lambda_phi_J, their
convergence along repeated primitive stories and the decay profile D(t)
"""
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from billiard_lab.config import logger
from billiard_lab.core.billiard import PhasePoint, SpeedBand, trace
from billiard_lab.core.errors import (
    CausticError,
    ConvergenceViolationError,
    InsufficientDataError,
    PhaseNotDefinedError,
    TangencyError,
)
from billiard_lab.core.geometry import normal_and_shape, tangent_frame
from billiard_lab.core.ikawa import CONVERGES, pressure_partial_sum
from billiard_lab.core.orbits import flight_block, mirror_block
from billiard_lab.core.symbolic import serialize_word

DECAY_NOT_GUARANTEED = "decay not guaranteed"
TABLE_INCOMPLETE = "orbit table incomplete"
DECAY_SERIES = ("smooth", "story")
STENCIL_DELTA = 1e-3


@dataclass(frozen=True, eq=False)
class WavefrontCurvature:
    """Symmetric curvature operator Q of a wavefront, in a frame transverse to `direction`"""
    Q: np.ndarray
    frame: np.ndarray
    direction: np.ndarray

    @classmethod
    def plane(cls, direction):
        direction = np.asarray(direction, dtype=float)
        direction = direction / np.linalg.norm(direction)
        return cls(np.zeros((2, 2)), tangent_frame(direction), direction)

    @classmethod
    def point_source(cls, direction, eps=1e-8):
        wave = cls.plane(direction)
        return cls(np.eye(2) / eps, wave.frame, wave.direction)

    @property
    def gauss(self):
        return float(np.linalg.det(self.Q))

    @property
    def asymmetry(self):
        return float(np.max(np.abs(self.Q - self.Q.T)))

    def principal_curvatures(self):
        return np.linalg.eigvalsh(0.5 * (self.Q + self.Q.T))

    def in_frame(self, frame):
        G = frame @ self.frame.T
        return WavefrontCurvature(G @ self.Q @ G.T, frame, self.direction)

    def after_flight(self, t):
        """Q(I + tQ)^-1, with the determinant of I + tQ"""
        spread = np.eye(2) + t * self.Q
        det = float(np.linalg.det(spread))
        if det <= 0.0:
            raise CausticError("caustic on leg", flight=t)
        Q = self.Q @ np.linalg.inv(spread)
        return WavefrontCurvature(0.5 * (Q + Q.T), self.frame, self.direction), det

    def after_reflection(self, surface):
        """Mirror update at a boundary point; the outgoing frame is the reflected frame"""
        e_in = self.direction
        n = surface.normal
        mirror = np.eye(3) - 2.0 * np.outer(n, n)
        e_out = mirror @ e_in
        block = mirror_block(e_in, e_out, surface)
        frame_out = self.frame @ mirror
        position = frame_out @ block[:3, :3] @ self.frame.T
        Q = (frame_out @ block[3:, :3] @ self.frame.T + self.Q) @ np.linalg.inv(position)
        return WavefrontCurvature(0.5 * (Q + Q.T), frame_out, e_out)


@dataclass(frozen=True)
class WavefrontStage:
    label: str
    obstacle: int
    point: np.ndarray
    curvature: WavefrontCurvature


def _realize(scene, start, story):
    story = tuple(story)
    if not story:
        return None
    try:
        ray = trace(scene, start, np.inf, max_events=len(story))
    except TangencyError as e:
        raise PhaseNotDefinedError("phase not defined here", story=serialize_word(story), reason=e.message)
    if ray.story != story:
        raise PhaseNotDefinedError("phase not defined here", story=serialize_word(story),
                                   realized=serialize_word(ray.story))
    return ray


def wavefront_transport(scene, start, Q0, story, end_distance=0.0):
    """Curvature before and after every reflection of `story`, then at the endpoint"""
    direction = start.xi / start.speed
    wave = Q0 if isinstance(Q0, WavefrontCurvature) else WavefrontCurvature(
        np.asarray(Q0, dtype=float), tangent_frame(direction), direction)
    ray = _realize(scene, start, story)
    stages = []
    position = start.x
    for event in (ray.events if ray is not None else ()):
        flight = np.linalg.norm(event.point - position)
        wave, _ = wave.after_flight(flight)
        stages.append(WavefrontStage("pre", event.obstacle, event.point, wave))
        surface = normal_and_shape(scene.obstacle(event.obstacle), event.point)
        wave = wave.after_reflection(surface)
        stages.append(WavefrontStage("post", event.obstacle, event.point, wave))
        position = event.point
    wave, _ = wave.after_flight(end_distance)
    stages.append(WavefrontStage("end", 0, position + end_distance * wave.direction, wave))
    return stages


def ray_bundle_curvature(scene, start, Q0, story, end_distance=0.0, eps=1e-6):
    """
    Finite-difference wavefront curvature after `story`: a pencil of nearby
    rays of the incoming wave is traced and its spreading is measured on the
    plane transverse to the central ray at the endpoint.
    """
    direction = start.xi / start.speed
    frame = tangent_frame(direction)
    Q0 = np.asarray(Q0.Q if isinstance(Q0, WavefrontCurvature) else Q0, dtype=float)
    central = _realize(scene, start, story)
    last = central.events[-1]
    e_end = last.outgoing / np.linalg.norm(last.outgoing)
    anchor = last.point + end_distance * e_end
    end_frame = frame
    for event in central.events:
        n = (event.outgoing - event.incoming)
        n /= np.linalg.norm(n)
        end_frame = end_frame @ (np.eye(3) - 2.0 * np.outer(n, n))

    def endpoint(offset):
        x = start.x + frame.T @ offset
        d = direction + frame.T @ (Q0 @ offset)
        ray = _realize(scene, PhasePoint(x, d / np.linalg.norm(d)), story)
        final = ray.events[-1]
        v = final.outgoing / np.linalg.norm(final.outgoing)
        s = (anchor - final.point).dot(e_end) / v.dot(e_end)
        return end_frame @ (final.point + s * v - anchor), end_frame @ v

    positions = np.zeros((2, 2))
    slopes = np.zeros((2, 2))
    for k in range(2):
        h = np.zeros(2)
        h[k] = eps
        x_plus, v_plus = endpoint(h)
        x_minus, v_minus = endpoint(-h)
        positions[:, k] = (x_plus - x_minus) / (2.0 * eps)
        slopes[:, k] = (v_plus - v_minus) / (2.0 * eps)
    Q = slopes @ np.linalg.inv(positions)
    return WavefrontCurvature(0.5 * (Q + Q.T), end_frame, e_end)


# ============================================
# AMPLITUDES
# ============================================
def window_constants(scene, band=None):
    """(c1, c2) of the support window c1|J| <= t <= c2(|J| + 1): c1 = d_min / (2 beta0), c2 = hull_diameter / (2 alpha0)"""
    band = band or SpeedBand()
    return scene.d_min / (2.0 * band.beta0), scene.hull_diameter / (2.0 * band.alpha0)


def support_window(scene, story_len, band=None):
    c1, c2 = window_constants(scene, band)
    return c1 * story_len, c2 * (story_len + 1)


@dataclass(frozen=True)
class AmplitudeTrace:
    story: tuple
    lambda_phi: float
    leg_factors: tuple
    spreading: float
    t_window: tuple

    @property
    def agreement(self):
        return abs(self.lambda_phi - self.spreading) / self.spreading


def _spreading(scene, start, ray, end_distance):
    """Lambda_phi from the area of a transported pencil of parallel rays"""
    direction = start.xi / start.speed
    frame = tangent_frame(direction)
    bundle = np.zeros((6, 2))
    bundle[:3] = frame.T
    position, e = start.x, direction
    for event in (ray.events if ray is not None else ()):
        e_out = event.outgoing / np.linalg.norm(event.outgoing)
        bundle = flight_block(np.linalg.norm(event.point - position)) @ bundle
        surface = normal_and_shape(scene.obstacle(event.obstacle), event.point)
        bundle = mirror_block(e, e_out, surface) @ bundle
        position, e = event.point, e_out
    bundle = flight_block(end_distance) @ bundle
    area = abs(np.linalg.det(tangent_frame(e) @ bundle[:3]))
    return area ** -0.5


def lambda_phi(scene, story, direction, start_point, end_distance=0.0, band=None):
    """
    Curvature product of the plane wave moving along `direction` through
    `start_point`, reflected along `story` and evaluated `end_distance`
    past the last reflection.
    """
    story = tuple(story)
    direction = np.asarray(direction, dtype=float)
    start = PhasePoint(start_point, direction / np.linalg.norm(direction))
    ray = _realize(scene, start, story)
    wave = WavefrontCurvature.plane(direction)
    position = start.x
    factors = []
    for event in (ray.events if ray is not None else ()):
        flight = np.linalg.norm(event.point - position)
        factors.append(_leg_factor(wave, flight))
        wave, _ = wave.after_flight(flight)
        wave = wave.after_reflection(normal_and_shape(scene.obstacle(event.obstacle), event.point))
        position = event.point
    factors.append(_leg_factor(wave, end_distance))
    return AmplitudeTrace(
        story,
        float(np.prod(factors)),
        tuple(factors),
        _spreading(scene, start, ray, end_distance),
        support_window(scene, len(story), band),
    )


def _leg_factor(wave, flight):
    """(G_end / G_start)^(1/2) over one leg, det(I + tQ)^(-1/2) when G_start vanishes"""
    arrived, det = wave.after_flight(flight)
    if wave.gauss > 0.0:
        return float(np.sqrt(arrived.gauss / wave.gauss))
    return float(det ** -0.5)


def orbit_reference(orbit):
    """Start point in the middle of the leg arriving at the first reflection, and its direction"""
    q_last, q_first = orbit.points[-1], orbit.points[0]
    direction = (q_first - q_last) / np.linalg.norm(q_first - q_last)
    return 0.5 * (q_last + q_first), direction


def repeated_story(itinerary, r, l):
    return tuple(itinerary) * r + tuple(itinerary)[:l]


def stencil_lambda_phi(scene, story, direction, center, delta=STENCIL_DELTA):
    """Largest Lambda_phi over the center and four transverse offsets at radius delta / 2"""
    frame = tangent_frame(direction)
    offsets = [np.zeros(3)] + [sign * 0.5 * delta * t for t in frame for sign in (1.0, -1.0)]
    values = []
    for offset in offsets:
        try:
            values.append(lambda_phi(scene, story, direction, center + offset).lambda_phi)
        except PhaseNotDefinedError:
            continue
    if not values:
        raise PhaseNotDefinedError("phase not defined here", story=serialize_word(story))
    return max(values)


# ============================================
# CONVERGENCE ALONG REPEATED STORIES
# ============================================
@dataclass
class ConvergenceFit:
    itinerary: tuple
    remainder: int
    a: float
    alpha_fit: float
    C_fit: float
    r2: float
    table: pd.DataFrame
    notes: list = field(default_factory=list)


def _aitken(values):
    s0, s1, s2 = values[-3:]
    denominator = (s2 - s1) - (s1 - s0)
    if denominator == 0.0:
        return s2
    return s2 - (s2 - s1) ** 2 / denominator


def convergence_check(scene, orbit, l=0, r_max=6):
    """
    Lambda_phi of rI + l for r = 1..r_max against lambda_I^r a.

    a is extrapolated from the tail of Lambda_phi / lambda^r; the residuals
    that rise above rounding are fitted as C lambda^r alpha^(r|I| + l).
    """
    if r_max < 4:
        raise InsufficientDataError("insufficient data", r_max=r_max)
    m = len(orbit.itinerary)
    lam = orbit.lambda_gamma
    center, direction = orbit_reference(orbit)
    values = np.array([
        lambda_phi(scene, repeated_story(orbit.itinerary, r, l), direction, center).lambda_phi
        for r in range(1, r_max + 1)
    ])
    rs = np.arange(1, r_max + 1)
    scaled = values / lam ** rs
    a = _aitken(scaled)
    residuals = np.abs(values - lam ** rs * a)
    resolved = residuals > 10.0 * np.finfo(float).eps * rs * values
    notes = []
    lengths = rs * m + l
    if np.count_nonzero(resolved) < 2:
        alpha_fit, r2 = 0.0, 1.0
        C_fit = float(np.max(residuals / lam ** rs)) if np.any(residuals) else 0.0
        notes.append("residuals at rounding level")
    else:
        y = np.log(residuals[resolved] / lam ** rs[resolved])
        x = lengths[resolved]
        slope, intercept = np.polyfit(x, y, 1)
        fitted = slope * x + intercept
        total = np.sum((y - y.mean()) ** 2)
        r2 = 1.0 - np.sum((y - fitted) ** 2) / total if total > 0.0 else 1.0
        alpha_fit = float(np.exp(slope))
        C_fit = float(np.max(residuals[resolved] / (lam ** rs[resolved] * alpha_fit ** x)))
        if np.count_nonzero(resolved) >= 3 and r2 < 0.9:
            logger.error(f"Non-geometric residuals for {serialize_word(orbit.itinerary)}: R^2={r2:.3f}")
            raise ConvergenceViolationError("geometric convergence violated", r2=r2)
        if alpha_fit >= 1.0:
            logger.error(f"Residuals for {serialize_word(orbit.itinerary)} do not decay: alpha={alpha_fit:.3g}")
            raise ConvergenceViolationError("geometric convergence violated", alpha_fit=alpha_fit)
    frame = pd.DataFrame({"r": rs, "lambda_phi": values, "residual": residuals})
    logger.info(f"Convergence along {serialize_word(orbit.itinerary)} + {l}: "
                f"a={a:.6g}, alpha_fit={alpha_fit:.4g}")
    return ConvergenceFit(orbit.itinerary, l, float(a), alpha_fit, C_fit, float(r2), frame, notes)


@dataclass(frozen=True)
class EssentialBound:
    C: float
    per_letter_lambda: float
    table: pd.DataFrame


def essential_bound_constant(scene, orbit, r_max=4, delta=STENCIL_DELTA):
    """Smallest C with Lambda_phi(rI + l) <= C lbar^(r|I| + l), lbar = lambda_I^(1/|I|)"""
    m = len(orbit.itinerary)
    lbar = orbit.lambda_gamma ** (1.0 / m)
    center, direction = orbit_reference(orbit)
    rows = []
    for r in range(1, r_max + 1):
        for l in range(m):
            story = repeated_story(orbit.itinerary, r, l)
            value = stencil_lambda_phi(scene, story, direction, center, delta)
            rows.append({"r": r, "l": l, "lambda_phi": value, "ratio": value / lbar ** (r * m + l)})
    frame = pd.DataFrame(rows, columns=["r", "l", "lambda_phi", "ratio"])
    return EssentialBound(float(frame["ratio"].max()), lbar, frame)


# ============================================
# DECAY PROFILE
# ============================================
@dataclass
class DecayProfile:
    t: np.ndarray
    D: np.ndarray
    active: np.ndarray
    mu: float
    r2: float
    t0: float
    c1: float
    c2: float
    flags: list = field(default_factory=list)
    series: str = "smooth"

    def to_frame(self):
        return pd.DataFrame({"t": self.t, "D": self.D, "active_story_count": self.active})

    def summary(self):
        return {"mu": self.mu, "r2": self.r2, "t0": self.t0, "c1": self.c1, "c2": self.c2,
                "series": self.series, "flags": list(self.flags)}


def _proxy_lengths(scene, table, length_proxy):
    if length_proxy == "word":
        return np.array([len(o.itinerary) for o in table], dtype=float)
    if length_proxy == "hull":
        return np.array([o.d_gamma / scene.hull_diameter for o in table])
    if length_proxy == "dmin":
        return np.array([o.d_gamma / scene.d_min for o in table])
    raise ValueError(f"unknown length proxy '{length_proxy}'")


def decay_series(scene, table, t_grid, band=None, length_proxy="word", series="smooth"):
    """
    D(t) = sum over the orbits with c1 |I| <= t of |I| lambda_I^rho / (1 - lambda_I)

    The smooth series uses rho = t / (c2 |I|). The story series uses the
    smallest repetition count r for which a story rI + s, 0 <= s < |I|, is
    still inside its window: max(1, ceil(t / (c2 |I|)) - 1).
    """
    if not len(table):
        raise InsufficientDataError("insufficient data", orbits=0)
    c1, c2 = window_constants(scene, band)
    lengths = _proxy_lengths(scene, table, length_proxy)
    lams = np.array([o.lambda_gamma for o in table])
    t = np.asarray(t_grid, dtype=float)
    reach = t[:, None] / (c2 * lengths[None, :])
    if series == "smooth":
        rho = reach
    elif series == "story":
        rho = np.maximum(1, np.ceil(reach) - 1)
    else:
        raise ValueError(f"unknown decay series '{series}'")
    active = t[:, None] >= c1 * lengths[None, :]
    terms = np.where(active, lengths / (1.0 - lams) * lams ** rho, 0.0)
    return terms.sum(axis=1), active.sum(axis=1), c1, c2


def required_word_len(scene, t_max, band=None):
    """Longest orbit word whose first story starts by t_max"""
    c1, _ = window_constants(scene, band)
    return int(np.ceil(t_max / c1 - 1e-9))


def table_is_complete(scene, table, t_max, band=None):
    # two obstacles carry a single primitive orbit
    needed = 2 if scene.n == 2 else required_word_len(scene, t_max, band)
    return table.max_word_len >= needed and not table.failures


def fit_decay_rate(t, D, t0):
    """
    Least squares of log D(t) = log C - mu t over the grid points t >= t0
    where D drops; all points t >= t0 when fewer than three drops occur.
    """
    mask = (t >= t0) & (D > 0.0)
    idx = np.flatnonzero(mask)
    if idx.size < 2:
        raise InsufficientDataError("insufficient data", points=int(idx.size))
    drops = [i for i in idx[1:] if D[i] < D[i - 1]]
    use = np.array(drops) if len(drops) >= 3 else idx
    x, y = t[use], np.log(D[use])
    slope, intercept = np.polyfit(x, y, 1)
    total = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum((y - (slope * x + intercept)) ** 2) / total if total > 0.0 else 1.0
    return float(-slope), float(r2)


def decay_profile(scene, table, t_grid, band=None, t0=None, length_proxy="word", verdict=None,
                  series="smooth"):
    """
    Decay profile D(t) of an orbit table and its fitted exponential rate.

    The fit starts at t0, by default the time c1 max|I| from which every
    tabulated orbit contributes. A table shorter than ceil(t_max / c1)
    letters, or one with failed words, is flagged as incomplete.
    """
    t = np.asarray(t_grid, dtype=float)
    if not len(table) or not t.size:
        raise InsufficientDataError("insufficient data", orbits=len(table), points=int(t.size))
    D, active, c1, c2 = decay_series(scene, table, t, band, length_proxy, series)
    if t0 is None:
        t0 = c1 * float(np.max(_proxy_lengths(scene, table, length_proxy)))
    flags = []
    if not table_is_complete(scene, table, float(t.max()), band):
        logger.warning(f"Orbit table stops at {table.max_word_len} letters with {len(table.failures)} "
                       f"failed words; t <= {t.max():g} needs {required_word_len(scene, t.max(), band)} "
                       f"letters: {TABLE_INCOMPLETE}")
        flags.append(TABLE_INCOMPLETE)
    if verdict is None and table.max_word_len >= 3:
        verdict = pressure_partial_sum(table, 0.0, table.max_word_len).verdict
    if verdict is not None and verdict != CONVERGES:
        logger.warning(f"Ikawa verdict is '{verdict}': {DECAY_NOT_GUARANTEED}")
        flags.append(DECAY_NOT_GUARANTEED)
    mu, r2 = fit_decay_rate(t, D, t0)
    if mu <= 0.0:
        logger.warning(f"Fitted decay rate is not positive: mu={mu:.4g}")
    logger.info(f"Decay profile: mu={mu:.6g}, R^2={r2:.4f}, c1={c1:.4g}, c2={c2:.4g}")
    return DecayProfile(t, D, active, mu, r2, t0, c1, c2, flags, series)

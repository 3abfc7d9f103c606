"""
Scene files and preset scenes
JSON documents: {"obstacles": [{kind, center, radius} | {kind, center, semiaxes, orientation}]}
"""
import json
from pathlib import Path

import numpy as np

from billiard_lab.config import logger
from billiard_lab.core.errors import BilliardLabError, SceneFormatError
from billiard_lab.core.geometry import ELLIPSOID, SPHERE, ConvexObstacle, Scene


def _vector(entry, key, index, length=3):
    value = entry.get(key)
    if not isinstance(value, list) or len(value) != length:
        raise SceneFormatError(f"obstacle {index}: '{key}' must be a list of {length} numbers")
    try:
        if any(isinstance(v, bool) for v in value):
            raise TypeError("boolean entry")
        return [float(v) for v in value]
    except (TypeError, ValueError):
        raise SceneFormatError(f"obstacle {index}: '{key}' must contain numbers")


def _obstacle_from_entry(entry, index):
    if not isinstance(entry, dict):
        raise SceneFormatError(f"obstacle {index}: expected an object")
    kind = entry.get("kind")
    center = _vector(entry, "center", index)
    if kind == SPHERE:
        radius = entry.get("radius")
        if isinstance(radius, bool) or not isinstance(radius, (int, float)) or radius <= 0:
            raise SceneFormatError(f"obstacle {index}: radius must be a positive number")
        return ConvexObstacle.sphere(center, radius)
    if kind == ELLIPSOID:
        semiaxes = _vector(entry, "semiaxes", index)
        if min(semiaxes) <= 0:
            raise SceneFormatError(f"obstacle {index}: semiaxes must be positive")
        orientation = entry.get("orientation", np.eye(3).tolist())
        if (not isinstance(orientation, list) or len(orientation) != 3
                or any(not isinstance(row, list) or len(row) != 3 for row in orientation)):
            raise SceneFormatError(f"obstacle {index}: orientation must be a 3x3 row-major matrix")
        try:
            return ConvexObstacle.ellipsoid(center, semiaxes, orientation)
        except BilliardLabError as e:
            raise SceneFormatError(f"obstacle {index}: {e.message}")
    raise SceneFormatError(f"obstacle {index}: unknown kind '{kind}'")


def parse_scene(text):
    """Build a validated Scene from a JSON document"""
    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        raise SceneFormatError(e.msg, line=e.lineno)
    if not isinstance(document, dict) or not isinstance(document.get("obstacles"), list):
        raise SceneFormatError("document must be an object with an 'obstacles' list")
    obstacles = [
        _obstacle_from_entry(entry, index)
        for index, entry in enumerate(document["obstacles"], start=1)
    ]
    try:
        return Scene.build(obstacles)
    except SceneFormatError:
        raise
    except BilliardLabError as e:
        raise SceneFormatError(e.message)


def load_scene(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise SceneFormatError(f"cannot read scene file {path}: {e.strerror}")
    scene = parse_scene(text)
    logger.info(f"Loaded scene {path.name}: N={scene.n}, d_min={scene.d_min:.6g}, "
                f"diam={scene.hull_diameter:.6g}")
    return scene


def dump_scene(scene, path=None):
    text = json.dumps(scene.to_dict(), indent=2)
    if path is not None:
        Path(path).write_text(text + "\n")
    return text


# ============================================
# PRESETS
# ============================================
def two_spheres(distance=6.0, radius=1.0):
    """Two equal spheres on the x axis, the first at the origin"""
    return Scene.build([
        ConvexObstacle.sphere([0.0, 0.0, 0.0], radius),
        ConvexObstacle.sphere([distance, 0.0, 0.0], radius),
    ])


def equilateral_spheres(side=6.0, radius=1.0):
    """Three equal spheres at the vertices of an equilateral triangle in z = 0"""
    h = side * np.sqrt(3.0) / 2.0
    return Scene.build([
        ConvexObstacle.sphere([0.0, 0.0, 0.0], radius),
        ConvexObstacle.sphere([side, 0.0, 0.0], radius),
        ConvexObstacle.sphere([side / 2.0, h, 0.0], radius),
    ])


def eclipsing_triple(distance=6.0, radius=1.0):
    """Two spheres with a third one centered on the midpoint of their chord"""
    return Scene.build([
        ConvexObstacle.sphere([0.0, 0.0, 0.0], radius),
        ConvexObstacle.sphere([distance, 0.0, 0.0], radius),
        ConvexObstacle.sphere([distance / 2.0, 0.0, 0.0], radius),
    ])

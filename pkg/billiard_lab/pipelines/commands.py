"""
Command implementations behind the CLI
Each command takes a RunConfig, writes its outputs and returns an exit status
"""
from dataclasses import asdict, dataclass, field
from pathlib import Path
import json
import sys

import numpy as np

from billiard_lab.config import logger
from billiard_lab.core.billiard import PhasePoint, SpeedBand, Tube, trace
from billiard_lab.core.errors import ConfigError
from billiard_lab.core.geometry import no_eclipse_check
from billiard_lab.core.ikawa import DIVERGES, estimate_alpha_star, merged_key_count, pressure_partial_sum
from billiard_lab.core.orbits import enumerate_orbits
from billiard_lab.core.parametrix import DECAY_SERIES, decay_profile
from billiard_lab.core.tracker import OrbitCache
from billiard_lab.evaluation.probes import (
    divergence_sweep,
    fit_divergence_exponent,
    tangency_sweep,
    trapped_fraction,
)
from billiard_lab.io.csv_export import frame_to_csv, write_csv
from billiard_lab.io.scene_file import eclipsing_triple, equilateral_spheres, load_scene, two_spheres

PRESETS = {
    "two_spheres": two_spheres,
    "equilateral_spheres": equilateral_spheres,
    "eclipsing_triple": eclipsing_triple,
}
PROBES = ("tangency", "divergence", "trapped")

EXIT_OK = 0
EXIT_CONDITION_FAILED = 1


@dataclass
class RunConfig:
    command: str
    scene_path: str = None
    preset: str = None
    max_word_len: int = 4
    alpha: float = 0.0
    alpha_max: float = None
    t_max: float = 40.0
    t_step: float = 0.1
    speed_min: float = 1.0
    speed_max: float = 1.0
    out: str = None
    seed: int = 0
    merge_reversal: bool = False
    cache: bool = False
    position: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    direction: list = field(default_factory=lambda: [1.0, 0.0, 0.0])
    time: float = 10.0
    probe: str = "tangency"
    samples: int = 1000
    eta: float = 1e-3
    series: str = "smooth"
    workers: int = None

    def __post_init__(self):
        if (self.scene_path is None) == (self.preset is None):
            raise ConfigError("give exactly one of --scene and --preset")
        for name in ("t_max", "t_step", "speed_min", "speed_max", "time", "eta"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.max_word_len < 1 or self.samples < 1:
            raise ConfigError("max_word_len and samples must be positive")
        if self.alpha < 0 or (self.alpha_max is not None and self.alpha_max <= 0):
            raise ConfigError("alpha must be non-negative and alpha_max positive")
        if self.speed_min > self.speed_max:
            raise ConfigError("speed_min must not exceed speed_max")
        if self.probe not in PROBES:
            raise ConfigError(f"unknown probe '{self.probe}'")
        if self.series not in DECAY_SERIES:
            raise ConfigError(f"unknown decay series '{self.series}'")

    @property
    def band(self):
        return SpeedBand(self.speed_min, self.speed_max)

    def echo(self):
        """Parameters that determine the results (output location and cache use excluded)"""
        document = asdict(self)
        for key in ("out", "cache", "workers"):
            document.pop(key)
        return document


def load_config_scene(config):
    if config.scene_path is not None:
        return load_scene(config.scene_path)
    name, _, arg = config.preset.partition(":")
    if name not in PRESETS:
        raise ConfigError(f"unknown preset '{name}'")
    try:
        return PRESETS[name](float(arg)) if arg else PRESETS[name]()
    except ValueError:
        raise ConfigError(f"bad preset parameter '{arg}'")


def emit(frame, scene, config, extra=None):
    """Write a CSV to --out, or to stdout when no --out is given; `extra` adds JSON header lines"""
    if config.out is None:
        sys.stdout.write(frame_to_csv(frame, scene, config.echo(), extra))
        return None
    return write_csv(frame, config.out, scene, config.echo(), extra)


def orbit_table(scene, config):
    cache = OrbitCache() if config.cache else None
    if cache is not None:
        table = cache.load_table(scene, config.max_word_len)
        if table is not None:
            return table
    table = enumerate_orbits(scene, config.max_word_len, workers=config.workers)
    if cache is not None:
        cache.save_table(scene, table)
    return table


def _record(scene, config, status):
    if config.cache:
        OrbitCache().record_run(config.command, scene, config.echo(), status)


# ============================================
# COMMANDS
# ============================================
def cmd_scene_check(config):
    scene = load_config_scene(config)
    verdict = no_eclipse_check(scene)
    report = {
        "n_obstacles": scene.n,
        "passed": verdict.passed,
        "vacuous": verdict.vacuous,
        "triple": list(verdict.triple) if verdict.triple else None,
        "margin": verdict.margin,
        "d_min": scene.d_min,
        "hull_diameter": scene.hull_diameter,
        "scene": scene.fingerprint(),
    }
    print("=" * 70)
    print(f"Scene: {scene.n} obstacles, d_min = {scene.d_min:.12g}, hull diameter = {scene.hull_diameter:.12g}")
    if verdict.vacuous:
        print("No-eclipse condition: pass (vacuous, fewer than three obstacles)")
    elif verdict.passed:
        print(f"No-eclipse condition: pass (margin {verdict.margin:.6g})")
    else:
        print(f"No-eclipse condition: FAIL, obstacle {verdict.triple[2]} meets the hull of "
              f"{verdict.triple[0]} and {verdict.triple[1]}")
    print("=" * 70)
    if config.out is not None:
        Path(config.out).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    _record(scene, config, "pass" if verdict.passed else "fail")
    return EXIT_OK if verdict.passed else EXIT_CONDITION_FAILED


def cmd_orbits(config):
    scene = load_config_scene(config)
    table = orbit_table(scene, config)
    emit(table.to_frame(), scene, config)
    if table.failures:
        lines = [f"{word}: {message}" for word, message in table.failures.items()]
        if config.out is not None:
            sidecar = Path(config.out).with_suffix(".failures.log")
            sidecar.write_text("\n".join(lines) + "\n")
            logger.warning(f"{len(lines)} words without an orbit, see {sidecar}")
        else:
            for line in lines:
                logger.warning(line)
    _record(scene, config, "ok")
    return EXIT_OK


def cmd_ikawa(config):
    scene = load_config_scene(config)
    table = orbit_table(scene, config)
    report = pressure_partial_sum(table, config.alpha, config.max_word_len, config.merge_reversal)
    star = estimate_alpha_star(table, config.max_word_len, scene.d_min, config.alpha_max,
                               config.merge_reversal)
    report.alpha_star = star.to_dict()
    if config.merge_reversal:
        report.notes.append(f"{len(table)} oriented orbits, {merged_key_count(table)} reversal classes")
    if config.out is None:
        print(report.to_text(), end="")
    else:
        emit(report.to_frame(), scene, config)
        base = Path(config.out)
        base.with_suffix(".json").write_text(report.to_json() + "\n")
        base.with_suffix(".txt").write_text(report.to_text())
    _record(scene, config, report.verdict)
    return EXIT_CONDITION_FAILED if report.verdict == DIVERGES else EXIT_OK


def cmd_decay(config):
    scene = load_config_scene(config)
    table = orbit_table(scene, config)
    t_grid = np.arange(config.t_step, config.t_max + 0.5 * config.t_step, config.t_step)
    profile = decay_profile(scene, table, t_grid, config.band, series=config.series)
    logger.info(f"mu = {profile.mu:.12g}  R^2 = {profile.r2:.6f}  t0 = {profile.t0:.6g}  "
                f"c1 = {profile.c1:.6g}  c2 = {profile.c2:.6g}")
    summary = profile.summary()
    emit(profile.to_frame(), scene, config, {"decay": summary})
    if config.out is not None:
        Path(config.out).with_suffix(".json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _record(scene, config, "ok" if not profile.flags else "flagged")
    return EXIT_OK


def cmd_trace(config):
    scene = load_config_scene(config)
    p = PhasePoint(config.position, config.direction)
    ray = trace(scene, p, config.time)
    if ray.truncated:
        logger.warning("Event budget reached, trace truncated")
    emit(ray.to_frame(), scene, config)
    _record(scene, config, "ok")
    return EXIT_OK


def cmd_probe(config):
    scene = load_config_scene(config)
    band = config.band
    if config.probe == "tangency":
        frame = tangency_sweep(scene, config.samples, config.eta, config.seed, band, workers=config.workers)
        logger.info(f"max crossings: {frame['crossings'].max()}")
    elif config.probe == "divergence":
        frame = divergence_sweep(scene, config.samples, config.time, seed=config.seed, band=band,
                                 workers=config.workers)
        fit = fit_divergence_exponent(frame)
        logger.info(f"C = {fit.C:.6g}  mu = {fit.mu:.6g}  R^2 = {fit.r2:.4f}  samples = {fit.n_used}")
    else:
        tube = Tube.between(scene, 1, 2, 0.1 * scene.d_min, band)
        T_values = np.linspace(0.0, config.t_max, 9)
        frame = trapped_fraction(scene, tube, T_values, config.samples, config.seed, config.workers)
    emit(frame, scene, config)
    _record(scene, config, "ok")
    return EXIT_OK


COMMANDS = {
    "scene-check": cmd_scene_check,
    "orbits": cmd_orbits,
    "ikawa": cmd_ikawa,
    "decay": cmd_decay,
    "trace": cmd_trace,
    "probe": cmd_probe,
}

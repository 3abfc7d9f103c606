"""
Command-line front end
Exit status: 0 success, 1 condition failed, 2 input error, 3 numeric failure
"""
import argparse

from billiard_lab import __version__
from billiard_lab.config import logger
from billiard_lab.core.errors import BilliardLabError
from billiard_lab.core.parametrix import DECAY_SERIES
from billiard_lab.pipelines.commands import COMMANDS, PROBES, RunConfig


def _vector(text):
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated numbers")
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError("expected three comma-separated numbers")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="billiard-lab",
        description="Periodic orbits, Ikawa conditions and amplitude decay outside convex obstacles",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("command", choices=sorted(COMMANDS))
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--scene", dest="scene_path", help="scene JSON file")
    source.add_argument("--preset", help="two_spheres, equilateral_spheres or eclipsing_triple, "
                                         "optionally with a size as name:value")
    parser.add_argument("--max-len", dest="max_word_len", type=int, default=4, help="maximal word length K")
    parser.add_argument("--alpha", type=float, default=0.0, help="exponent of the Ikawa sum")
    parser.add_argument("--alpha-max", type=float, default=None, help="upper end of the alpha* search")
    parser.add_argument("--t-max", type=float, default=40.0, help="last time of the decay grid")
    parser.add_argument("--t-step", type=float, default=0.1, help="spacing of the decay grid")
    parser.add_argument("--speed-min", type=float, default=1.0, help="alpha0")
    parser.add_argument("--speed-max", type=float, default=1.0, help="beta0")
    parser.add_argument("--out", default=None, help="output path (CSV); stdout when omitted")
    parser.add_argument("--seed", type=int, default=0, help="seed of randomized probes")
    parser.add_argument("--merge-reversal", action="store_true",
                        help="identify orbits traversed in opposite directions")
    parser.add_argument("--cache", action="store_true", help="reuse and store orbit tables in the database")
    parser.add_argument("--pos", dest="position", type=_vector, default=[0.0, 0.0, 0.0],
                        help="trace start point x,y,z")
    parser.add_argument("--dir", dest="direction", type=_vector, default=[1.0, 0.0, 0.0],
                        help="trace velocity vx,vy,vz")
    parser.add_argument("--time", type=float, default=10.0, help="trace duration and divergence time")
    parser.add_argument("--probe", choices=PROBES, default="tangency")
    parser.add_argument("--samples", type=int, default=1000)
    parser.add_argument("--eta", type=float, default=1e-3)
    parser.add_argument("--series", choices=DECAY_SERIES, default="smooth",
                        help="decay exponent: smooth in t, or stepped by whole repetitions")
    parser.add_argument("--workers", type=int, default=None, help="overrides BILLIARDLAB_THREADS")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = RunConfig(**vars(args))
        return COMMANDS[config.command](config)
    except BilliardLabError as e:
        logger.error(f"{type(e).__name__}: {e.message}")
        return e.exit_code

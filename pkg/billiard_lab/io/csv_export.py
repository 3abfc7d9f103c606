"""
CSV output with a metadata header
"""
import json
from pathlib import Path

from billiard_lab.config import VERSION, logger

FLOAT_FORMAT = '%.12g'


def metadata_header(scene, config, extra=None):
    lines = [
        f"# billiard_lab {VERSION}",
        f"# scene {scene.fingerprint()}",
        f"# config {json.dumps(config, sort_keys=True, default=str)}",
    ]
    for key, value in (extra or {}).items():
        lines.append(f"# {key} {json.dumps(value, sort_keys=True)}")
    return "\n".join(lines) + "\n"


def frame_to_csv(frame, scene, config, extra=None):
    return metadata_header(scene, config, extra) + frame.to_csv(index=False, float_format=FLOAT_FORMAT,
                                                                lineterminator="\n")


def write_csv(frame, path, scene, config, extra=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(frame_to_csv(frame, scene, config, extra))
    logger.info(f"Wrote {len(frame)} rows to {path}")
    return path


def read_metadata(path):
    """Header lines of a CSV written by write_csv, as {key: value}"""
    meta = {}
    with open(path) as handle:
        for line in handle:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition(" ")
            meta[key] = value
    return meta

"""Deterministic artifact writing for run directories.

Reruns with the same config and seed must reproduce every output byte for
byte, so nothing here records wall-clock time; floats are serialized with
repr (shortest round-trip form), JSON keys are sorted, and each run
directory carries a snapshot of the resolved config plus a content hash of
it so the directory is self-describing.
"""

import csv
import hashlib
import json
import os

import yaml

from .errors import DependencyError


def fmt(value):
    """Canonical scalar formatting for CSV cells."""
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, bool):
        return str(int(value))
    return str(value)


def write_csv(path, header, rows):
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def config_hash(resolved_raw: dict) -> str:
    canonical = json.dumps(resolved_raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def prepare_run_dir(out_dir, subdir, resolved_raw, seed):
    """Create <out>/<subdir>, snapshot the config, return its path."""
    run_dir = os.path.join(out_dir, subdir)
    os.makedirs(run_dir, exist_ok=True)
    with open(os.path.join(run_dir, "config_snapshot.yaml"), "w") as fh:
        yaml.safe_dump(resolved_raw, fh, sort_keys=True)
    write_json(os.path.join(run_dir, "manifest.json"), {
        "seed": seed,
        "config_sha256": config_hash(resolved_raw),
    })
    return run_dir


def require_artifact(path, hint):
    if not os.path.exists(path):
        raise DependencyError(f"missing artifact {path} ({hint})")
    return path

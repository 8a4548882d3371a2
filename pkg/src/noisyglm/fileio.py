"""CSV and manifest helpers shared by the CLI and the study runner.

Floats are written with 17 significant digits through ``format`` so output
does not depend on the locale; lines end in ``\\n``.
"""
import csv
import hashlib
import json
import os
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .errors import NoisyGLMError
from .simgen import RNG_ALGORITHM

MANIFEST_SCHEMA = "noisyglm/1"
MANIFEST_NAME = "manifest.json"


def fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_csv(path):
    """Return ``(header, rows)`` with rows as lists of strings."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise NoisyGLMError(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    return [h.strip() for h in header], rows


def read_numeric_csv(path):
    """Header and float matrix of a CSV whose cells are all numeric."""
    header, rows = read_csv(path)
    if not rows:
        raise NoisyGLMError(f"{path}: no data rows")
    for i, r in enumerate(rows):
        if len(r) != len(header):
            raise NoisyGLMError(f"{path}: row {i + 2} has {len(r)} fields, expected {len(header)}")
    try:
        M = np.array([[float(v) for v in r] for r in rows])
    except ValueError as exc:
        raise NoisyGLMError(f"{path}: non-numeric value ({exc})") from None
    return header, M


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def now_iso():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_manifest(outdir, command, config, seed, inputs=(), started=None, extra=None):
    """Write the single ``manifest.json`` of ``outdir``."""
    from .kernels import BACKEND

    manifest = {
        "schema": MANIFEST_SCHEMA,
        "command": command,
        "config": config,
        "seed": seed,
        "started": started or now_iso(),
        "finished": now_iso(),
        "version": __version__,
        "rng": RNG_ALGORITHM,
        "kernel_backend": BACKEND,
        "inputs": {os.path.abspath(p): sha256_file(p) for p in inputs},
    }
    if extra:
        manifest.update(extra)
    path = os.path.join(outdir, MANIFEST_NAME)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    return path


def read_manifest(outdir):
    path = os.path.join(outdir, MANIFEST_NAME)
    try:
        with open(path, encoding="utf-8") as fh:
            m = json.load(fh)
    except FileNotFoundError:
        raise NoisyGLMError(f"no {MANIFEST_NAME} in {outdir}") from None
    if m.get("schema") != MANIFEST_SCHEMA:
        raise NoisyGLMError(f"unsupported manifest schema {m.get('schema')!r}")
    return m


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, (tuple, set)):
        return list(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")

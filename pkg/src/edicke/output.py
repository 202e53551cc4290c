"""Deterministic serialization of tables and run manifests.

Floats are written with 17 significant digits so they read back bit-identical.
Tables are comma separated with ``#`` header lines that echo the resolved
configuration and the run id of the manifest written alongside.
"""

import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

OUTPUT_DIR_ENV = "EDICKE_OUTPUT_DIR"
MANIFEST_NAME = "manifest.json"


def fmt(value):
    """Text form of one table cell."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def canonical_json(obj):
    """Sorted-key JSON text; Python's float repr already round-trips."""
    return json.dumps(_plain(obj), sort_keys=True, indent=1, ensure_ascii=True) + "\n"


def sha256_bytes(data):
    return hashlib.sha256(data).hexdigest()


def file_digest(path):
    with open(path, "rb") as fh:
        return sha256_bytes(fh.read())


def output_dir(default):
    """Output directory, overridden by the ``EDICKE_OUTPUT_DIR`` environment variable."""
    return Path(os.environ.get(OUTPUT_DIR_ENV) or default)


@dataclass
class RunManifest:
    """Provenance of one command invocation.

    ``run_id`` hashes the command, resolved configuration, tool version and
    input digests; every table written by the run carries it.  ``digest``
    additionally covers the output digests but not the wall-clock timing, so
    it is stable under identical inputs.
    """

    command: str
    config: dict
    version: str
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)

    @property
    def run_id(self):
        core = {"command": self.command, "config": self.config, "version": self.version,
                "inputs": self.inputs}
        return sha256_bytes(canonical_json(core).encode())[:16]

    @property
    def digest(self):
        core = {"run_id": self.run_id, "outputs": self.outputs}
        return sha256_bytes(canonical_json(core).encode())

    def add_input(self, path):
        self.inputs[str(path)] = file_digest(path)

    def as_dict(self):
        return {"command": self.command, "version": self.version, "run_id": self.run_id,
                "digest": self.digest, "config": self.config, "inputs": self.inputs,
                "outputs": self.outputs, "timing": self.timing}


class Timer:
    """Accumulate wall-clock seconds per named step into ``manifest.timing``."""

    def __init__(self, manifest, name):
        self.manifest, self.name = manifest, name

    def __enter__(self):
        self._t = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.manifest.timing[self.name] = (self.manifest.timing.get(self.name, 0.0)
                                           + time.perf_counter() - self._t)
        return False


def write_table(path, columns, rows, manifest):
    """Write a comma-separated table with a metadata header and record its digest."""
    path = Path(path)
    lines = [f"# edicke {manifest.version} {manifest.command}",
             f"# manifest {MANIFEST_NAME} run_id {manifest.run_id}",
             "# config " + json.dumps(_plain(manifest.config), sort_keys=True),
             ",".join(columns)]
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    data = ("\n".join(lines) + "\n").encode()
    path.write_bytes(data)
    manifest.outputs[path.name] = sha256_bytes(data)
    return path


def write_document(path, obj, manifest):
    """Write a JSON summary document that references the manifest."""
    path = Path(path)
    body = {"manifest": MANIFEST_NAME, "run_id": manifest.run_id, **_plain(obj)}
    data = canonical_json(body).encode()
    path.write_bytes(data)
    manifest.outputs[path.name] = sha256_bytes(data)
    return path


def write_manifest(directory, manifest):
    path = Path(directory) / MANIFEST_NAME
    path.write_text(canonical_json(manifest.as_dict()))
    return path


def read_table(path):
    """Read a table written by :func:`write_table` into (columns, rows of strings)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if not ln.startswith("#")]
    return lines[0].split(","), [ln.split(",") for ln in lines[1:]]

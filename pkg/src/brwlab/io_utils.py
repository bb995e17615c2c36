"""Deterministic artifact I/O: atomic writes, manifests, float formatting.

Every float crossing into a file goes through format_float (17 significant
digits, exact round-trip), and every file lands via temp-file + rename so a
failed run leaves no partial artifacts.
"""

from __future__ import annotations

import json
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path

from .errors import IoError

SCHEMA_VERSION = 1


def format_float(x: float) -> str:
    """Shortest 17-significant-digit decimal that round-trips a float64."""
    return "%.17g" % float(x)


@contextmanager
def atomic_writer(path):
    """Write to a sibling temp file, fsync, then rename over the target."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".tmp")
    except OSError as exc:
        raise IoError(f"cannot create {path}: {exc}") from exc
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            yield fh
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def write_csv(path, header: list[str], rows) -> None:
    """CSV with round-trip-exact floats and LF newlines."""
    with atomic_writer(path) as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(
                format_float(v) if isinstance(v, float) else str(v) for v in row
            ) + "\n")


def _jsonable(value):
    if isinstance(value, float):
        return float(format_float(value))
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if hasattr(value, "item"):  # numpy scalars
        return _jsonable(value.item())
    return value


def write_json(path, payload: dict) -> None:
    with atomic_writer(path) as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_manifest(path, *, command: str, config: dict, seed: int,
                   outputs: list[str], timings: dict, build: str) -> None:
    """Run manifest: config echo, outputs, timings; schema-versioned.

    Timings vary run to run; output *tables* are the reproducibility
    contract and the manifest lists every one of them.
    """
    write_json(path, {
        "schema": SCHEMA_VERSION,
        "command": command,
        "config": config,
        "seed": seed,
        "outputs": sorted(outputs),
        "build": build,
        "timings": timings,
    })

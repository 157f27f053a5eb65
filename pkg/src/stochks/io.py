"""Snapshots, CSV time series, schema files and run manifests.

Snapshot layout (all little-endian)::

    b"SKS1" | n: u32 | L: f64 | t: f64 | params digest: 32 bytes | payload crc32: u32 | n*n f64, row-major

Row index is x and column index is y, matching ``DomainSpec.mesh``.
"""

from __future__ import annotations

import csv
import hashlib
import struct
import zlib
from pathlib import Path

import numpy as np

from stochks.core import DomainSpec, Field, ModelParams

MAGIC = b"SKS1"
_HEADER = struct.Struct("<4sIdd32sI")


class SnapshotError(IOError):
    pass


def params_digest(params: ModelParams | None) -> bytes:
    if params is None:
        return bytes(32)
    text = ";".join(f"{k}={float(getattr(params, k))!r}" for k in ("a", "sigma", "chi", "p"))
    return hashlib.sha256(text.encode()).digest()


def write_snapshot(path, f: Field, t: float, params: ModelParams | None = None) -> None:
    d = f.domain
    payload = np.ascontiguousarray(f.values, dtype="<f8").tobytes()
    head = _HEADER.pack(MAGIC, d.n, float(d.half_width), float(t), params_digest(params), zlib.crc32(payload))
    Path(path).write_bytes(head + payload)


def read_snapshot(path) -> tuple[Field, dict]:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise SnapshotError(f"{path}: truncated header")
    magic, n, L, t, digest, crc = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise SnapshotError(f"{path}: bad magic {magic!r}")
    body = raw[_HEADER.size:]
    if len(body) != 8 * n * n:
        raise SnapshotError(f"{path}: payload has {len(body)} bytes, expected {8 * n * n}")
    if zlib.crc32(body) != crc:
        raise SnapshotError(f"{path}: payload checksum mismatch")
    try:
        domain = DomainSpec(L, n)
        values = np.frombuffer(body, dtype="<f8").reshape(n, n)
        f = Field(domain, values)
    except ValueError as e:
        raise SnapshotError(f"{path}: {e}") from e
    return f, {"t": t, "n": n, "L": L, "digest": digest.hex()}


def fmt(x) -> str:
    """Shortest round-tripping text for a number; keeps CSV output byte-stable."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def read_csv(path) -> tuple[list, list]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_schema(path, columns) -> None:
    """``columns``: (name, unit, description) triples, written one per line."""
    with open(path, "w") as fh:
        fh.write("# column\tunit\tdescription\n")
        for name, unit, desc in columns:
            fh.write(f"{name}\t{unit}\t{desc}\n")


def write_manifest(path, items: dict) -> None:
    with open(path, "w") as fh:
        for k in sorted(items):
            fh.write(f"{k} = {fmt(items[k])}\n")


def write_particles(path, positions: np.ndarray) -> None:
    write_csv(path, ["id", "x", "y"], ((i, float(x), float(y)) for i, (x, y) in enumerate(positions)))


def read_particles(path) -> np.ndarray:
    _, rows = read_csv(path)
    return np.array([[float(r[1]), float(r[2])] for r in rows])

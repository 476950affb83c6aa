"""Binary wave-function snapshots.

Layout (all little-endian):

    b"EDWF"                         magic
    u32   version                   currently 1
    u64   D                         configuration dimension
    u64   points[D]
    f64   lengths[D]
    u64   N                         particle count
    f64   masses[N]
    f64   hbar, eta, t
    f64   (re, im) amplitudes       row-major (C order)
    u32   CRC-32 of every preceding byte
"""
from __future__ import annotations

import os
import struct
import tempfile
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import GridSpec, ParticleSystem, WaveFunction
from .errors import BadMagic, ChecksumMismatch, TruncatedFile, VersionMismatch

MAGIC = b"EDWF"
VERSION = 1


@dataclass(frozen=True, eq=False)
class Checkpoint:
    psi: WaveFunction
    system: ParticleSystem

    @property
    def grid(self) -> GridSpec:
        return self.psi.grid


def _spatial_dim(dim: int, particles: int) -> int:
    if particles < 1 or dim % particles:
        raise BadMagic(f"configuration dimension {dim} is not a multiple of particle count {particles}")
    return dim // particles


def encode(psi: WaveFunction, system: ParticleSystem) -> bytes:
    g = psi.grid
    system.check_grid(g)
    parts = [
        MAGIC,
        struct.pack("<I", VERSION),
        struct.pack("<Q", g.dim),
        struct.pack(f"<{g.dim}Q", *g.points_per_axis),
        struct.pack(f"<{g.dim}d", *g.axis_length),
        struct.pack("<Q", system.particle_count),
        struct.pack(f"<{system.particle_count}d", *system.masses),
        struct.pack("<3d", system.hbar, system.eta, psi.t),
        np.ascontiguousarray(psi.amplitudes, dtype="<c16").tobytes(),
    ]
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFile(f"need {n} bytes at offset {self.pos}, file has {len(self.data)}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if len(data) < 4 or r.take(4) != MAGIC:
        raise BadMagic("not an EDWF checkpoint")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise VersionMismatch(f"checkpoint version {version}, reader supports {VERSION}")
    (dim,) = r.unpack("<Q")
    if dim < 1 or dim > 64:
        raise BadMagic(f"implausible dimension {dim}")
    points = r.unpack(f"<{dim}Q")
    lengths = r.unpack(f"<{dim}d")
    (particles,) = r.unpack("<Q")
    if particles > dim:
        raise BadMagic(f"implausible particle count {particles}")
    masses = r.unpack(f"<{particles}d")
    hbar, eta, t = r.unpack("<3d")
    count = int(np.prod(points))
    raw = r.take(16 * count)
    (crc,) = r.unpack("<I")
    if r.pos != len(data):
        raise ChecksumMismatch(f"{len(data) - r.pos} trailing bytes after the checksum")
    if zlib.crc32(data[:-4]) != crc:
        raise ChecksumMismatch("CRC-32 does not match the payload")
    grid = GridSpec(_spatial_dim(dim, particles), particles, points, lengths)
    system = ParticleSystem(masses, hbar, eta)
    amp = np.frombuffer(raw, dtype="<c16").reshape(points)
    return Checkpoint(WaveFunction(grid, amp, t), system)


def atomic_write(path, data: bytes):
    """Write to a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_checkpoint(psi: WaveFunction, system: ParticleSystem, path) -> Path:
    atomic_write(path, encode(psi, system))
    return Path(path)


def read_checkpoint(path) -> Checkpoint:
    return decode(Path(path).read_bytes())

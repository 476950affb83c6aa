import struct
import zlib

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from relational_ed import GridSpec, ParticleSystem
from relational_ed.checkpoint import (
    MAGIC,
    atomic_write,
    decode,
    encode,
    read_checkpoint,
    write_checkpoint,
)
from relational_ed.core import WaveFunction
from relational_ed.errors import BadMagic, ChecksumMismatch, TruncatedFile, VersionMismatch

from conftest import smooth_state


def _state(seed=0):
    g = GridSpec(2, 1, [8, 12], [4.0, 6.0])
    psi = smooth_state(g, np.random.default_rng(seed), False)
    return psi.replace(psi.amplitudes, 0.375), ParticleSystem([1.5], hbar=0.9, eta=0.7)


@given(st.integers(0, 2**32 - 1))
def test_round_trip_is_bit_exact(seed):
    psi, s = _state(seed)
    cp = decode(encode(psi, s))
    assert cp.psi.amplitudes.tobytes() == psi.amplitudes.tobytes()
    assert cp.grid == psi.grid
    assert cp.system == s
    assert cp.psi.t == 0.375


def test_layout_matches_hand_built_bytes():
    g = GridSpec(1, 1, 8, 2.0)
    amp = np.array([1 + 2j, complex(0, -0.5), 0.25, 3.0, 0, 0, 0, 1j])
    psi = WaveFunction(g, amp, 1.5)
    s = ParticleSystem([2.0])
    body = (
        b"EDWF"
        + struct.pack("<I", 1)
        + struct.pack("<Q", 1)
        + struct.pack("<Q", 8)
        + struct.pack("<d", 2.0)
        + struct.pack("<Q", 1)
        + struct.pack("<d", 2.0)
        + struct.pack("<3d", 1.0, 1.0, 1.5)
        + struct.pack("<16d", 1, 2, 0, -0.5, 0.25, 0, 3, 0, 0, 0, 0, 0, 0, 0, 0, 1)
    )
    assert encode(psi, s) == body + struct.pack("<I", zlib.crc32(body))


def test_file_round_trip(tmp_path):
    psi, s = _state()
    path = write_checkpoint(psi, s, tmp_path / "deep" / "a.edwf")
    assert read_checkpoint(path).psi.amplitudes.tobytes() == psi.amplitudes.tobytes()
    assert [p.name for p in path.parent.iterdir()] == ["a.edwf"]


@pytest.mark.parametrize("drop", [1, 5, 100, -50, -10, -3, 0])
def test_truncation(drop):
    # positive: bytes removed from the end; otherwise only the first -drop bytes kept
    data = encode(*_state())
    short = data[: len(data) - drop] if drop > 0 else data[:-drop]
    with pytest.raises((TruncatedFile, BadMagic)):
        decode(short)


def test_truncated_payload_reports_truncation():
    data = encode(*_state())
    with pytest.raises(TruncatedFile):
        decode(data[: len(data) - 20])


def test_bad_magic():
    data = encode(*_state())
    with pytest.raises(BadMagic):
        decode(b"EDWG" + data[4:])


def test_version_bump():
    data = bytearray(encode(*_state()))
    data[4] += 1
    with pytest.raises(VersionMismatch):
        decode(bytes(data))


def test_flipped_bit_fails_checksum():
    data = bytearray(encode(*_state()))
    data[-40] ^= 0x10
    with pytest.raises(ChecksumMismatch):
        decode(bytes(data))


def test_trailing_bytes_rejected():
    with pytest.raises(ChecksumMismatch):
        decode(encode(*_state()) + b"\0")


def test_atomic_write_leaves_old_file_on_failure(tmp_path, monkeypatch):
    path = tmp_path / "x.bin"
    atomic_write(path, b"old")

    def boom(*a, **k):
        raise OSError("disk full")

    monkeypatch.setattr("os.replace", boom)
    with pytest.raises(OSError):
        atomic_write(path, b"new")
    assert path.read_bytes() == b"old"
    assert sorted(p.name for p in tmp_path.iterdir()) == ["x.bin"]


def test_magic_constant():
    assert MAGIC == b"EDWF"

"""Versioned little-endian binary cache for bases, operators and trajectories.

File layout::

    magic  4s   b"PXPF"
    version u16
    kind    16s  ("basis", "operator", "trajectory", ...)
    digest  32s  raw sha256 of the lattice
    mode    16s  sector mode
    count   u32  number of arrays
    then per array: name 32s, dtype 8s (numpy str), ndim u32, shape ndim*u64, payload

Writers take an advisory file lock so concurrent runs never see partial files.
"""

from __future__ import annotations

import hashlib
import io
import logging
import os
import struct
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from filelock import FileLock

from .hilbert import SectorBasis, popcount
from .lattice import Lattice

log = logging.getLogger(__name__)

MAGIC = b"PXPF"
VERSION = 1
_HEAD = struct.Struct("<4sH16s32s16sI")
_ARR = struct.Struct("<32s8sI")


class CacheError(IOError):
    pass


def _pad(s: str, n: int) -> bytes:
    b = s.encode()
    if len(b) > n:
        raise CacheError(f"field {s!r} longer than {n} bytes")
    return b.ljust(n, b"\0")


def _unpad(b: bytes) -> str:
    return b.rstrip(b"\0").decode()


def write_arrays(path, kind: str, digest: str, mode: str, arrays: dict[str, np.ndarray]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    buf.write(_HEAD.pack(MAGIC, VERSION, _pad(kind, 16), bytes.fromhex(digest), _pad(mode, 16), len(arrays)))
    for name, arr in arrays.items():
        a = np.asarray(arr)
        a = a.astype(a.dtype.newbyteorder("<"), copy=False)
        buf.write(_ARR.pack(_pad(name, 32), _pad(a.dtype.str, 8), a.ndim))
        buf.write(struct.pack(f"<{a.ndim}Q", *a.shape))
        buf.write(np.ascontiguousarray(a).tobytes())
    tmp = path.with_suffix(path.suffix + ".tmp")
    with FileLock(str(path) + ".lock"):
        tmp.write_bytes(buf.getvalue())
        os.replace(tmp, path)


def read_arrays(path, kind: str | None = None, digest: str | None = None, mode: str | None = None):
    """Return ``(header, arrays)``; raises :class:`CacheError` on any mismatch."""
    path = Path(path)
    with FileLock(str(path) + ".lock"):
        data = path.read_bytes()
    if len(data) < _HEAD.size:
        raise CacheError(f"{path}: truncated header")
    magic, version, k, dg, md, count = _HEAD.unpack_from(data, 0)
    if magic != MAGIC:
        raise CacheError(f"{path}: bad magic")
    if version != VERSION:
        raise CacheError(f"{path}: unsupported version {version}")
    header = {"kind": _unpad(k), "digest": dg.hex(), "mode": _unpad(md), "version": version}
    for key, want in (("kind", kind), ("digest", digest), ("mode", mode)):
        if want is not None and header[key] != want:
            raise CacheError(f"{path}: {key} mismatch ({header[key]} != {want})")
    off = _HEAD.size
    arrays = {}
    for _ in range(count):
        name, dt, ndim = _ARR.unpack_from(data, off)
        off += _ARR.size
        shape = struct.unpack_from(f"<{ndim}Q", data, off)
        off += 8 * ndim
        dtype = np.dtype(_unpad(dt))
        n = int(np.prod(shape)) * dtype.itemsize
        if off + n > len(data):
            raise CacheError(f"{path}: truncated payload")
        arrays[_unpad(name)] = np.frombuffer(data, dtype=dtype, count=int(np.prod(shape)), offset=off).reshape(shape).copy()
        off += n
    return header, arrays


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class CacheStore:
    """Directory of cache files keyed by lattice digest, sector and a tag."""

    def __init__(self, root):
        self.root = Path(root)
        self.hits = 0
        self.misses = 0

    def path(self, lattice: Lattice, mode: str, tag: str) -> Path:
        return self.root / f"{lattice.digest()[:16]}_{mode}_{tag}.bin"

    def basis(self, lattice: Lattice, mode: str, builder) -> SectorBasis:
        p = self.path(lattice, mode, "basis")
        if p.exists():
            try:
                _, a = read_arrays(p, "basis", lattice.digest(), mode)
                self.hits += 1
                return SectorBasis(lattice, mode, a["states"], a["orbit_size"], a["norm"], popcount(a["states"]))
            except CacheError as exc:
                log.warning("ignoring stale cache: %s", exc)
        self.misses += 1
        b = builder()
        write_arrays(
            p, "basis", lattice.digest(), mode,
            {"states": b.states, "orbit_size": b.orbit_size, "norm": b.norm},
        )
        return b

    def operator(self, basis: SectorBasis, tag: str, builder):
        from .operators import SparseOperator

        p = self.path(basis.lattice, basis.mode, f"op-{tag}")
        if p.exists():
            try:
                _, a = read_arrays(p, "operator", basis.lattice.digest(), basis.mode)
                m = sp.csr_matrix((a["data"], (a["rows"], a["cols"])), shape=(basis.dim, basis.dim))
                self.hits += 1
                return SparseOperator(basis, m, bool(a["hermitian"][0]), tag)
            except CacheError as exc:
                log.warning("ignoring stale cache: %s", exc)
        self.misses += 1
        op = builder()
        coo = op.matrix.tocoo()
        write_arrays(
            p, "operator", basis.lattice.digest(), basis.mode,
            {
                "rows": coo.row.astype(np.int64),
                "cols": coo.col.astype(np.int64),
                "data": coo.data.astype(complex),
                "hermitian": np.array([op.hermitian], dtype=np.uint8),
            },
        )
        return op

    def arrays(self, lattice: Lattice, mode: str, tag: str, builder) -> dict[str, np.ndarray]:
        """Generic keyed array bundle (eigensystems, trajectories)."""
        p = self.path(lattice, mode, tag)
        if p.exists():
            try:
                _, a = read_arrays(p, tag.split("-")[0][:16], lattice.digest(), mode)
                self.hits += 1
                return a
            except CacheError as exc:
                log.warning("ignoring stale cache: %s", exc)
        self.misses += 1
        a = builder()
        write_arrays(p, tag.split("-")[0][:16], lattice.digest(), mode, a)
        return a

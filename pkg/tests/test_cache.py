import struct

import numpy as np
import pytest

from pxpfloquet.cache import CacheError, CacheStore, read_arrays, sha256_file, write_arrays
from pxpfloquet.hilbert import MOMENTUM_K0, make_basis
from pxpfloquet.lattice import build_lattice
from pxpfloquet.operators import build_path_flip

LAT = build_lattice("kagome", 2, 2)


def test_roundtrip(tmp_path):
    arrays = {
        "a": np.arange(6, dtype=np.int64).reshape(2, 3),
        "z": np.array([1 + 2j, -3j]),
        "e": np.zeros(0),
    }
    p = tmp_path / "x.bin"
    write_arrays(p, "basis", LAT.digest(), "full", arrays)
    head, got = read_arrays(p, "basis", LAT.digest(), "full")
    assert head == {"kind": "basis", "digest": LAT.digest(), "mode": "full", "version": 1}
    for k, v in arrays.items():
        assert got[k].dtype == v.dtype
        np.testing.assert_array_equal(got[k], v)


def test_little_endian_header(tmp_path):
    p = tmp_path / "x.bin"
    write_arrays(p, "operator", LAT.digest(), "k0", {"v": np.array([1.0])})
    raw = p.read_bytes()
    assert raw[:4] == b"PXPF"
    assert struct.unpack_from("<H", raw, 4)[0] == 1


@pytest.mark.parametrize(
    "corrupt,msg",
    [
        (lambda b: b"XXXX" + b[4:], "magic"),
        (lambda b: b[:4] + struct.pack("<H", 9) + b[6:], "version"),
        (lambda b: b[:-3], "truncated"),
        (lambda b: b[:10], "truncated header"),
    ],
)
def test_corruption_detected(tmp_path, corrupt, msg):
    p = tmp_path / "x.bin"
    write_arrays(p, "basis", LAT.digest(), "full", {"v": np.arange(5.0)})
    p.write_bytes(corrupt(p.read_bytes()))
    with pytest.raises(CacheError, match=msg):
        read_arrays(p)


def test_key_mismatch(tmp_path):
    p = tmp_path / "x.bin"
    write_arrays(p, "basis", LAT.digest(), "full", {"v": np.arange(2)})
    with pytest.raises(CacheError, match="mode mismatch"):
        read_arrays(p, mode="k0")
    with pytest.raises(CacheError, match="digest mismatch"):
        read_arrays(p, digest=build_lattice("kagome", 2, 3).digest())


def test_store_hits(tmp_path):
    store = CacheStore(tmp_path)
    b1 = store.basis(LAT, MOMENTUM_K0, lambda: make_basis(LAT, MOMENTUM_K0))
    b2 = store.basis(LAT, MOMENTUM_K0, lambda: pytest.fail("rebuilt"))
    assert (store.hits, store.misses) == (1, 1)
    np.testing.assert_array_equal(b1.states, b2.states)
    np.testing.assert_array_equal(b1.norm, b2.norm)
    op = store.operator(b2, "O3", lambda: build_path_flip(b2, 3))
    again = store.operator(b2, "O3", lambda: pytest.fail("rebuilt"))
    assert abs(op.matrix - again.matrix).max() == 0 and again.hermitian
    a = store.arrays(LAT, MOMENTUM_K0, "eig-x", lambda: {"E": np.ones(3)})
    assert store.arrays(LAT, MOMENTUM_K0, "eig-x", dict)["E"].tolist() == a["E"].tolist()
    assert store.hits == 3


def test_stale_file_rebuilt(tmp_path):
    store = CacheStore(tmp_path)
    p = store.path(LAT, "full", "basis")
    p.write_bytes(b"garbage")
    b = store.basis(LAT, "full", lambda: make_basis(LAT))
    assert b.dim == 108 and store.misses == 1
    assert len(sha256_file(p)) == 64

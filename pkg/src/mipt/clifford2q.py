"""Canonical enumeration of the two-qubit Clifford group (modulo phase).

The 11520 elements are generated once by breadth-first closure over
``{H⊗I, I⊗H, S⊗I, I⊗S, CNOT}``. Each element is identified by its action
on the generators ``X0, Z0, X1, Z1`` of the Pauli group. The index is

    index = 16 * symplectic_rank + sign_bits

where ``symplectic_rank`` orders the 720 binary symplectic parts by their
packed image code and ``sign_bits`` (bit g set when generator g maps to a
negative Pauli) selects one of the 16 Pauli-frame variants.

Local Pauli encoding for the tables: ``x0 | z0<<1 | x1<<2 | z1<<3`` with
qubit 0 the more significant tensor factor of the 4x4 matrices.

The table is cached in memory; set ``MIPT_TRAJ_CACHE`` to a file (or
directory) path to persist it between processes.
"""

import os
import tempfile
from functools import lru_cache

import numpy as np

from mipt.pauli import PAULIS

N_CLIFFORD_2Q = 11520
_N_SYMPLECTIC = 720
_CACHE_NAME = "clifford2q_v1.npz"
_GENERATOR_IDX = (1, 2, 4, 8)  # X0, Z0, X1, Z1


def _local_digit(x, z):
    return {(0, 0): 0, (1, 0): 1, (1, 1): 2, (0, 1): 3}[(x, z)]


def _local_paulis():
    mats = np.empty((16, 4, 4), dtype=complex)
    for idx in range(16):
        d0 = _local_digit(idx & 1, (idx >> 1) & 1)
        d1 = _local_digit((idx >> 2) & 1, (idx >> 3) & 1)
        mats[idx] = np.kron(PAULIS[d0], PAULIS[d1])
    return mats


LOCAL_PAULIS = _local_paulis()


def _images(us, which=range(16)):
    """Return (out_idx, sign) arrays of shape (F, len(which))."""
    which = list(which)
    conj = np.einsum("fab,kbc,fdc->fkad", us, LOCAL_PAULIS[which], us.conj())
    # tr(P_j^dagger M) / 4 for all 16 local Paulis
    coef = np.einsum("jab,fkab->fkj", LOCAL_PAULIS.conj(), conj) / 4
    out = np.argmax(np.abs(coef), axis=-1)
    val = np.take_along_axis(coef, out[..., None], axis=-1)[..., 0]
    if not np.allclose(np.abs(val), 1, atol=1e-9):
        raise RuntimeError("non-Clifford element encountered")
    sign = (val.real < 0).astype(np.uint8)
    return out.astype(np.uint8), sign


def _key(out, sign):
    k = np.zeros(out.shape[0], dtype=np.int64)
    for g in range(out.shape[1]):
        k |= (out[:, g].astype(np.int64) | (sign[:, g].astype(np.int64) << 4)) << (5 * g)
    return k


def _normalize_phase(us):
    flat = us.reshape(us.shape[0], -1)
    first = np.argmax(np.abs(flat) > 1e-9, axis=1)
    ph = flat[np.arange(flat.shape[0]), first]
    us = us * (np.abs(ph) / ph)[:, None, None]
    us.real[np.abs(us.real) < 1e-15] = 0.0
    us.imag[np.abs(us.imag) < 1e-15] = 0.0
    return us


def _generators():
    h = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
    s = np.diag([1, 1j])
    i2 = np.eye(2)
    cnot = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
    return np.stack([np.kron(h, i2), np.kron(i2, h), np.kron(s, i2), np.kron(i2, s), cnot])


def _build():
    gens = _generators()
    start = np.eye(4, dtype=complex)[None]
    o, s = _images(start, _GENERATOR_IDX)
    seen = {int(_key(o, s)[0]): start[0]}
    frontier = start
    while frontier.shape[0]:
        cand = np.einsum("gab,fbc->gfac", gens, frontier).reshape(-1, 4, 4)
        o, s = _images(cand, _GENERATOR_IDX)
        keys = _key(o, s)
        fresh = []
        for k, u in zip(keys.tolist(), cand):
            if k not in seen:
                seen[k] = u
                fresh.append(u)
        frontier = np.array(fresh).reshape(-1, 4, 4)
    if len(seen) != N_CLIFFORD_2Q:
        raise RuntimeError(f"closure produced {len(seen)} elements")

    us = _normalize_phase(np.array(list(seen.values())))
    gen_out, gen_sign = _images(us, _GENERATOR_IDX)
    symp = np.zeros(us.shape[0], dtype=np.int64)
    signbits = np.zeros(us.shape[0], dtype=np.int64)
    for g in range(4):
        symp |= gen_out[:, g].astype(np.int64) << (4 * g)
        signbits |= gen_sign[:, g].astype(np.int64) << g
    codes = np.unique(symp)
    if codes.size != _N_SYMPLECTIC:
        raise RuntimeError("unexpected symplectic group order")
    index = 16 * np.searchsorted(codes, symp) + signbits
    if np.unique(index).size != N_CLIFFORD_2Q:
        raise RuntimeError("sign frames do not cover the group")
    order = np.argsort(index)
    us = us[order]
    bits, sign = _images(us)
    return us, bits, sign


def _cache_path():
    p = os.environ.get("MIPT_TRAJ_CACHE")
    if not p:
        return None
    if os.path.isdir(p) or p.endswith(os.sep):
        return os.path.join(p, _CACHE_NAME)
    return p


def _load(path):
    try:
        with np.load(path) as f:
            us, bits, sign = f["unitaries"], f["bits"], f["sign"]
    except (OSError, KeyError, ValueError):
        return None
    if us.shape != (N_CLIFFORD_2Q, 4, 4) or bits.shape != (N_CLIFFORD_2Q, 16):
        return None
    return us, bits, sign


def _save(path, us, bits, sign):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".npz")
    try:
        with os.fdopen(fd, "wb") as f:
            np.savez(f, unitaries=us, bits=bits, sign=sign)
        os.replace(tmp, path)
    except OSError:
        if os.path.exists(tmp):
            os.remove(tmp)


@lru_cache(maxsize=1)
def clifford_tables():
    """``(unitaries, table_bits, table_sign)`` for all 11520 elements.

    ``table_bits[g, idx]`` is the local image of Pauli ``idx`` under
    conjugation ``U P U†`` and ``table_sign[g, idx]`` its sign bit.
    """
    path = _cache_path()
    data = _load(path) if path and os.path.exists(path) else None
    if data is None:
        data = _build()
        if path:
            _save(path, *data)
    us, bits, sign = data
    for a in (us, bits, sign):
        a.setflags(write=False)
    return us, np.ascontiguousarray(bits, dtype=np.uint8), np.ascontiguousarray(sign, dtype=np.uint8)


def clifford_unitary(index):
    check_index(index)
    return clifford_tables()[0][index].copy()


def check_index(index):
    if not 0 <= int(index) < N_CLIFFORD_2Q:
        raise ValueError(f"Clifford index {index} outside [0, {N_CLIFFORD_2Q})")


@lru_cache(maxsize=1)
def _index_lookup():
    us = clifford_tables()[0]
    o, s = _images(us, _GENERATOR_IDX)
    return {int(k): i for i, k in enumerate(_key(o, s))}


def index_of(unitary):
    """Index of the Clifford equal to ``unitary`` up to global phase."""
    u = np.asarray(unitary, dtype=complex)[None]
    o, s = _images(u, _GENERATOR_IDX)
    return _index_lookup()[int(_key(o, s)[0])]


# fixed by the enumeration above; verified in the test-suite
IDENTITY_INDEX = 5408
CNOT_INDEX = 7104  # control qubit 0, target qubit 1

import numpy as np
import pytest

from mipt import clifford2q
from mipt.clifford2q import CNOT_INDEX, IDENTITY_INDEX, N_CLIFFORD_2Q, clifford_tables, clifford_unitary, index_of
from mipt.pauli import PAULIS

CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)


def _local(idx):
    x0, z0, x1, z1 = idx & 1, (idx >> 1) & 1, (idx >> 2) & 1, (idx >> 3) & 1
    d = {(0, 0): 0, (1, 0): 1, (1, 1): 2, (0, 1): 3}
    return np.kron(PAULIS[d[(x0, z0)]], PAULIS[d[(x1, z1)]])


def _same_up_to_phase(a, b):
    k = np.argmax(np.abs(b))
    ph = a.reshape(-1)[k] / b.reshape(-1)[k]
    return abs(abs(ph) - 1) < 1e-9 and np.allclose(a, ph * b, atol=1e-9)


def test_group_size_and_distinct():
    us, bits, sign = clifford_tables()
    assert us.shape == (N_CLIFFORD_2Q, 4, 4)
    keys = {(bits[g].tobytes(), sign[g].tobytes()) for g in range(N_CLIFFORD_2Q)}
    assert len(keys) == N_CLIFFORD_2Q


def test_identity_and_cnot_indices():
    assert _same_up_to_phase(clifford_unitary(IDENTITY_INDEX), np.eye(4))
    assert _same_up_to_phase(clifford_unitary(CNOT_INDEX), CNOT)
    assert index_of(np.eye(4)) == IDENTITY_INDEX
    assert index_of(1j * CNOT) == CNOT_INDEX


def test_tables_match_conjugation(rng):
    us, bits, sign = clifford_tables()
    for g in rng.integers(0, N_CLIFFORD_2Q, size=60):
        u = us[g]
        for idx in range(16):
            img = u @ _local(idx) @ u.conj().T
            s = -1 if sign[g, idx] else 1
            assert np.allclose(img, s * _local(int(bits[g, idx])), atol=1e-10)


def test_unitaries_unitary():
    us = clifford_tables()[0]
    prod = np.einsum("gab,gcb->gac", us, us.conj())
    assert np.allclose(prod, np.eye(4), atol=1e-12)


def test_index_of_round_trip(rng):
    for g in rng.integers(0, N_CLIFFORD_2Q, size=50):
        assert index_of(clifford_unitary(int(g)) * np.exp(0.3j)) == g


@pytest.mark.parametrize("bad", [-1, N_CLIFFORD_2Q])
def test_bad_index(bad):
    with pytest.raises(ValueError):
        clifford_unitary(bad)


def test_disk_cache(tmp_path, monkeypatch):
    monkeypatch.setenv("MIPT_TRAJ_CACHE", str(tmp_path))
    us, bits, sign = clifford_tables()
    path = clifford2q._cache_path()
    clifford2q._save(path, np.asarray(us), bits, sign)
    loaded = clifford2q._load(path)
    assert loaded is not None
    assert np.array_equal(loaded[1], bits) and np.array_equal(loaded[2], sign)

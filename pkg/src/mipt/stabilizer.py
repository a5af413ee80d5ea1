"""Bit-packed Aaronson-Gottesman tableau with Z measurements and GF(2) entropies.

Rows ``0..n-1`` are destabilizers, rows ``n..2n-1`` stabilizers and row
``2n`` is scratch space for deterministic measurements. Entropies are in
bits; for stabilizer states every Rényi entropy equals the von Neumann one,
so the rank formula is exact.
"""

import numpy as np

from mipt import kernels
from mipt.clifford2q import check_index, clifford_tables
from mipt.gf2 import pack_rows, rank_packed
from mipt.pauli import PauliString
from mipt.regions import as_region


class ImpossibleOutcomeError(ValueError):
    """Requested measurement outcome has zero probability."""


class StabilizerTableau:
    def __init__(self, n, bitstring=None):
        if n < 1:
            raise ValueError("need at least one qubit")
        self.n = n
        self.words = -(-n // 64)
        rows = 2 * n + 1
        self.x = np.zeros((rows, self.words), dtype=np.uint64)
        self.z = np.zeros((rows, self.words), dtype=np.uint64)
        self.r = np.zeros(rows, dtype=np.uint8)
        for q in range(n):
            w, b = q >> 6, np.uint64(q & 63)
            self.x[q, w] |= np.uint64(1) << b
            self.z[n + q, w] |= np.uint64(1) << b
        if bitstring is not None:
            bits = _parse_bits(bitstring, n)
            self.r[n : 2 * n] = bits

    def copy(self):
        other = object.__new__(StabilizerTableau)
        other.n, other.words = self.n, self.words
        other.x, other.z, other.r = self.x.copy(), self.z.copy(), self.r.copy()
        return other

    def __eq__(self, other):
        if not isinstance(other, StabilizerTableau):
            return NotImplemented
        m = 2 * self.n
        return (
            self.n == other.n
            and np.array_equal(self.x[:m], other.x[:m])
            and np.array_equal(self.z[:m], other.z[:m])
            and np.array_equal(self.r[:m], other.r[:m])
        )

    # ------------------------------------------------------------ views

    def _bits(self, rows):
        qs = np.arange(self.n)
        w, b = qs >> 6, (qs & 63).astype(np.uint64)
        xb = ((self.x[rows][:, w] >> b) & np.uint64(1)).astype(np.uint8)
        zb = ((self.z[rows][:, w] >> b) & np.uint64(1)).astype(np.uint8)
        return xb, zb

    def _row(self, i):
        xb, zb = self._bits(slice(i, i + 1))
        return PauliString(self.n, xb[0], zb[0], -1 if self.r[i] else 1)

    def stabilizers(self):
        return [self._row(self.n + i) for i in range(self.n)]

    def destabilizers(self):
        return [self._row(i) for i in range(self.n)]

    def symplectic_matrix(self):
        """(2n, 2n) 0/1 matrix ``[x | z]`` of destabilizer then stabilizer rows."""
        xb, zb = self._bits(slice(0, 2 * self.n))
        return np.hstack([xb, zb])

    def check_invariants(self):
        """Raise ``AssertionError`` unless rows form a symplectic basis."""
        m = self.symplectic_matrix().astype(np.int64)
        n = self.n
        lam = np.zeros((2 * n, 2 * n), dtype=np.int64)
        lam[:n, n:] = np.eye(n, dtype=np.int64)
        lam[n:, :n] = np.eye(n, dtype=np.int64)
        prod = (m @ lam @ m.T) % 2
        assert np.array_equal(prod, lam), "symplectic pairing violated"
        return True

    # ------------------------------------------------------------ gates

    def _gate_rows(self):
        return self.x[: 2 * self.n], self.z[: 2 * self.n], self.r[: 2 * self.n]

    def apply_clifford_2q(self, gate_index, q0, q1):
        check_index(gate_index)
        self._check_pair(q0, q1)
        _, bits, sign = clifford_tables()
        kernels.apply_gate(*self._gate_rows(), int(q0), int(q1), bits[gate_index], sign[gate_index])
        return self

    def apply_layer(self, q0s, q1s, gate_ids):
        """Apply many 2-qubit Cliffords in sequence in a single kernel call."""
        q0s = np.ascontiguousarray(q0s, dtype=np.int64)
        q1s = np.ascontiguousarray(q1s, dtype=np.int64)
        gate_ids = np.ascontiguousarray(gate_ids, dtype=np.int64)
        _, bits, sign = clifford_tables()
        kernels.apply_layer(*self._gate_rows(), q0s, q1s, gate_ids, bits, sign)
        return self

    def _check_pair(self, q0, q1):
        if q0 == q1:
            raise ValueError("gate qubits must differ")
        for q in (q0, q1):
            self._check_qubit(q)

    def _check_qubit(self, q):
        if not 0 <= q < self.n:
            raise IndexError(f"qubit {q} out of range for n={self.n}")

    # ------------------------------------------------------ measurement

    def _xcol(self, q):
        w, b = q >> 6, np.uint64(q & 63)
        return ((self.x[: 2 * self.n, w] >> b) & np.uint64(1)).astype(bool)

    def peek_z(self, q):
        """Deterministic outcome of measuring ``q`` in Z, or ``None`` if random."""
        self._check_qubit(q)
        xcol = self._xcol(q)
        if xcol[self.n :].any():
            return None
        srcs = self.n + np.flatnonzero(xcol[: self.n])
        kernels.rowmul_into(self.x, self.z, self.r, 2 * self.n, srcs.astype(np.int64))
        return int(self.r[2 * self.n])

    def _collapse(self, q, xcol, outcome):
        n = self.n
        p = n + int(np.flatnonzero(xcol[n:])[0])
        targets = np.flatnonzero(xcol)
        targets = targets[targets != p].astype(np.int64)
        kernels.rowmul_many(self.x, self.z, self.r, targets, p)
        d = p - n
        self.x[d], self.z[d], self.r[d] = self.x[p], self.z[p], self.r[p]
        self.x[p] = 0
        self.z[p] = 0
        self.z[p, q >> 6] = np.uint64(1) << np.uint64(q & 63)
        self.r[p] = outcome

    def measure(self, q, u):
        """Measure qubit ``q`` using the uniform variate ``u`` in [0, 1).

        Returns ``(outcome, born_p)``; a random outcome is 0 when ``u < 0.5``.
        """
        self._check_qubit(q)
        xcol = self._xcol(q)
        if xcol[self.n :].any():
            outcome = 0 if u < 0.5 else 1
            self._collapse(q, xcol, outcome)
            return outcome, 0.5
        return self.peek_z(q), 1.0

    def force(self, q, outcome):
        """Project onto ``outcome`` for qubit ``q``; returns its Born probability."""
        self._check_qubit(q)
        outcome = int(outcome)
        if outcome not in (0, 1):
            raise ValueError("outcome must be 0 or 1")
        xcol = self._xcol(q)
        if xcol[self.n :].any():
            self._collapse(q, xcol, outcome)
            return 0.5
        det = self.peek_z(q)
        if det != outcome:
            raise ImpossibleOutcomeError(f"qubit {q} is deterministically {det}")
        return 1.0

    # ---------------------------------------------------------- entropy

    def _restricted_rank(self, qs):
        qs = np.asarray(qs, dtype=np.int64)
        w, b = qs >> 6, (qs & 63).astype(np.uint64)
        stab = slice(self.n, 2 * self.n)
        xb = (self.x[stab][:, w] >> b) & np.uint64(1)
        zb = (self.z[stab][:, w] >> b) & np.uint64(1)
        rows = pack_rows(np.hstack([xb, zb]).astype(np.uint8))
        return rank_packed(rows, 2 * len(qs))

    def entropy(self, region):
        """Entanglement entropy of ``region`` in bits."""
        region = as_region(region, self.n)
        k = len(region)
        if k == 0 or k == self.n:
            return 0.0
        qs = region.qubits
        if 2 * k > self.n:
            # pure state: S(A) = S(complement), use the smaller side
            qs = region.complement(self.n).qubits
        return float(self._restricted_rank(qs) - len(qs))

    def mutual_info(self, a, c):
        a = as_region(a, self.n)
        c = as_region(c, self.n)
        if not a.isdisjoint(c):
            raise ValueError("regions overlap")
        return self.entropy(a) + self.entropy(c) - self.entropy(a.union(c))

    def to_statevector(self):
        """Dense amplitudes (qubit 0 most significant) via stabilizer projectors; n <= 12."""
        if self.n > 12:
            raise ValueError("dense conversion limited to 12 qubits")
        dim = 1 << self.n
        rng = np.random.default_rng(12345)
        v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
        for s in self.stabilizers():
            v = 0.5 * (v + s.to_matrix() @ v)
        nrm = np.linalg.norm(v)
        if nrm < 1e-8:
            raise RuntimeError("projection vanished")
        v = v / nrm
        k = int(np.argmax(np.abs(v)))
        return v * (abs(v[k]) / v[k])


def _parse_bits(bitstring, n):
    if isinstance(bitstring, str):
        bits = [int(c) for c in bitstring]
    else:
        bits = [int(b) for b in bitstring]
    if len(bits) != n or any(b not in (0, 1) for b in bits):
        raise ValueError(f"initial bitstring must be {n} bits of 0/1")
    return np.array(bits, dtype=np.uint8)


# functional aliases


def apply_clifford_2q(tab, gate_index, q0, q1):
    """Conjugate ``tab`` in place by Clifford ``gate_index`` on ``(q0, q1)`` and return it."""
    return tab.apply_clifford_2q(gate_index, q0, q1)


def measure_z(tab, q, rng):
    return tab.measure(q, rng.random())


def force_z(tab, q, outcome):
    tab.force(q, outcome)
    return tab


def entropy(tab, region):
    return tab.entropy(region)


def mutual_info(tab, a, c):
    return tab.mutual_info(a, c)

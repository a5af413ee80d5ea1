"""Pauli strings and the Pauli operator basis on small supports.

Basis encoding used throughout: digits ``0=I, 1=X, 2=Y, 3=Z``; a string on
a domain ``(d_0, d_1, ...)`` has index ``sum(digit_j * 4**j)`` (little-endian
in domain order). Matrices on a domain order qubit ``d_0`` as the most
significant tensor factor, matching :mod:`mipt.dense`.
"""

from dataclasses import dataclass, field

import numpy as np

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = np.stack([I2, X, Y, Z])

_LETTERS = "IXYZ"
# digit -> (x, z) and back
_DIGIT_XZ = ((0, 0), (1, 0), (1, 1), (0, 1))
_XZ_DIGIT = {xz: d for d, xz in enumerate(_DIGIT_XZ)}
_PHASES = (1, 1j, -1, -1j)

# B[p, 2a + b] = P_p[b, a] / 2 so that coefficient_p = tr(P_p M) / 2
_DECOMP = np.stack([p.T.reshape(-1) for p in PAULIS]) / 2
# S[2a + b, p] = P_p[a, b]
_SYNTH = np.stack([p.reshape(-1) for p in PAULIS], axis=1)


@dataclass
class PauliString:
    """``phase * P_0 ⊗ ... ⊗ P_{n-1}`` with Hermitian single-qubit factors."""

    n: int
    x_bits: np.ndarray
    z_bits: np.ndarray
    phase: complex = 1

    def __post_init__(self):
        self.x_bits = np.asarray(self.x_bits, dtype=np.uint8) & 1
        self.z_bits = np.asarray(self.z_bits, dtype=np.uint8) & 1
        if self.x_bits.shape != (self.n,) or self.z_bits.shape != (self.n,):
            raise ValueError(f"bit vectors must have length {self.n}")
        phase = complex(self.phase)
        if not any(phase == p for p in _PHASES):
            raise ValueError(f"phase must be one of ±1, ±i, got {self.phase}")
        self.phase = phase

    @classmethod
    def from_label(cls, label):
        """Parse labels like ``"XIZ"``, ``"-YY"`` or ``"+iZ"``."""
        phase = 1
        if label.startswith(("+", "-")):
            phase = -1 if label[0] == "-" else 1
            label = label[1:]
        if label.startswith("i"):
            phase *= 1j
            label = label[1:]
        digits = [_LETTERS.index(c) for c in label.upper().replace("_", "I")]
        x = [_DIGIT_XZ[d][0] for d in digits]
        z = [_DIGIT_XZ[d][1] for d in digits]
        return cls(len(digits), x, z, phase)

    @classmethod
    def from_digits(cls, digits, phase=1):
        digits = list(digits)
        return cls(
            len(digits),
            [_DIGIT_XZ[d][0] for d in digits],
            [_DIGIT_XZ[d][1] for d in digits],
            phase,
        )

    @property
    def digits(self):
        return [_XZ_DIGIT[(int(a), int(b))] for a, b in zip(self.x_bits, self.z_bits)]

    @property
    def support(self):
        return [int(q) for q in np.flatnonzero(self.x_bits | self.z_bits)]

    @property
    def label(self):
        sign = {1: "+", -1: "-", 1j: "+i", -1j: "-i"}[self.phase]
        return sign + "".join(_LETTERS[d] for d in self.digits)

    def __repr__(self):
        return f"PauliString({self.label!r})"

    def __eq__(self, other):
        if not isinstance(other, PauliString):
            return NotImplemented
        return (
            self.n == other.n
            and self.phase == other.phase
            and np.array_equal(self.x_bits, other.x_bits)
            and np.array_equal(self.z_bits, other.z_bits)
        )

    def commutes(self, other):
        s = int(np.sum(self.x_bits & other.z_bits) + np.sum(self.z_bits & other.x_bits))
        return s % 2 == 0

    def __mul__(self, other):
        if self.n != other.n:
            raise ValueError("qubit count mismatch")
        phase = self.phase * other.phase
        for a, b in zip(self.digits, other.digits):
            phase *= _local_product_phase(a, b)
        return PauliString(self.n, self.x_bits ^ other.x_bits, self.z_bits ^ other.z_bits, phase)

    def to_matrix(self):
        return self.phase * pauli_matrix(self.digits)


def _local_product_phase(a, b):
    # P_a P_b = phase * P_c
    if a == 0 or b == 0 or a == b:
        return 1
    prod = PAULIS[a] @ PAULIS[b]
    c = _XZ_DIGIT[(_DIGIT_XZ[a][0] ^ _DIGIT_XZ[b][0], _DIGIT_XZ[a][1] ^ _DIGIT_XZ[b][1])]
    return complex(np.trace(PAULIS[c] @ prod) / 2)


def pauli_matrix(digits):
    out = np.ones((1, 1), dtype=complex)
    for d in digits:
        out = np.kron(out, PAULIS[d])
    return out


def index_to_digits(index, k):
    return [(index >> (2 * j)) & 3 for j in range(k)]


def digits_to_index(digits):
    return sum(int(d) << (2 * j) for j, d in enumerate(digits))


def pauli_decompose(mat):
    """Coefficients ``c_I = tr(σ_I M) / 2**k`` for a ``2**k``-square matrix.

    Runs in ``O(k 4**k)`` by contracting one qubit at a time.
    """
    mat = np.asarray(mat, dtype=complex)
    dim = mat.shape[0]
    k = dim.bit_length() - 1
    if mat.shape != (dim, dim) or 1 << k != dim:
        raise ValueError("expected a 2**k square matrix")
    if k == 0:
        return mat.reshape(1).copy()
    t = mat.reshape((2,) * (2 * k))
    perm = [ax for j in range(k) for ax in (j, k + j)]
    t = t.transpose(perm).reshape((4,) * k)
    for j in range(k):
        t = np.moveaxis(np.tensordot(_DECOMP, t, axes=([1], [j])), 0, j)
    return t.transpose(tuple(range(k - 1, -1, -1))).reshape(-1)


def pauli_synthesize(coeffs, k):
    """Inverse of :func:`pauli_decompose`: ``sum_I c_I σ_I``."""
    coeffs = np.asarray(coeffs)
    if coeffs.shape != (4**k,):
        raise ValueError(f"expected {4**k} coefficients")
    if k == 0:
        return coeffs.astype(complex).reshape(1, 1)
    t = coeffs.astype(complex).reshape((4,) * k).transpose(tuple(range(k - 1, -1, -1)))
    for j in range(k):
        t = np.moveaxis(np.tensordot(_SYNTH, t, axes=([1], [j])), 0, j)
    t = t.reshape((2,) * (2 * k))
    inv = [0] * (2 * k)
    for j in range(k):
        inv[j] = 2 * j
        inv[k + j] = 2 * j + 1
    dim = 1 << k
    return t.transpose(inv).reshape(dim, dim)

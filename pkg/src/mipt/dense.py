"""Exact statevector simulation and the imaginary-time fidelity machinery.

Amplitude ordering: qubit 0 is the most significant bit of the basis index
(axis 0 of the ``(2,)*n`` tensor view). All entropies are in bits.
"""

from dataclasses import dataclass

import numpy as np

from mipt import kernels
from mipt.pauli import PauliString
from mipt.regions import SubsystemSpec, as_region

ZERO_PROB = 1e-14
UNITARY_TOL = 1e-10
DEFAULT_RDM_CAP = 12
DENSE_CAP = 24


class VanishingNormError(ValueError):
    """Projection or imaginary-time evolution annihilated the state."""


@dataclass
class StateVector:
    n: int
    amps: np.ndarray

    def __post_init__(self):
        self.amps = np.asarray(self.amps, dtype=complex)
        if self.amps.shape != (1 << self.n,):
            raise ValueError(f"expected {1 << self.n} amplitudes for n={self.n}")

    @classmethod
    def zeros(cls, n, bitstring=None):
        if n > DENSE_CAP:
            raise ValueError(f"dense simulation capped at {DENSE_CAP} qubits")
        amps = np.zeros(1 << n, dtype=complex)
        idx = 0
        if bitstring is not None:
            bits = [int(c) for c in bitstring]
            if len(bits) != n:
                raise ValueError("bitstring length must equal n")
            for b in bits:
                idx = (idx << 1) | b
        amps[idx] = 1.0
        return cls(n, amps)

    def copy(self):
        return StateVector(self.n, self.amps.copy())

    def tensor(self):
        return self.amps.reshape((2,) * self.n)

    def norm(self):
        return float(np.linalg.norm(self.amps))


@dataclass
class DensityMatrix:
    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=complex)

    @property
    def d(self):
        return self.matrix.shape[0]

    def check(self, tol=1e-10):
        m = self.matrix
        assert np.allclose(m, m.conj().T, atol=tol), "not Hermitian"
        assert abs(np.trace(m) - 1) < tol, "trace != 1"
        assert np.linalg.eigvalsh(m).min() > -tol, "negative eigenvalue"
        return True


@dataclass
class LocalOperator:
    support: SubsystemSpec
    matrix: np.ndarray

    def __post_init__(self):
        if not isinstance(self.support, SubsystemSpec):
            self.support = SubsystemSpec.of(self.support)
        self.matrix = np.asarray(self.matrix, dtype=complex)
        dim = 1 << len(self.support)
        if self.matrix.shape != (dim, dim):
            raise ValueError(f"matrix must be {dim}x{dim} for support {self.support.qubits}")

    def is_unitary(self, tol=UNITARY_TOL):
        m = self.matrix
        return np.allclose(m @ m.conj().T, np.eye(m.shape[0]), atol=tol)

    def is_hermitian(self, tol=UNITARY_TOL):
        return np.allclose(self.matrix, self.matrix.conj().T, atol=tol)


def random_state(n, rng):
    v = rng.normal(size=1 << n) + 1j * rng.normal(size=1 << n)
    return StateVector(n, v / np.linalg.norm(v))


def _check_unitary(u, tol=UNITARY_TOL):
    if not np.allclose(u @ u.conj().T, np.eye(u.shape[0]), atol=tol):
        raise ValueError("matrix is not unitary")


def apply_2q_unitary(state, u, q0, q1):
    u = np.ascontiguousarray(u, dtype=complex)
    if u.shape != (4, 4):
        raise ValueError("expected a 4x4 matrix")
    _check_unitary(u)
    if q0 == q1:
        raise ValueError("gate qubits must differ")
    for q in (q0, q1):
        if not 0 <= q < state.n:
            raise IndexError(f"qubit {q} out of range")
    out = state.amps.copy()
    kernels.sv_apply_2q(out, u, int(q0), int(q1), state.n)
    return StateVector(state.n, out)


def apply_operator(state, matrix, support):
    """Apply an arbitrary (not necessarily unitary) operator on ``support``; no renormalisation."""
    qs = as_region(support, state.n).qubits
    k = len(qs)
    if k == 0:
        return StateVector(state.n, matrix[0, 0] * state.amps)
    op = np.asarray(matrix, dtype=complex).reshape((2,) * (2 * k))
    t = np.tensordot(op, state.tensor(), axes=(list(range(k, 2 * k)), list(qs)))
    t = np.moveaxis(t, list(range(k)), list(qs))
    return StateVector(state.n, np.ascontiguousarray(t).reshape(-1))


def apply_local_unitary(state, op):
    if not op.is_unitary():
        raise ValueError("operator is not unitary")
    return apply_operator(state, op.matrix, op.support)


def born_probability(state, q, outcome):
    t = np.moveaxis(state.tensor(), q, 0)
    sub = t[outcome]
    return float(np.vdot(sub, sub).real)


def project_z(state, q, outcome):
    """Project qubit ``q`` onto ``|outcome>``; returns ``(state, born_p)``."""
    if not 0 <= q < state.n:
        raise IndexError(f"qubit {q} out of range")
    p = born_probability(state, q, outcome)
    if p <= ZERO_PROB:
        raise VanishingNormError(f"outcome {outcome} on qubit {q} has probability {p:.3g}")
    t = np.moveaxis(state.tensor(), q, 0).copy()
    t[1 - outcome] = 0
    t /= np.sqrt(p)
    return StateVector(state.n, np.moveaxis(t, 0, q).reshape(-1)), p


def imaginary_evolve(state, h, beta):
    """Normalised ``exp(-beta h)|psi>`` for a Hermitian local ``h``.

    Uses the eigendecomposition of ``h`` on its support only, shifted by the
    ground energy so large ``beta`` stays finite. ``beta = inf`` projects onto
    the ground space.
    """
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    if not h.is_hermitian():
        raise ValueError("operator is not Hermitian")
    if beta == 0:
        return state.copy()
    evals, evecs = np.linalg.eigh(h.matrix)
    shifted = evals - evals[0]
    if np.isinf(beta):
        # ground-space projector; degeneracy decided at the eigensolver's precision
        factors = (shifted <= 1e-12 * max(1.0, abs(evals).max())).astype(float)
    else:
        factors = np.exp(-beta * shifted)
    g = (evecs * factors) @ evecs.conj().T
    out = apply_operator(state, g, h.support)
    nrm = out.norm()
    if not np.isfinite(nrm) or nrm <= np.sqrt(ZERO_PROB) * 1e-3:
        raise VanishingNormError("state has no weight left after imaginary-time evolution")
    return StateVector(state.n, out.amps / nrm)


def reduced_density(state, region, cap=DEFAULT_RDM_CAP):
    qs = as_region(region, state.n).qubits
    k = len(qs)
    if k > cap:
        raise ValueError(f"region of {k} qubits exceeds cap {cap}")
    rest = [q for q in range(state.n) if q not in qs]
    m = state.tensor().transpose(list(qs) + rest).reshape(1 << k, -1)
    return DensityMatrix(m @ m.conj().T)


def entropy_vn(rho):
    lam = np.linalg.eigvalsh(rho.matrix if isinstance(rho, DensityMatrix) else rho)
    lam = lam[lam > ZERO_PROB]
    return float(-np.sum(lam * np.log2(lam)))


def entropy(state, region):
    """Entropy of ``region`` via Schmidt values (no cap on region size)."""
    qs = as_region(region, state.n).qubits
    if len(qs) in (0, state.n):
        return 0.0
    rest = [q for q in range(state.n) if q not in qs]
    m = state.tensor().transpose(list(qs) + rest).reshape(1 << len(qs), -1)
    s = np.linalg.svd(m, compute_uv=False) ** 2
    s = s[s > ZERO_PROB]
    return float(-np.sum(s * np.log2(s)))


def mutual_info(state, a, c):
    a = as_region(a, state.n)
    c = as_region(c, state.n)
    if not a.isdisjoint(c):
        raise ValueError("regions overlap")
    return entropy(state, a) + entropy(state, c) - entropy(state, a.union(c))


def fidelity(s1, s2):
    if s1.n != s2.n:
        raise ValueError("dimension mismatch")
    return float(min(1.0, abs(np.vdot(s1.amps, s2.amps)) ** 2))


def pauli_expectation(state, sigma, region=None):
    """``Re <psi|sigma|psi>``; ``sigma`` spans all qubits or the given ``region``."""
    if region is None:
        if sigma.n != state.n:
            raise ValueError("Pauli string length must match the state")
        support = sigma.support
        digits = [sigma.digits[q] for q in support]
    else:
        region = as_region(region, state.n)
        if sigma.n != len(region):
            raise ValueError("Pauli string length must match the region")
        support = [q for q, d in zip(region.qubits, sigma.digits) if d]
        digits = [d for d in sigma.digits if d]
    local = PauliString.from_digits(digits, sigma.phase)
    out = apply_operator(state, local.to_matrix(), support)
    return float(np.vdot(state.amps, out.amps).real)


def fidelity_bound(P, beta, delta_gap):
    """Lower bound ``1 - ((1-P)/P) exp(-2 beta gap)``; negative values mean vacuous."""
    if not 0 < P <= 1:
        raise ValueError("P must be in (0, 1]")
    c = (1 - P) / P
    return 1.0 - c * np.exp(-2.0 * beta * delta_gap)


def exact_fidelity_closed_form(weights, energies, beta):
    """``1 / (1 + sum_{i>=1} (w_i/w_0) exp(-2 beta (E_i - E_0)))`` with ``E_0`` the ground level."""
    w = np.asarray(weights, dtype=float)
    e = np.asarray(energies, dtype=float)
    if w.shape != e.shape or w.ndim != 1:
        raise ValueError("weights and energies must be 1-d of equal length")
    order = np.argsort(e, kind="stable")
    w, e = w[order], e[order]
    if len(e) > 1 and not e[1] > e[0]:
        raise ValueError("ground energy must be strictly minimal")
    if w[0] <= 0:
        raise ValueError("ground weight c0^2 is zero")
    if np.isinf(beta):
        return 1.0
    tail = np.sum(w[1:] / w[0] * np.exp(-2.0 * beta * (e[1:] - e[0])))
    return float(1.0 / (1.0 + tail))


def level_weights(state, h, tol=1e-9):
    """Distinct eigenvalues of ``h`` and the state's weight in each eigenspace."""
    evals, evecs = np.linalg.eigh(h.matrix)
    rho = reduced_density(state, h.support).matrix
    levels, weights = [], []
    i = 0
    while i < len(evals):
        j = i
        while j + 1 < len(evals) and evals[j + 1] - evals[i] <= tol:
            j += 1
        v = evecs[:, i : j + 1]
        levels.append(float(evals[i]))
        weights.append(float(np.real(np.trace(v.conj().T @ rho @ v))))
        i = j + 1
    return np.array(weights), np.array(levels)


def haar_unitary(d, rng):
    """Haar-random ``d x d`` unitary: Ginibre matrix, QR, then fix the phases of R's diagonal."""
    g = (rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))) / np.sqrt(2)
    q, r = np.linalg.qr(g)
    diag = np.diag(r)
    return q * (diag / np.abs(diag))


def haar_2q(rng):
    return haar_unitary(4, rng)

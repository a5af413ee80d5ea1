"""Deterministic postselection by Trotterised imaginary-time evolution.

Each Trotter step replaces ``exp(-dtau h)`` (normalised) by a unitary
``exp(-i dtau A)`` supported on the domain ``D`` of qubits within ring
distance ``r`` of the measured qubit. ``A = sum_I a_I σ_I`` with real
``a`` minimises ``|| |Δ> + i A|ψ> ||`` where
``|Δ> = (c^{-1/2} exp(-dtau h) - 1)|ψ> / dtau`` and
``c = <ψ|exp(-2 dtau h)|ψ>``. Its stationarity conditions are the real
normal equations ``(S + S^T + λ) a = -b`` with ``S_IJ = Re<σ_I σ_J>`` and
``b_I = 2 Im<ψ|σ_I|Δ>``.

Two solvers produce the same ``a``:

* ``"pauli"`` builds ``S`` and ``b`` explicitly (``4**|D|`` unknowns);
  practical up to ``|D| = 5``.
* ``"operator"`` (default) uses the identity ``(S+S^T) a <-> d (Aρ + ρA)``
  in the Pauli basis, so the system becomes the Lyapunov equation
  ``Aρ + ρA + (λ/d) A = i(Oρ - ρO†)`` on the ``d = 2**|D|`` dimensional
  domain, solved in the eigenbasis of the reduced state ``ρ``.

Everything is computed from the reduced density matrix on ``D``, either
exact or reconstructed from shot-noise estimates of every Pauli expectation.
"""

import functools
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from mipt import dense
from mipt.circuit import DENSE_CIRCUIT_CAP, GateEvent
from mipt.dense import LocalOperator, StateVector
from mipt.pauli import Z, index_to_digits, pauli_decompose, pauli_matrix, pauli_synthesize
from mipt.regions import SubsystemSpec, domain_around

GAP = 2.0  # spectral gap of ±σ_Z
MIN_BORN = 1e-6
COND_LIMIT = 1e12
COEFF_CUTOFF = 1e-12
LEARNED_FORMAT_VERSION = 1


class BudgetWarning(UserWarning):
    """A per-measurement error exceeded its share of the trace-distance budget."""


class SolverError(RuntimeError):
    pass


@dataclass
class QiteConfig:
    beta: float
    dtau: float = 0.1
    r: int = 1
    lam: float = 1e-8
    tomography: str = "exact"  # or "sampled"
    shots: int = 1000
    shot_schedule: str = "fixed"  # "fixed" or "nbeta": shots multiplied by the step count
    max_domain: int = 7
    solver: str = "operator"  # or "pauli"
    seed: int = 0
    track_fidelity: bool = True

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if not 0 < self.dtau:
            raise ValueError("dtau must be positive")
        if self.dtau > self.beta:
            self.dtau = self.beta
        if self.r < 1:
            raise ValueError("r must be >= 1")
        if 2 * self.r + 1 > self.max_domain:
            raise ValueError(f"domain size {2 * self.r + 1} exceeds cap {self.max_domain}")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.tomography not in ("exact", "sampled"):
            raise ValueError("tomography must be 'exact' or 'sampled'")
        if self.solver not in ("operator", "pauli"):
            raise ValueError("solver must be 'operator' or 'pauli'")
        if self.shot_schedule not in ("fixed", "nbeta"):
            raise ValueError("shot_schedule must be 'fixed' or 'nbeta'")

    def with_beta(self, beta):
        d = dict(self.__dict__)
        d["beta"] = beta
        d["dtau"] = min(self.dtau, beta)
        return QiteConfig(**d)


@dataclass
class LearnedStep:
    domain: SubsystemSpec
    coefficients: np.ndarray
    dtau: float
    _unitary: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape != (4 ** len(self.domain),):
            raise ValueError("coefficient vector must have 4**|D| entries")
        if not np.all(np.isfinite(self.coefficients)):
            raise ValueError("non-finite coefficients")

    def generator(self):
        """Hermitian ``A`` on the domain."""
        a = pauli_synthesize(self.coefficients, len(self.domain))
        return 0.5 * (a + a.conj().T)

    def unitary(self):
        if self._unitary is None:
            self._unitary = _expi(self.generator(), -self.dtau)
        return self._unitary

    def apply(self, state):
        return dense.apply_operator(state, self.unitary(), self.domain)


@dataclass
class LearnedPostselection:
    target_qubit: int
    outcome: int
    steps: list
    diagnostics: dict = field(default_factory=dict, repr=False, compare=False)

    def apply(self, state):
        for s in self.steps:
            state = s.apply(state)
        return state


def _expi(herm, t):
    """``exp(i t H)`` for Hermitian ``H`` via eigendecomposition."""
    w, v = np.linalg.eigh(herm)
    return (v * np.exp(1j * t * w)) @ v.conj().T


# ------------------------------------------------------------------ formulas


def outcome_hamiltonian(m, qubit=0):
    """``(2m - 1) σ_Z`` on ``qubit``: ground state ``|m>``, gap 2."""
    if m not in (0, 1):
        raise ValueError("outcome must be 0 or 1")
    return LocalOperator(SubsystemSpec((qubit,)), (2 * m - 1) * Z)


def error_budget(epsilon, M):
    """Per-measurement trace-distance share ``ε / (2M)``."""
    if epsilon <= 0 or M < 1:
        raise ValueError("need epsilon > 0 and M >= 1")
    return epsilon / (2 * M)


def required_beta(P, M, epsilon, delta_gap=GAP):
    """Smallest imaginary time with ``c^{1/2} e^{-β Δ} <= ε / M``, natural log, floored at 0."""
    if not 0 < P <= 1:
        raise ValueError("P must be in (0, 1]")
    if M < 1 or epsilon <= 0 or delta_gap <= 0:
        raise ValueError("need M >= 1, epsilon > 0, delta_gap > 0")
    if P == 1:
        return 0.0
    c = (1 - P) / P
    return max(0.0, (0.5 * math.log(c) + math.log(M / epsilon)) / delta_gap)


def trotter_steps(beta, dtau):
    if beta < 0 or dtau <= 0:
        raise ValueError("need beta >= 0 and dtau > 0")
    x = beta / dtau
    # absorb round-off such as 3 / 0.1 = 30.000000000000004
    return int(math.ceil(x - 1e-9 * max(1.0, x)))


def runtime_estimate(M, epsilon, delta_gap, c):
    """``M^2 ε^-1 Δ^-2 log^2(c^{1/2} M / ε)`` with unit constant."""
    if min(M, epsilon, delta_gap, c) <= 0:
        raise ValueError("inputs must be positive")
    return M**2 / epsilon / delta_gap**2 * math.log(math.sqrt(c) * M / epsilon) ** 2


def step_runtime(n_beta, epsilon_beta):
    """Per-measurement cost ``n_β^2 / ε_β`` with unit constant."""
    return n_beta**2 / epsilon_beta


@dataclass
class ErrorBudget:
    epsilon: float
    M: int
    epsilon_beta: float
    beta_required: float
    n_beta: int
    runtime_estimate: float


def make_budget(epsilon, M, P, dtau=0.1, delta_gap=GAP):
    c = (1 - P) / P
    beta = required_beta(P, M, epsilon, delta_gap)
    return ErrorBudget(
        epsilon=epsilon,
        M=M,
        epsilon_beta=error_budget(epsilon, M),
        beta_required=beta,
        n_beta=trotter_steps(beta, dtau),
        runtime_estimate=runtime_estimate(M, epsilon, delta_gap, c) if c > 0 else 0.0,
    )


# ------------------------------------------------------------- tomography


def _local_hamiltonian(domain, q, m):
    # diagonal of (2m-1) σ_Z on q; domain qubit 0 is the most significant bit
    k = len(domain)
    shift = k - 1 - domain.qubits.index(q)
    bits = (np.arange(1 << k) >> shift) & 1
    return (2 * m - 1) * (1.0 - 2.0 * bits)


def pauli_expectations(rho):
    """``tr(σ_K ρ)`` for all Pauli strings on the domain (real for Hermitian ρ)."""
    return (pauli_decompose(rho) * rho.shape[0]).real


def sampled_density(rho, shots, rng):
    """Reconstruct ρ from independent ``shots``-sample estimates of every Pauli expectation."""
    ev = np.clip(pauli_expectations(rho), -1.0, 1.0)
    k = ev.shape[0]
    plus = rng.binomial(shots, (1.0 + ev[1:]) / 2.0)
    est = np.empty(k)
    est[0] = 1.0
    est[1:] = 2.0 * plus / shots - 1.0
    d = rho.shape[0]
    out = pauli_synthesize(est / d, d.bit_length() - 1)
    return 0.5 * (out + out.conj().T)


# ---------------------------------------------------------------- solvers


def _target_operator(hdiag, dtau, rho):
    e = np.exp(-dtau * hdiag)
    c = float(np.real(np.sum(e**2 * np.diag(rho))))
    if not c > 0:
        raise SolverError("normalisation of the imaginary-time step vanished")
    return (np.diag(e / np.sqrt(c)) - np.eye(len(hdiag))) / dtau


def solve_operator(rho, o, lam):
    """Hermitian ``A`` solving ``Aρ + ρA + (λ/d) A = i(Oρ - ρO†)``."""
    d = rho.shape[0]
    rhs = 1j * (o @ rho - rho @ o.conj().T)
    w, v = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    denom = w[:, None] + w[None, :] + lam / d
    cp = v.conj().T @ rhs @ v
    scale = np.abs(denom).max()
    small = np.abs(denom) <= scale / COND_LIMIT
    if small.any():
        # pseudo-inverse: drop directions the regularised system cannot resolve
        denom = np.where(small, np.inf, denom)
    a = v @ (cp / denom) @ v.conj().T
    return 0.5 * (a + a.conj().T)


def pauli_normal_equations(rho, o):
    """Explicit ``(S + S^T, b)``; memory grows as ``16**|D|``."""
    d = rho.shape[0]
    k = d.bit_length() - 1
    basis = np.array([pauli_matrix(index_to_digits(i, k)) for i in range(4**k)])
    # S_IJ = Re tr(σ_I σ_J ρ);   b_I = 2 Im tr(σ_I O ρ)
    srho = np.einsum("jab,bc->jac", basis, rho)
    s = np.einsum("iab,jba->ij", basis, srho).real
    orho = o @ rho
    b = 2.0 * np.einsum("iab,ba->i", basis, orho).imag
    return s + s.T, b


def solve_pauli(rho, o, lam):
    mat, b = pauli_normal_equations(rho, o)
    mat = mat + lam * np.eye(mat.shape[0])
    w = np.linalg.eigvalsh(mat)
    scale = np.abs(w).max()
    if scale == 0:
        return np.zeros_like(rho)
    if np.abs(w).min() * COND_LIMIT < scale:
        a = np.linalg.pinv(mat, rcond=1.0 / COND_LIMIT, hermitian=True) @ (-b)
    else:
        a = np.linalg.solve(mat, -b)
    k = rho.shape[0].bit_length() - 1
    return pauli_synthesize(a, k)


# ---------------------------------------------------------------- engine


def _domain_for(state, q, config, domain=None):
    if domain is None:
        domain = domain_around(q, config.r, state.n)
    else:
        domain = SubsystemSpec.of(domain) if not isinstance(domain, SubsystemSpec) else domain
        if q not in domain.qubits:
            raise ValueError("domain must contain the measured qubit")
    if len(domain) > config.max_domain:
        raise ValueError(f"domain size {len(domain)} exceeds cap {config.max_domain}")
    return domain


def _born_on_domain(rho, hdiag):
    # weight on the ground eigenspace of the local ±σ_Z
    ground = hdiag == hdiag.min()
    return float(np.real(np.diag(rho)[ground].sum()))


def qite_step(state, q, m, config, rng=None, shots=None, domain=None):
    """One learned Trotter step; returns ``(LearnedStep, new_state)``.

    ``domain`` overrides the ring neighbourhood of radius ``config.r``.
    """
    domain = _domain_for(state, q, config, domain)
    rho = dense.reduced_density(state, domain, cap=config.max_domain).matrix
    if config.tomography == "sampled":
        if rng is None:
            rng = np.random.default_rng(config.seed)
        rho = sampled_density(rho, shots or config.shots, rng)
    hdiag = _local_hamiltonian(domain, q, m)
    if _born_on_domain(rho, hdiag) <= MIN_BORN:
        raise dense.VanishingNormError(f"outcome {m} on qubit {q} has (near) zero Born weight")
    o = _target_operator(hdiag, config.dtau, rho)
    if config.solver == "operator":
        a = solve_operator(rho, o, config.lam)
    else:
        a = solve_pauli(rho, o, config.lam)
    coeffs = pauli_decompose(a).real
    if not np.all(np.isfinite(coeffs)):
        raise SolverError("normal equations produced non-finite coefficients")
    # the stored form drops these, so drop them here too and replays match bit for bit
    coeffs[np.abs(coeffs) <= COEFF_CUTOFF] = 0.0
    step = LearnedStep(domain, coeffs, config.dtau)
    return step, step.apply(state)


def deterministic_postselect(state, q, m, config, rng=None, domain=None):
    """Run ``n_β`` learned steps driving qubit ``q`` towards outcome ``m``.

    Step size is ``β / n_β`` (at most ``dtau``) so the total imaginary time
    is exactly ``β``. Returns ``(LearnedPostselection, final_state)``;
    per-step diagnostics sit in ``result.diagnostics``.
    """
    n_beta = trotter_steps(config.beta, config.dtau)
    cfg = config if abs(n_beta * config.dtau - config.beta) < 1e-12 else config.with_beta(config.beta)
    if n_beta:
        cfg = QiteConfig(**{**cfg.__dict__, "dtau": config.beta / n_beta})
    shots = cfg.shots * (n_beta if cfg.shot_schedule == "nbeta" else 1)
    if cfg.tomography == "sampled" and rng is None:
        rng = np.random.default_rng(cfg.seed)
    target = None
    if cfg.track_fidelity:
        target, _ = dense.project_z(state, q, m)
    steps, norms, fids = [], [], []
    if target is not None:
        fids.append(dense.fidelity(state, target))
    for _ in range(n_beta):
        step, state = qite_step(state, q, m, cfg, rng=rng, shots=shots, domain=domain)
        steps.append(step)
        norms.append(float(np.linalg.norm(step.coefficients)))
        if target is not None:
            fids.append(dense.fidelity(state, target))
    result = LearnedPostselection(q, m, steps)
    result.diagnostics = {"coefficient_norms": norms, "fidelity": fids, "dtau": cfg.dtau, "n_beta": n_beta}
    return result, state


# ------------------------------------------------------ trajectory replay


@dataclass
class ReplayDiagnostics:
    born_p: list = field(default_factory=list)
    beta: list = field(default_factory=list)
    local_infidelity: list = field(default_factory=list)
    cumulative_infidelity: list = field(default_factory=list)
    epsilon_beta: float = None
    budget_ok: bool = True
    final_fidelity: float = None


def _pure_trace_distance(infidelity):
    return math.sqrt(max(0.0, infidelity))


def replay_trajectory(record, config, learned=None, epsilon=None, beta_policy="fixed", rng=None):
    """Prepare a recorded trajectory deterministically.

    First pass (``learned is None``): walk the events, apply gates, and at
    each recorded measurement learn a postselection on the current state
    (gates plus every previously learned unitary). With ``learned`` given,
    the stored unitaries are applied and nothing is learned.

    ``beta_policy="budget"`` picks each measurement's ``β`` from its Born
    probability on the current state, the record's measurement count and
    ``epsilon``; ``"fixed"`` uses ``config.beta``.

    Returns ``(learned_list, final_state, ReplayDiagnostics)``.
    """
    spec = record.spec
    if spec.n > DENSE_CIRCUIT_CAP:
        raise ValueError(f"dense replay limited to n <= {DENSE_CIRCUIT_CAP}")
    if beta_policy not in ("fixed", "budget"):
        raise ValueError("beta_policy must be 'fixed' or 'budget'")
    if beta_policy == "budget" and epsilon is None:
        raise ValueError("budget policy needs epsilon")
    M = record.M
    state = StateVector.zeros(spec.n, spec.initial_bitstring)
    ref = state.copy()
    diag = ReplayDiagnostics()
    if epsilon is not None and M:
        diag.epsilon_beta = error_budget(epsilon, M)
    learning = learned is None
    out = [] if learning else list(learned)
    if not learning and len(out) != M:
        raise ValueError(f"learned list has {len(out)} entries for {M} measurements")
    if config.tomography == "sampled" and rng is None:
        rng = np.random.default_rng(config.seed)
    i = 0
    for ev in record.events():
        if isinstance(ev, GateEvent):
            u = ev.unitary()
            state = dense.apply_2q_unitary(state, u, *ev.qubits)
            ref = dense.apply_2q_unitary(ref, u, *ev.qubits)
            continue
        q, m = ev.qubit, ev.outcome
        p = dense.born_probability(state, q, m)
        diag.born_p.append(p)
        exact_target, _ = dense.project_z(state, q, m)
        if learning:
            beta = config.beta if beta_policy == "fixed" else required_beta(min(p, 1.0), M, epsilon)
            diag.beta.append(beta)
            if beta > 0:
                ps, state = deterministic_postselect(state, q, m, config.with_beta(beta), rng=rng)
            else:
                ps = LearnedPostselection(q, m, [])
            out.append(ps)
        else:
            ps = out[i]
            if (ps.target_qubit, ps.outcome) != (q, m):
                raise ValueError(f"learned entry {i} targets {(ps.target_qubit, ps.outcome)}, record has {(q, m)}")
            diag.beta.append(sum(s.dtau for s in ps.steps))
            state = ps.apply(state)
        ref, _ = dense.project_z(ref, q, m)
        local = 1.0 - dense.fidelity(state, exact_target)
        diag.local_infidelity.append(local)
        diag.cumulative_infidelity.append(1.0 - dense.fidelity(state, ref))
        if diag.epsilon_beta is not None and _pure_trace_distance(local) > diag.epsilon_beta:
            diag.budget_ok = False
        i += 1
    diag.final_fidelity = dense.fidelity(state, ref)
    if not diag.budget_ok:
        warnings.warn(
            f"per-measurement error exceeded the budget ε_β={diag.epsilon_beta:.3g}",
            BudgetWarning,
            stacklevel=2,
        )
    return out, state, diag


# ------------------------------------------------------------ serialisation


@functools.lru_cache(maxsize=None)
def _pauli_keys(k):
    # digit strings for every index, little-endian in domain order
    digits = (np.arange(4**k)[:, None] >> (2 * np.arange(k))) & 3
    return tuple("".join(map(str, row)) for row in digits.tolist())


@functools.lru_cache(maxsize=None)
def _key_lookup(k):
    return {key: i for i, key in enumerate(_pauli_keys(k))}


def postselection_to_dict(ps):
    steps = []
    for s in ps.steps:
        keys = _pauli_keys(len(s.domain))
        nz = np.flatnonzero(np.abs(s.coefficients) > COEFF_CUTOFF)
        steps.append(
            {
                "domain": list(s.domain.qubits),
                "dtau": float(s.dtau),
                "coefficients": dict(zip([keys[i] for i in nz], s.coefficients[nz].tolist())),
            }
        )
    return {"target_qubit": int(ps.target_qubit), "outcome": int(ps.outcome), "steps": steps}


def postselection_from_dict(doc):
    steps = []
    for s in doc["steps"]:
        domain = SubsystemSpec(tuple(s["domain"]))
        lookup = _key_lookup(len(domain))
        coeffs = np.zeros(len(lookup))
        for key, v in s["coefficients"].items():
            i = lookup.get(key)
            if i is None:
                raise ValueError(f"bad Pauli key {key!r}")
            coeffs[i] = float(v)
        steps.append(LearnedStep(domain, coeffs, float(s["dtau"])))
    return LearnedPostselection(int(doc["target_qubit"]), int(doc["outcome"]), steps)


def dump_learned(postselections):
    doc = {
        "format_version": LEARNED_FORMAT_VERSION,
        "postselections": [postselection_to_dict(ps) for ps in postselections],
    }
    return json.dumps(doc, separators=(",", ":")).encode("utf-8")


def load_learned(payload):
    try:
        doc = json.loads(payload)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ValueError(f"malformed learned-unitary file: {exc}") from exc
    if doc.get("format_version") != LEARNED_FORMAT_VERSION:
        raise ValueError(f"unsupported format_version {doc.get('format_version')}")
    return [postselection_from_dict(d) for d in doc["postselections"]]

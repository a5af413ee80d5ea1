import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mipt import dense, dqite
from mipt.circuit import CircuitSpec, generate_and_record, simulate
from mipt.dense import StateVector, apply_2q_unitary, haar_2q
from mipt.dqite import (
    BudgetWarning,
    LearnedStep,
    QiteConfig,
    deterministic_postselect,
    dump_learned,
    load_learned,
    outcome_hamiltonian,
    qite_step,
    replay_trajectory,
)


def product_plus(n):
    amps = np.full(1 << n, 2 ** (-n / 2), dtype=complex)
    return StateVector(n, amps)


def short_range_state(n, rng, depth=1):
    # product state followed by `depth` brickwork layers of Haar gates
    s = dense.random_state(1, rng)
    amps = s.amps
    for _ in range(n - 1):
        amps = np.kron(amps, dense.random_state(1, rng).amps)
    state = StateVector(n, amps)
    for layer in range(depth):
        for a in range(layer % 2, n - 1, 2):
            state = apply_2q_unitary(state, haar_2q(rng), a, a + 1)
    return state


# ------------------------------------------------------------ formulas


def test_outcome_hamiltonian():
    h0 = outcome_hamiltonian(0, qubit=3)
    assert h0.support.qubits == (3,)
    assert np.allclose(h0.matrix, np.diag([-1, 1]))
    assert np.allclose(outcome_hamiltonian(1).matrix, np.diag([1, -1]))
    with pytest.raises(ValueError):
        outcome_hamiltonian(2)


def test_error_budget_values():
    assert dqite.error_budget(0.1, 1) == pytest.approx(0.05)
    assert dqite.error_budget(0.1, 50) == pytest.approx(0.001)
    with pytest.raises(ValueError):
        dqite.error_budget(0.1, 0)


def test_required_beta_values():
    assert dqite.required_beta(0.5, 10, 0.01) == pytest.approx(0.5 * math.log(1000), rel=1e-12)
    assert dqite.required_beta(1.0, 10, 0.01) == 0.0
    # tiny M / large epsilon clamps at zero
    assert dqite.required_beta(0.99, 1, 10.0) == 0.0
    with pytest.raises(ValueError):
        dqite.required_beta(0.0, 10, 0.01)


def test_trotter_steps():
    assert dqite.trotter_steps(1.0, 0.1) == 10
    assert dqite.trotter_steps(1.05, 0.1) == 11
    assert dqite.trotter_steps(3.0, 0.1) == 30
    assert dqite.trotter_steps(0.0, 0.1) == 0


def test_runtime_scaling():
    base = dqite.runtime_estimate(10, 0.01, 2.0, 1.0)
    assert base == pytest.approx(100 / 0.01 / 4 * math.log(1000) ** 2)
    # quadratic in M up to the log factor
    ratio = dqite.runtime_estimate(20, 0.01, 2.0, 1.0) / base
    assert ratio == pytest.approx(4 * (math.log(2000) / math.log(1000)) ** 2)
    assert dqite.runtime_estimate(10, 0.01, 1.0, 1.0) / base == pytest.approx(4.0)


@given(st.floats(0.01, 0.99), st.integers(1, 200), st.floats(1e-4, 0.5))
@settings(max_examples=60)
def test_required_beta_meets_bound(P, M, eps):
    beta = dqite.required_beta(P, M, eps)
    c = (1 - P) / P
    assert beta >= 0
    if beta > 0:
        assert math.sqrt(c) * math.exp(-beta * dqite.GAP) == pytest.approx(eps / M, rel=1e-9)
    else:
        assert math.sqrt(c) <= eps / M * (1 + 1e-12)


@given(st.floats(0.01, 0.99), st.integers(1, 50), st.floats(1e-4, 0.5))
@settings(max_examples=40)
def test_required_beta_monotone(P, M, eps):
    assert dqite.required_beta(P, M + 1, eps) >= dqite.required_beta(P, M, eps)
    assert dqite.required_beta(P, M, eps / 2) >= dqite.required_beta(P, M, eps)


# --------------------------------------------------------------- config


@pytest.mark.parametrize(
    "kw",
    [dict(beta=0), dict(beta=1, r=0), dict(beta=1, r=4), dict(beta=1, tomography="x"), dict(beta=1, solver="lu")],
)
def test_config_rejects(kw):
    with pytest.raises(ValueError):
        QiteConfig(**kw)


def test_config_clamps_dtau():
    assert QiteConfig(beta=0.05, dtau=0.1).dtau == 0.05


# ----------------------------------------------------------------- steps


def test_plus_zero_converges():
    # |+>|0>: fidelity with |00> reaches 1 - 1e-4 at β = 5; two qubits fit no ring buffer, so the domain is given
    state = StateVector(2, np.array([1, 0, 1, 0], dtype=complex) / np.sqrt(2))
    ps, out = deterministic_postselect(state, 0, 0, QiteConfig(beta=5.0, dtau=0.05, r=1), domain=(0, 1))
    target = StateVector.zeros(2)
    assert dense.fidelity(out, target) >= 1 - 1e-4
    fids = ps.diagnostics["fidelity"]
    assert len(fids) == 101
    assert fids[-1] > fids[0]


def test_fixed_point_has_zero_generator():
    state = StateVector.zeros(4)
    step, out = qite_step(state, 1, 0, QiteConfig(beta=1.0, r=1))
    assert np.linalg.norm(step.coefficients) <= 1e-8
    assert dense.fidelity(out, state) == pytest.approx(1.0, abs=1e-12)


def test_certain_outcome_steps_are_identity():
    state = StateVector.zeros(6, "010000")
    ps, out = deterministic_postselect(state, 1, 1, QiteConfig(beta=1.0, r=1))
    assert max(ps.diagnostics["coefficient_norms"]) <= 1e-8
    assert dense.fidelity(out, state) == pytest.approx(1.0, abs=1e-12)


def test_zero_born_weight_raises():
    with pytest.raises(dense.VanishingNormError):
        qite_step(StateVector.zeros(4), 0, 1, QiteConfig(beta=1.0, r=1))


@pytest.mark.parametrize("seed", range(3))
def test_single_step_matches_imaginary_time(seed):
    rng = np.random.default_rng(seed)
    state = short_range_state(8, rng)
    cfg = QiteConfig(beta=0.1, dtau=0.1, r=2)
    _, out = qite_step(state, 4, 0, cfg)
    exact = dense.imaginary_evolve(state, outcome_hamiltonian(0, 4), 0.1)
    assert 1 - dense.fidelity(out, exact) <= 1e-3


@pytest.mark.parametrize("seed", range(3))
def test_solvers_agree(seed):
    rng = np.random.default_rng(100 + seed)
    state = short_range_state(5, rng, depth=2)
    a = qite_step(state, 2, 1, QiteConfig(beta=0.1, r=1, solver="operator"))[0]
    b = qite_step(state, 2, 1, QiteConfig(beta=0.1, r=1, solver="pauli"))[0]
    assert np.allclose(a.generator(), b.generator(), atol=1e-7)


@pytest.mark.parametrize("seed", range(3))
def test_learned_unitary_is_unitary(seed):
    rng = np.random.default_rng(seed)
    step, _ = qite_step(short_range_state(6, rng, 2), 3, 0, QiteConfig(beta=0.2, r=2))
    u = step.unitary()
    assert np.abs(u @ u.conj().T - np.eye(u.shape[0])).max() <= 1e-10


def test_total_imaginary_time_is_beta():
    rng = np.random.default_rng(1)
    ps, _ = deterministic_postselect(short_range_state(4, rng), 1, 0, QiteConfig(beta=0.35, dtau=0.1, r=1))
    assert len(ps.steps) == 4
    assert sum(s.dtau for s in ps.steps) == pytest.approx(0.35, abs=1e-12)


def test_domain_override():
    rng = np.random.default_rng(2)
    state = short_range_state(4, rng)
    step, _ = qite_step(state, 0, 0, QiteConfig(beta=0.1, r=1), domain=(0, 3))
    assert step.domain.qubits == (0, 3)
    with pytest.raises(ValueError):
        qite_step(state, 0, 0, QiteConfig(beta=0.1, r=1), domain=(1, 2))


def test_sampled_tomography_runs():
    rng = np.random.default_rng(3)
    state = short_range_state(4, rng)
    cfg = QiteConfig(beta=1.0, r=1, tomography="sampled", shots=20000, seed=5)
    ps, out = deterministic_postselect(state, 1, 0, cfg)
    exact, _ = dense.project_z(state, 1, 0)
    assert ps.diagnostics["fidelity"][-1] > ps.diagnostics["fidelity"][0]
    assert dense.fidelity(out, exact) > 0.5
    # identical seed gives identical coefficients
    ps2, _ = deterministic_postselect(state, 1, 0, cfg)
    assert all(np.array_equal(a.coefficients, b.coefficients) for a, b in zip(ps.steps, ps2.steps))


def test_learned_step_validation():
    with pytest.raises(ValueError):
        LearnedStep(dqite.SubsystemSpec((0, 1)), np.zeros(4), 0.1)
    with pytest.raises(ValueError):
        LearnedStep(dqite.SubsystemSpec((0,)), np.array([0, np.nan, 0, 0]), 0.1)


# ---------------------------------------------------------------- replay


def test_replay_without_measurements():
    rec = generate_and_record(CircuitSpec(6, 4, 0.0, "haar", seed=1))
    learned, state, diag = replay_trajectory(rec, QiteConfig(beta=1.0, r=1))
    assert learned == [] and diag.final_fidelity == pytest.approx(1.0, abs=1e-12)


def test_replay_learn_then_reuse():
    rec, _ = simulate(CircuitSpec(6, 4, 0.3, "haar", seed=3))
    cfg = QiteConfig(beta=2.0, r=2)
    learned, s1, d1 = replay_trajectory(rec, cfg)
    assert len(learned) == rec.M
    again = load_learned(dump_learned(learned))
    _, s2, d2 = replay_trajectory(rec, cfg, learned=again)
    assert dense.fidelity(s1, s2) == pytest.approx(1.0, abs=1e-12)
    assert d2.final_fidelity == pytest.approx(d1.final_fidelity, abs=1e-12)
    with pytest.raises(ValueError):
        replay_trajectory(rec, cfg, learned=again[:-1] if again else [None])


def test_serialization_round_trip():
    rng = np.random.default_rng(4)
    ps, _ = deterministic_postselect(short_range_state(5, rng), 2, 1, QiteConfig(beta=0.3, r=2))
    back = load_learned(dump_learned([ps]))[0]
    assert (back.target_qubit, back.outcome) == (2, 1)
    for a, b in zip(ps.steps, back.steps):
        assert a.domain == b.domain and a.dtau == b.dtau
        assert np.array_equal(a.coefficients, b.coefficients)


def test_budget_warning():
    rec = None
    for s in range(40):
        cand, _ = simulate(CircuitSpec(6, 4, 0.3, "haar", seed=s))
        if cand.M:
            rec = cand
            break
    with pytest.warns(BudgetWarning):
        replay_trajectory(rec, QiteConfig(beta=0.1, r=1), epsilon=1e-6)


def test_budget_policy_meets_tolerance_on_easy_record():
    rec, _ = simulate(CircuitSpec(4, 2, 0.5, "haar", seed=2))
    cfg = QiteConfig(beta=1.0, dtau=0.05, r=1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BudgetWarning)
        _, _, diag = replay_trajectory(rec, cfg, epsilon=0.1, beta_policy="budget")
    assert len(diag.beta) == rec.M
    assert diag.final_fidelity > 0.9

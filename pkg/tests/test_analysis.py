import csv
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mipt import analysis, dense, dqite
from mipt.analysis import (
    amplification_gadget,
    beta_grid,
    collapse_objective,
    data_collapse,
    eval_bounds_report,
    failure_probability_bound,
    fit_exponential,
    gadget_amplitudes,
    gadget_step_probability,
    stretched_exp,
    sweep_mutual_info,
    synthetic_collapse_points,
)


def test_aggregate_median_and_mean():
    x = np.array([[1.0], [2.0], [10.0]])
    v, e = analysis.aggregate(x, "median")
    assert v[0] == 2.0 and e[0] > 0
    v, _ = analysis.aggregate(x, "mean")
    assert v[0] == pytest.approx(13 / 3)
    with pytest.raises(ValueError):
        analysis.aggregate(x, "mode")


# ----------------------------------------------------- mutual information


def test_full_measurement_kills_correlations():
    curves = sweep_mutual_info([(16, 8, 1.0)], [2, 3], 5)
    assert np.all(curves[0].values == 0.0)


def test_sweep_deterministic_and_nonnegative():
    a = sweep_mutual_info([(16, 8, 0.2)], [1, 2], 6, stat="mean", master_seed=3)
    b = sweep_mutual_info([(16, 8, 0.2)], [1, 2], 6, stat="mean", master_seed=3)
    assert np.array_equal(a[0].samples, b[0].samples)
    assert np.all(a[0].samples >= 0)
    assert a[0].rows()[0]["n_traj"] == 6


def test_sweep_rejects_bad_geometry():
    with pytest.raises(ValueError):
        sweep_mutual_info([(16, 4, 0.2)], [8], 1)


def test_unmeasured_clifford_volume_law():
    # p = 0 scrambles: far clusters still share information at n = 16, r = 2
    curves = sweep_mutual_info([(16, 16, 0.0)], [1], 10)
    assert curves[0].values[0] > 0


# ---------------------------------------------------------------- fitting


def test_fit_recovers_decaying_curve():
    x = np.linspace(0.1, 12, 40)
    y = stretched_exp(x, 2.68, 0.42, 0.68, 0.0)
    fit = fit_exponential(x, y, fix_e=0.0)
    assert fit.a == pytest.approx(2.68, rel=0.05)
    assert fit.b == pytest.approx(0.42, rel=0.05)
    assert fit.d == pytest.approx(0.68, rel=0.05)
    assert not fit.degenerate


def test_fit_recovers_plateau_with_noise():
    rng = np.random.default_rng(0)
    x = np.linspace(0.1, 60, 60)
    y = stretched_exp(x, 1.88, 0.04, 1.06, 0.21) * (1 + 0.01 * rng.normal(size=x.size))
    fit = fit_exponential(x, y)
    for got, want in zip((fit.a, fit.b, fit.d, fit.e), (1.88, 0.04, 1.06, 0.21)):
        assert got == pytest.approx(want, rel=0.10)


def test_fit_constant_is_degenerate():
    fit = fit_exponential(np.arange(10.0), np.full(10, 0.7))
    assert fit.degenerate and fit.e == pytest.approx(0.7)


def test_fit_is_bit_deterministic():
    rng = np.random.default_rng(1)
    x = np.linspace(0.5, 8, 25)
    y = stretched_exp(x, 1.5, 0.3, 0.9, 0.1) + 0.02 * rng.normal(size=x.size)
    assert fit_exponential(x, y, seed=4) == fit_exponential(x, y, seed=4)


def test_fit_needs_points():
    with pytest.raises(ValueError):
        fit_exponential([1, 2, 3], [1, 2, 3])


# --------------------------------------------------------------- collapse


@pytest.mark.parametrize("nu", [0.75, 1.70])
def test_collapse_recovers_planted_nu(nu):
    pts = synthetic_collapse_points(nu, lambda x: 2.0 * np.exp(-0.5 * x**0.7))
    res = data_collapse(pts)
    assert abs(res.nu - nu) <= 0.15
    assert res.branch == "area" and not res.degenerate


@given(
    nu=st.floats(0.6, 2.2),
    a=st.floats(0.5, 3.0),
    b=st.floats(0.1, 1.0),
    d=st.floats(0.4, 1.5),
    e=st.floats(0.0, 0.5),
)
@settings(max_examples=20, deadline=None)
def test_collapse_recovery_property(nu, a, b, d, e):
    # scale b so the master curve actually varies across the sampled window
    pts = synthetic_collapse_points(nu, lambda x: a * np.exp(-b * (x / 5.0) ** d) + e)
    res = data_collapse(pts)
    assert abs(res.nu - nu) <= 0.15


def test_collapse_flat_is_degenerate():
    pts = [(n, p, 1.0) for n in (32, 64, 128) for p in (0.2, 0.3, 0.4, 0.5)]
    assert data_collapse(pts).degenerate


def test_collapse_input_checks():
    with pytest.raises(ValueError):
        data_collapse([(32, 0.3, 1.0), (64, 0.3, 1.0)])
    with pytest.raises(ValueError):
        data_collapse([(n, 0.16, 1.0) for n in (32, 64, 128)])


def test_collapse_objective_zero_on_exact_data():
    pts = synthetic_collapse_points(1.0, lambda x: np.exp(-x / 10))
    assert collapse_objective(pts, analysis.P_C, 1.0) < collapse_objective(pts, analysis.P_C, 2.0)


def test_collapse_from_curves_requires_multiple_of_16():
    c = analysis.MutualInfoCurve(24, 4, 0.3, [1], "mean", np.zeros(1), np.zeros(1), 1, np.zeros((1, 1)))
    with pytest.raises(ValueError):
        analysis.collapse_from_curves([c])


# ----------------------------------------------------------------- bounds


def test_failure_bound_trivial():
    fb = failure_probability_bound(1, 8)
    assert fb.delta == 1.0 and fb.bound == 1.0 and fb.degenerate


def test_failure_bound_example():
    # poly(n, M) = n M, n = 64, M = 100
    fb = failure_probability_bound(100, 64, ((1.0,), ((1, 1),)))
    assert fb.delta == pytest.approx(1 / 640000, rel=1e-15)
    with mpmath.workdps(50):
        exact = float(1 - (1 - mpmath.mpf(1) / 640000) ** 100)
    assert abs(fb.bound - exact) <= 1e-12 * exact
    assert fb.first_order == pytest.approx(1.5625e-4, abs=1e-16)
    assert fb.bound == pytest.approx(1.5625e-4, rel=1e-4)


@given(st.integers(1, 10_000), st.integers(1, 512), st.floats(1e-3, 1e3))
def test_failure_bound_union(M, n, c):
    fb = failure_probability_bound(M, n, ((c,), ((1, 0),)))
    assert 0 <= fb.bound <= min(1.0, M * fb.delta) * (1 + 1e-12)


def test_failure_bound_rejects_nonpositive_poly():
    with pytest.raises(ValueError):
        failure_probability_bound(5, 5, ((-1.0,), ((0, 0),)))


def test_bounds_report():
    rep = eval_bounds_report(0.5, 1, 1.0)
    assert rep["beta"] == 0.0 and rep["n_beta"] == 0
    rep = eval_bounds_report(0.5, 10, 0.01)
    assert rep["beta"] == pytest.approx(0.5 * math.log(1000))
    assert rep["fidelity_bound"] >= rep["fidelity_target"] - 1e-12
    betas = [eval_bounds_report(0.3, M, 0.05)["beta"] for M in range(1, 200)]
    assert all(b2 >= b1 for b1, b2 in zip(betas, betas[1:]))


@given(st.floats(0.001, 1.0), st.integers(1, 1000), st.floats(1e-4, 1.0), st.floats(0.1, 10.0))
def test_fidelity_bound_consistency(P, M, eps, gap):
    beta = dqite.required_beta(P, M, eps, gap)
    assert dense.fidelity_bound(P, beta, gap) >= 1 - (eps / M) ** 2 - 1e-12


# ----------------------------------------------------------------- gadget


@pytest.mark.parametrize("k_amp", range(1, 11))
def test_gadget_step_probabilities(k_amp):
    m = 10
    res = amplification_gadget(k_amp, m)
    assert len(res.probabilities) == m
    for got, want in zip(res.probabilities, res.predicted):
        assert abs(got - want) <= 1e-12
        assert got > 0.5


def test_gadget_amplitudes_normalised():
    a, b = gadget_amplitudes(5)
    assert a * a + b * b == pytest.approx(1.0)
    assert a / b == pytest.approx(2**-5)
    # step 0 probability from the amplitudes directly
    assert gadget_step_probability(5, 0) == pytest.approx(a * a + b * b / 2)


def test_gadget_final_fidelity_matches_closed_form():
    for k_amp, m in [(2, 6), (3, 10), (4, 12)]:
        res = amplification_gadget(k_amp, m)
        assert res.final_fidelity == pytest.approx(res.predicted_fidelity, abs=1e-12)


@pytest.mark.slow
def test_gadget_large_m():
    k_amp, m = 6, 20
    res = amplification_gadget(k_amp, m)
    a, b = gadget_amplitudes(k_amp)
    assert res.final_fidelity >= 1 - 2 * (b * b / 2**m) / (a * a)


def test_gadget_zero_ancillas():
    res = amplification_gadget(3, 0)
    assert res.probabilities == [] and res.final_fidelity == pytest.approx(res.predicted_fidelity)


def test_gadget_rejects():
    with pytest.raises(ValueError):
        amplification_gadget(0, 3)
    with pytest.raises(ValueError):
        amplification_gadget(2, 30)


# ------------------------------------------------------------ infidelity


def test_beta_grid():
    assert beta_grid("0:1:0.25") == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert beta_grid("0.5,1") == [0.5, 1.0]
    with pytest.raises(ValueError):
        beta_grid("0:1")


def test_infidelity_sweep_columns(tmp_path):
    cfg = dqite.QiteConfig(beta=1.0, dtau=0.1, r=1)
    rows = analysis.infidelity_sweep([(6, 4, 0.3)], [1], [0.0, 0.5, 1.0], cfg, 3)
    assert len(rows) == 9
    for row in rows:
        assert abs(row["exact_infidelity"] - row["closed_form_infidelity"]) <= 1e-12
        if row["beta"] == 0:
            assert row["infidelity"] == pytest.approx(1 - row["born_p"], abs=1e-12)
            assert row["exact_infidelity"] == pytest.approx(1 - row["born_p"], abs=1e-12)
    path = tmp_path / "inf.csv"
    analysis.write_infidelity_csv(path, rows)
    with open(path) as fh:
        got = list(csv.DictReader(fh))
    assert list(got[0]) == analysis.INFIDELITY_HEADER
    for src, back in zip(rows, got):
        assert float(back["infidelity"]) == src["infidelity"]


def test_infidelity_sweep_born_weighted():
    cfg = dqite.QiteConfig(beta=0.5, dtau=0.1, r=1)
    rows = analysis.infidelity_sweep([(6, 4, 0.3)], [1], [0.0], cfg, 2, target="born-weighted")
    # with β = 0 each outcome contributes (1 - P_m) P_m
    assert len(rows) == 2
    for row in rows:
        assert 0 <= row["infidelity"] <= 0.5


def test_infidelity_sweep_rejects_off_grid_beta():
    cfg = dqite.QiteConfig(beta=1.0, dtau=0.1, r=1)
    with pytest.raises(ValueError):
        analysis.infidelity_sweep([(6, 4, 0.3)], [1], [0.05], cfg, 1)


def test_mean_infidelity():
    rows = [{"beta": 1.0, "infidelity": 0.2}, {"beta": 1.0, "infidelity": 0.4}, {"beta": 2.0, "infidelity": 9}]
    assert analysis.mean_infidelity(rows, beta=1.0) == pytest.approx(0.3)
    with pytest.raises(ValueError):
        analysis.mean_infidelity(rows, beta=3.0)

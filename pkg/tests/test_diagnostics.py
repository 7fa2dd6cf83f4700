"""Tests for potentials, transfer matrices, norm bounds, and the
initial-value-instability construction."""

import math

import numpy as np
import pytest

from fedsim.algorithms import Hyper, WorkerState, agd_run, fedac_run, schedule_fedac1
from fedsim.diagnostics import (
    InstabilityRegionError,
    PiecewiseCurvature1D,
    TransferMatrix,
    construct_instability_objective,
    instability_experiment,
    norm_bound_fedac1,
    norm_bound_fedac2,
    norm_bound_sweep,
    potential_phi,
    potential_psi,
    potential_report,
    sample_admissible,
    spectral_norm_2x2,
    transfer_matrix_fedac1,
    transfer_matrix_fedac2,
    transfer_matrix_from_hyper,
    transformed_norm,
)
from fedsim.objectives import Quadratic


def states(pairs):
    return [WorkerState(w=np.atleast_1d(np.asarray(w, float)),
                        w_ag=np.atleast_1d(np.asarray(ag, float)))
            for w, ag in pairs]


# ---------------------------------------------------------------------------
# potentials


def test_potentials_zero_at_optimum():
    obj = Quadratic([1.0])
    workers = states([(0.0, 0.0)] * 3)
    assert potential_psi(workers, obj, 1.0, [0.0], 0.0) == 0.0
    assert potential_phi(workers, obj, 1.0, [0.0], 0.0) == 0.0


def test_potential_psi_hand_value():
    obj = Quadratic([1.0])
    workers = states([(1.0, 2.0)])  # w=1, w_ag=2
    assert potential_psi(workers, obj, 1.0, [0.0], 0.0) == pytest.approx(2.5, abs=1e-15)


def test_potential_phi_hand_value():
    obj = Quadratic([1.0])
    workers = states([(1.0, 2.0)])
    assert potential_phi(workers, obj, 1.0, [0.0], 0.0) == pytest.approx(
        2.0 + 1.0 / 6.0, abs=1e-15)


def test_potential_psi_symmetric_pair():
    obj = Quadratic([1.0])
    workers = states([(1.0, 1.0), (-1.0, -1.0)])
    assert potential_psi(workers, obj, 1.0, [0.0], 0.0) == pytest.approx(0.5, abs=1e-15)


def test_phi_mean_term_obeys_jensen():
    obj = Quadratic([1.0, 3.0], shift=[0.5, -0.5])
    rng = np.random.default_rng(3)
    w_ags = rng.normal(size=(5, 2))
    workers = states([(rng.normal(size=2), ag) for ag in w_ags])
    centered = obj.eval(np.mean(w_ags, axis=0))
    mean_of_values = np.mean([obj.eval(ag) for ag in w_ags])
    assert centered <= mean_of_values + 1e-12


def test_potential_report_discrepancy():
    obj = Quadratic([1.0])
    workers = states([(1.0, 1.0), (3.0, 3.0)])
    rep = potential_report(workers, obj, 1.0, [0.0], 0.0)
    assert rep.discrepancy_max == pytest.approx(1.0, abs=1e-15)
    assert rep.discrepancy_mean_sq == pytest.approx(1.0, abs=1e-15)
    assert rep.psi == potential_psi(workers, obj, 1.0, [0.0], 0.0)
    assert rep.phi == potential_phi(workers, obj, 1.0, [0.0], 0.0)


# ---------------------------------------------------------------------------
# transfer matrices


def test_fedac1_matrix_spec_point():
    a = transfer_matrix_fedac1(1.0, 0.1, 0.1, 10.0)
    assert a.a11 == pytest.approx(0.0, abs=1e-15)
    assert a.a12 == pytest.approx(0.0, abs=1e-15)
    assert a.a21 == pytest.approx(-0.9 / 1.1, rel=1e-12)
    assert a.a22 == pytest.approx(0.9 / 1.1, rel=1e-12)


def test_fedac1_matrix_h_equals_mu_zeroes_a21():
    a = transfer_matrix_fedac1(0.7, 0.3, 0.05, 0.7)
    assert a.a21 == 0.0


def test_fedac1_matrix_eta_h_one_zeroes_first_row():
    a = transfer_matrix_fedac1(0.5, 0.4, 0.25, 4.0)  # eta * H = 1
    assert a.a11 == 0.0
    assert a.a12 == 0.0


def test_fedac2_matrix_eta_h_one_zeroes_first_row():
    a = transfer_matrix_fedac2(0.5, 0.4, 0.25, 4.0)
    assert a.a11 == 0.0
    assert a.a12 == 0.0


def test_fedac2_matrix_small_gamma_mu_limit():
    # gamma * mu = 1e-8 with mu << H so the curvature terms dominate:
    # the matrix collapses to [[1 - eta H, 0], [-gamma H, 1]]
    mu, gamma, eta, h = 1e-8, 1.0, 0.01, 5.0
    a = transfer_matrix_fedac2(mu, gamma, eta, h)
    assert a.a11 == pytest.approx(1.0 - eta * h, rel=1e-7)
    assert a.a12 == pytest.approx(0.0, abs=1e-7)
    assert a.a21 == pytest.approx(-gamma * h, rel=1e-6)
    assert a.a22 == pytest.approx(1.0, rel=1e-7)


def fedac1_hyper(mu, gamma, eta):
    alpha = 1.0 / (gamma * mu)
    return Hyper(eta=eta, gamma=gamma, alpha=alpha, beta=alpha + 1.0)


def fedac2_hyper(mu, gamma, eta):
    alpha = 3.0 / (2.0 * gamma * mu) - 0.5
    beta = (2.0 * alpha * alpha - 1.0) / (alpha - 1.0)
    return Hyper(eta=eta, gamma=gamma, alpha=alpha, beta=beta)


def test_fedac2_matrix_cross_checked_against_general_form():
    mu, gamma, eta, h = 1.0, 0.1, 0.1, 10.0
    closed = transfer_matrix_fedac2(mu, gamma, eta, h).as_array()
    general = transfer_matrix_from_hyper(fedac2_hyper(mu, gamma, eta), h).as_array()
    np.testing.assert_allclose(closed, general, atol=1e-12)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_both_matrices_cross_checked_on_random_points(seed):
    rng = np.random.default_rng(seed)
    mu = rng.uniform(0.05, 1.0)
    big_l = mu * rng.uniform(2.0, 50.0)
    eta = rng.uniform(0.1, 1.0) / big_l
    gamma = rng.uniform(eta, math.sqrt(eta / mu))
    h = rng.uniform(mu, big_l)
    closed1 = transfer_matrix_fedac1(mu, gamma, eta, h).as_array()
    general1 = transfer_matrix_from_hyper(fedac1_hyper(mu, gamma, eta), h).as_array()
    np.testing.assert_allclose(closed1, general1, atol=1e-12)
    closed2 = transfer_matrix_fedac2(mu, gamma, eta, h).as_array()
    general2 = transfer_matrix_from_hyper(fedac2_hyper(mu, gamma, eta), h).as_array()
    np.testing.assert_allclose(closed2, general2, atol=1e-12)


def test_transfer_matrix_validation():
    with pytest.raises(ValueError):
        transfer_matrix_fedac1(1.0, 0.1, 0.1, 0.5)  # H below mu
    with pytest.raises(ValueError):
        transfer_matrix_fedac1(1.0, -0.1, 0.1, 2.0)
    with pytest.raises(ValueError):
        transfer_matrix_fedac2(1.0, 0.1, 0.0, 2.0)


def test_one_step_difference_law_matches_simulation():
    """The (d_ag, d_w) gap of two noise-free chains evolves exactly by the
    local-step transfer matrix as long as no synchronization intervenes."""
    mu, h, eta = 0.5, 2.0, 0.1
    obj = Quadratic([h])
    hyper = schedule_fedac1(eta, mu, 1)
    a = transfer_matrix_fedac1(mu, hyper.gamma, eta, h).as_array()

    t = 10
    trajs = []
    for start in (1.3, 1.3 + 1e-3):
        seen = []
        fedac_run(obj, m=1, t=t, k=t + 1, hyper=hyper, seed=0, w0=[start],
                  callback=lambda s, W, W_ag: seen.append((W_ag[0, 0], W[0, 0])))
        trajs.append(np.array(seen))
    gaps = trajs[1] - trajs[0]

    predicted = gaps[0]
    for s in range(1, t + 1):
        predicted = a @ predicted
        np.testing.assert_allclose(gaps[s], predicted, atol=1e-12)


# ---------------------------------------------------------------------------
# transformed norm and bounds


def test_transformed_norm_identity_and_zero():
    eye = TransferMatrix(1.0, 0.0, 0.0, 1.0)
    zero = TransferMatrix(0.0, 0.0, 0.0, 0.0)
    for gamma, eta in [(0.1, 0.1), (0.5, 0.01), (2.0, 0.25)]:
        assert transformed_norm(eye, gamma, eta) == pytest.approx(1.0, rel=1e-12)
        assert transformed_norm(zero, gamma, eta) == 0.0


def test_transformed_norm_spec_point():
    a = transfer_matrix_fedac1(1.0, 0.1, 0.1, 10.0)
    assert transformed_norm(a, 0.1, 0.1) == pytest.approx(0.9 / 1.1, rel=1e-9)


def test_spectral_norm_matches_svd():
    rng = np.random.default_rng(8)
    for _ in range(50):
        b = rng.normal(size=(2, 2))
        assert spectral_norm_2x2(b) == pytest.approx(
            np.linalg.svd(b, compute_uv=False)[0], rel=1e-12)


def test_norm_bound_values():
    assert norm_bound_fedac1(1.0, 0.1, 0.01) == pytest.approx(3.0, rel=1e-12)
    assert norm_bound_fedac2(1.0, 0.1, 0.01) == pytest.approx(2.0, rel=1e-12)
    assert norm_bound_fedac1(1.0, 0.05, 0.05) == 1.0
    assert norm_bound_fedac2(1.0, 0.05, 0.05) == 1.0


def test_norm_bound_sweep_spec_point():
    report = norm_bound_sweep(1.0, 100.0, [(0.1, 0.01)], n_h=1000)
    by_schedule = {r.schedule: r for r in report.rows}
    assert by_schedule["fedac1"].bound == pytest.approx(3.0, rel=1e-12)
    assert by_schedule["fedac2"].bound == pytest.approx(2.0, rel=1e-12)
    assert not report.violations
    assert by_schedule["fedac1"].max_norm <= 3.0 + 1e-9
    assert by_schedule["fedac2"].max_norm <= 2.0 + 1e-9


def test_norm_bound_sweep_gamma_equals_eta_is_contractive():
    mu, big_l = 0.3, 10.0
    points = [(eta, eta) for eta in (0.001, 0.01, 0.05, 0.1)]
    report = norm_bound_sweep(mu, big_l, points, n_h=101)
    assert not report.violations
    for r in report.rows:
        assert r.bound == 1.0
        assert r.max_norm <= 1.0 + 1e-9


def test_norm_bound_sweep_precondition_errors():
    with pytest.raises(ValueError):
        norm_bound_sweep(1.0, 10.0, [(0.2, 0.2)])  # eta > 1/L
    with pytest.raises(ValueError):
        norm_bound_sweep(1.0, 10.0, [(0.01, 0.05)])  # gamma < eta
    with pytest.raises(ValueError):
        norm_bound_sweep(1.0, 10.0, [(0.9, 0.05)])  # gamma > sqrt(eta/mu)
    with pytest.raises(ValueError):
        norm_bound_sweep(-1.0, 10.0, [(0.05, 0.05)])


def test_sample_admissible_satisfies_preconditions():
    draws = sample_admissible(seed=123, count=200)
    assert draws.shape == (200, 4)
    mu, big_l, gamma, eta = draws.T
    assert np.all(mu > 0)
    assert np.all(big_l >= mu)
    assert np.all((eta > 0) & (eta <= 1.0 / big_l + 1e-15))
    assert np.all(gamma >= eta - 1e-15)
    assert np.all(gamma <= np.sqrt(eta / mu) * (1 + 1e-12))


def test_norm_bound_sweep_random_admissible_points():
    for mu, big_l, gamma, eta in sample_admissible(seed=5, count=25):
        report = norm_bound_sweep(mu, big_l, [(gamma, eta)], n_h=11)
        assert not report.violations


# ---------------------------------------------------------------------------
# piecewise-curvature objective


def test_piecewise_base_case_is_quadratic():
    f = PiecewiseCurvature1D(0.04, 1.0)
    for x in [-2.0, 0.0, 0.7, 3.0]:
        assert f.eval([x]) == pytest.approx(0.5 * 0.04 * x * x, abs=1e-15)
        assert f.grad([x])[0] == pytest.approx(0.04 * x, abs=1e-15)
        assert f.curvature([x]) == 0.04


def test_piecewise_bump_curvature_boundary_inclusive():
    f = PiecewiseCurvature1D(0.04, 1.0, [(0.5, 0.1)])
    assert f.curvature([0.5]) == 1.0
    assert f.curvature([0.4]) == 1.0
    assert f.curvature([0.6]) == 1.0
    assert f.curvature([0.39999]) == 0.04
    assert f.curvature([0.60001]) == 0.04


def test_piecewise_disjointness_enforced():
    f = PiecewiseCurvature1D(0.04, 1.0, [(0.5, 0.1)])
    with pytest.raises(ValueError):
        f.with_bump(0.55, 0.1)
    g = f.with_bump(0.9, 0.05)  # disjoint: fine
    assert len(g.bumps) == 2


def test_piecewise_gradient_matches_finite_differences():
    f = PiecewiseCurvature1D(0.04, 1.0, [(0.5, 0.1), (-1.2, 0.3)])
    for x in [-2.0, -1.2, -0.5, 0.45, 0.5, 0.8, 2.0]:
        h = 1e-7
        fd = (f.eval([x + h]) - f.eval([x - h])) / (2 * h)
        assert f.grad([x])[0] == pytest.approx(fd, abs=1e-6)


def test_piecewise_stochastic_oracle_is_deterministic():
    f = PiecewiseCurvature1D(0.04, 1.0, [(0.5, 0.1)])
    np.testing.assert_array_equal(f.stoch_grad([0.7], None), f.grad([0.7]))


# ---------------------------------------------------------------------------
# instability construction


def test_construct_rejects_small_condition_number():
    with pytest.raises(ValueError):
        construct_instability_objective(10.0, 1.0, 2)


def test_construct_k_zero_is_bare_quadratic():
    f, w0, w0_ag, delta = construct_instability_objective(25.0, 1.0, 0)
    assert f.bumps == []
    assert delta == math.inf
    assert f.eval([2.0]) == pytest.approx(0.5 * 1.0 * 4.0, abs=1e-15)


@pytest.mark.parametrize("k", [1, 2, 4])
def test_construct_curvature_pattern_on_trajectory(k):
    big_l, mu = 25.0, 1.0
    f, w0, w0_ag, delta = construct_instability_objective(big_l, mu, k)
    assert delta > 0
    assert len(f.bumps) == k
    traj = agd_run(f, w0_ag, w0, big_l, mu, 3 * k)
    for t in range(3 * k):
        h = f.curvature(traj.w_md[t])
        assert h == (big_l if t % 3 == 1 else mu)


def test_construct_gradient_continuity_at_boundaries():
    f, _, _, _ = construct_instability_objective(25.0, 1.0, 2)
    boundaries = [c - hw for c, hw in f.bumps] + [c + hw for c, hw in f.bumps]
    for c in boundaries:
        prev = None
        for h in [1e-4, 1e-6, 1e-8]:
            jump = abs(f.grad([c + h / 2])[0] - f.grad([c - h / 2])[0])
            assert jump <= f.big_l * h
            if prev is not None:
                assert jump < prev
            prev = jump


def test_construct_input_validation():
    with pytest.raises(ValueError):
        construct_instability_objective(25.0, 1.0, -1)
    with pytest.raises(ValueError):
        construct_instability_objective(25.0, 1.0, 2, eps_shrink=1.5)


# ---------------------------------------------------------------------------
# instability experiment


def run_instability(k, kappa=25.0):
    big_l, mu = kappa, 1.0
    f, w0, w0_ag, delta = construct_instability_objective(big_l, mu, k)
    amp = 2.0 * (1.0 - 1.0 / math.sqrt(kappa)) ** 3
    eps = min(1e-9, 0.25 * delta / amp**k)
    res = instability_experiment(f, w0, w0_ag, big_l, mu, eps, k)
    return res, eps, amp


@pytest.mark.parametrize("k", [1, 2, 4])
def test_instability_amplification_matches_closed_form(k):
    res, eps, amp = run_instability(k)
    assert amp == pytest.approx(1.024, rel=1e-12)
    assert res.amplification == pytest.approx(amp, rel=1e-12)
    assert res.ratios.shape == (k,)
    np.testing.assert_allclose(res.ratios, amp, atol=1e-3)
    assert res.max_map_error <= 1e-8


@pytest.mark.parametrize("k", [1, 2, 4])
def test_instability_final_gaps(k):
    res, eps, amp = run_instability(k)
    growth = amp**k
    # guaranteed growth floor, looser than the exact 1.024 rate
    assert res.final_gap_w >= 0.5 * eps * 1.02**k
    # exact closed forms from the 3-step map, within 1%
    rk = 5.0
    assert res.predicted_gap_w == pytest.approx(0.5 * eps * growth * (rk + 1), rel=1e-12)
    assert res.predicted_gap_w_ag == pytest.approx(
        0.5 * eps * growth * (1 + 1 / rk), rel=1e-12)
    assert res.final_gap_w == pytest.approx(res.predicted_gap_w, rel=0.01)
    assert res.final_gap_w_ag == pytest.approx(res.predicted_gap_w_ag, rel=0.01)
    assert res.max_pairing_error <= 1e-12


def test_instability_zero_eps_means_zero_gaps():
    f, w0, w0_ag, delta = construct_instability_objective(25.0, 1.0, 2)
    res = instability_experiment(f, w0, w0_ag, 25.0, 1.0, 0.0, 2)
    assert res.final_gap_w == 0.0
    assert res.final_gap_w_ag == 0.0
    assert np.all(res.block_gaps == 0.0)


def test_instability_oversized_eps_reports_step():
    f, w0, w0_ag, delta = construct_instability_objective(25.0, 1.0, 1)
    with pytest.raises(InstabilityRegionError) as ei:
        instability_experiment(f, w0, w0_ag, 25.0, 1.0, 0.1, 1)
    assert 0 <= ei.value.step <= 2


def test_instability_input_validation():
    f, w0, w0_ag, _ = construct_instability_objective(25.0, 1.0, 1)
    with pytest.raises(ValueError):
        instability_experiment(f, w0, w0_ag, 25.0, 1.0, -1e-9, 1)
    with pytest.raises(ValueError):
        instability_experiment(f, w0, w0_ag, 25.0, 1.0, 1e-9, -1)

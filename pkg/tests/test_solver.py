import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fglasso import (
    GraphIndex,
    PenaltySpec,
    SampleCov,
    SolverOptions,
    Target,
    build_colour_classes,
    build_constraints,
    class_gradient,
    fit,
    fit_fgl_omega,
    fit_fgl_theta,
    kkt_residual,
    neg_log_likelihood,
    parse_model,
    scale_to_conditional_correlation,
    unconstrained_model,
    verify_constraints,
)
from oracles import dense_class_gradient, grid_oracle_6x6, penalised_objective, random_spd

WORKED = "S0=F1 N0=FT S1=F1 N1=0"
IDX32 = GraphIndex(3, 2)


def cov_of(s, n=50):
    return SampleCov(s, n)


# --------------------------------------------------------------------------
# basic types


def test_sample_cov_rejects_asymmetric():
    s = np.eye(3)
    s[0, 1] = 0.5
    with pytest.raises(ValueError, match="symmetric"):
        SampleCov(s, 10)


def test_sample_cov_symmetrises_rounding_noise():
    s = np.eye(3) + 1e-14 * np.triu(np.ones((3, 3)), 1)
    c = SampleCov(s, 10)
    np.testing.assert_array_equal(c.s, c.s.T)
    assert not c.s.flags.writeable


def test_sample_cov_from_data_uses_divisor_n():
    x = np.array([[1.0, 2.0], [3.0, 0.0], [5.0, 4.0]])
    np.testing.assert_allclose(SampleCov.from_data(x).s, np.cov(x.T, bias=True))


def test_penalty_rejects_negative_lambda():
    with pytest.raises(ValueError):
        PenaltySpec(-0.1)


def test_solver_options_validated():
    with pytest.raises(ValueError):
        SolverOptions(max_iterations=0)


def test_p_mismatch_rejected():
    with pytest.raises(ValueError):
        fit_fgl_theta(cov_of(np.eye(5)), parse_model(WORKED), PenaltySpec(0.1), index=IDX32)


# --------------------------------------------------------------------------
# likelihood and scaling


def test_nll_identity():
    assert neg_log_likelihood(np.eye(4), cov_of(np.eye(4))) == 4.0


def test_nll_closed_form():
    assert neg_log_likelihood(2 * np.eye(2), cov_of(np.eye(2))) == pytest.approx(
        4 - 2 * math.log(2), abs=1e-14
    )
    assert 4 - 2 * math.log(2) == pytest.approx(2.6137, abs=1e-4)


def test_nll_rejects_non_spd():
    with pytest.raises(ValueError):
        neg_log_likelihood(np.diag([1.0, -1.0]), cov_of(np.eye(2)))


def test_nll_minimised_by_inverse_covariance():
    rng = np.random.default_rng(3)
    s = random_spd(rng, 5)
    cov = cov_of(s)
    best = neg_log_likelihood(np.linalg.inv(s), cov)
    for _ in range(50):
        e = rng.standard_normal((5, 5)) * 0.05
        t = np.linalg.inv(s) + (e + e.T)
        if np.linalg.eigvalsh(t)[0] > 0:
            assert neg_log_likelihood(t, cov) > best


def test_conditional_correlation_examples():
    np.testing.assert_array_equal(scale_to_conditional_correlation(np.eye(3)), np.eye(3))
    om = scale_to_conditional_correlation(np.array([[1.0, -0.5], [-0.5, 1.0]]))
    assert om[0, 1] == 0.5


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_conditional_correlation_scale_invariant(seed):
    rng = np.random.default_rng(seed)
    theta = np.linalg.inv(random_spd(rng, 5))
    d = np.diag(rng.uniform(0.2, 5.0, 5))
    dinv = np.linalg.inv(d)
    np.testing.assert_allclose(
        scale_to_conditional_correlation(dinv @ theta @ dinv),
        scale_to_conditional_correlation(theta),
        atol=1e-12,
    )


# --------------------------------------------------------------------------
# FGL theta


@pytest.mark.parametrize("model", [WORKED, "S0=FGammaT N0=FGammaT S1=FGammaT N1=FGammaT",
                                   "S0=F1 N0=FGamma S1=FT"])
@pytest.mark.parametrize("lam", [0.0, 0.1, 2.0])
def test_identity_covariance_gives_identity(model, lam):
    res = fit_fgl_theta(cov_of(np.eye(6)), parse_model(model), PenaltySpec(lam), index=IDX32)
    assert res.converged
    np.testing.assert_allclose(res.theta_hat, np.eye(6), atol=1e-10)


def test_threshold_gives_inverse_variances():
    rng = np.random.default_rng(11)
    s = random_spd(rng, 6)
    u = np.max(np.abs(s - np.diag(np.diag(s))))
    res = fit_fgl_theta(cov_of(s), unconstrained_model(2), PenaltySpec(u), index=IDX32)
    np.testing.assert_allclose(res.theta_hat, np.diag(1 / np.diag(s)), atol=1e-10)
    assert res.edge_set() == frozenset()


@pytest.mark.parametrize("seed", range(4))
def test_worked_model_matches_grid_oracle(seed):
    s = random_spd(np.random.default_rng(100 + seed), 6, n=20)
    x, val = grid_oracle_6x6(s, 0.1)
    res = fit_fgl_theta(cov_of(s, 20), parse_model(WORKED), PenaltySpec(0.1), index=IDX32)
    assert res.objective == pytest.approx(val, abs=1e-6)
    th = res.theta_hat
    np.testing.assert_allclose([th[0, 0], th[0, 1], th[3, 4], th[0, 3]], x, atol=1e-4)


def test_objective_reported_matches_dense_formula():
    s = random_spd(np.random.default_rng(5), 6)
    res = fit_fgl_theta(cov_of(s), parse_model(WORKED), PenaltySpec(0.07), index=IDX32)
    assert res.objective == pytest.approx(penalised_objective(res.theta_hat, s, 0.07), abs=1e-12)


def test_unconstrained_lambda_zero_is_inverse():
    s = random_spd(np.random.default_rng(8), 6)
    res = fit_fgl_theta(cov_of(s), unconstrained_model(2), PenaltySpec(0.0), index=IDX32)
    np.testing.assert_allclose(res.theta_hat, np.linalg.inv(s), atol=1e-8)


def test_penalised_diagonal_closed_form():
    s = np.diag([0.5, 2.0, 1.5])
    res = fit_fgl_theta(cov_of(s), parse_model("S0=FGammaT"), PenaltySpec(0.3, True),
                        index=GraphIndex(3, 1))
    np.testing.assert_allclose(np.diag(res.theta_hat), 1 / (np.diag(s) + 0.3), atol=1e-10)


def test_structural_zeros_exact_and_result_spd():
    s = random_spd(np.random.default_rng(9), 6)
    res = fit_fgl_theta(cov_of(s), parse_model(WORKED), PenaltySpec(0.05), index=IDX32)
    cmap = build_constraints(res.classes)
    assert verify_constraints(res, cmap) == 0.0
    for a, b in cmap.zero_cells:
        assert res.theta_hat[a, b] == 0.0 and res.theta_hat[b, a] == 0.0
    np.testing.assert_array_equal(res.theta_hat, res.theta_hat.T)
    assert np.linalg.eigvalsh(res.theta_hat)[0] > 0


def test_iteration_cap_reports_not_converged():
    s = random_spd(np.random.default_rng(2), 6)
    res = fit_fgl_theta(cov_of(s), unconstrained_model(2), PenaltySpec(0.01),
                        SolverOptions(max_iterations=1), index=IDX32)
    assert not res.converged
    assert res.iterations == 1


def test_warm_start_reaches_same_optimum():
    s = random_spd(np.random.default_rng(21), 6)
    model = parse_model("S0=FGammaT N0=FGamma S1=F1")
    cold = fit_fgl_theta(cov_of(s), model, PenaltySpec(0.05), index=IDX32)
    warm = fit_fgl_theta(cov_of(s), model, PenaltySpec(0.05), index=IDX32,
                         init=cold.coeffs * 0.9)
    assert warm.objective == pytest.approx(cold.objective, abs=1e-10)


# --------------------------------------------------------------------------
# gradients and KKT


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_class_gradient_matches_dense(seed):
    rng = np.random.default_rng(seed)
    s = random_spd(rng, 6)
    classes = build_colour_classes(parse_model("S0=F1 N0=FT S1=FGamma N1=F1"), IDX32)
    theta = np.linalg.inv(random_spd(rng, 6))
    theta = classes.assemble(np.array([np.mean(np.diag(theta))] + [0.05] * (classes.n_c - 1)))
    got = class_gradient(theta, cov_of(s), classes)
    want = dense_class_gradient(theta, s, [c.cells for c in classes])
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_kkt_identity_is_zero():
    classes = build_colour_classes(parse_model(WORKED), IDX32)
    res = fit_fgl_theta(cov_of(np.eye(6)), parse_model(WORKED), PenaltySpec(0.2), index=IDX32)
    assert kkt_residual(res, cov_of(np.eye(6)), PenaltySpec(0.2), classes) <= 1e-9


def test_kkt_small_at_optimum_large_after_perturbation():
    s = random_spd(np.random.default_rng(31), 6, n=20)
    cov = cov_of(s, 20)
    pen = PenaltySpec(0.1)
    res = fit_fgl_theta(cov, parse_model(WORKED), pen, index=IDX32)
    assert kkt_residual(res, cov, pen, res.classes) <= 1e-6
    x, _ = grid_oracle_6x6(s, 0.1)
    assert res.theta_hat[0, 0] == pytest.approx(x[0], abs=1e-4)
    for m in range(res.classes.n_c):
        coeffs = res.coeffs.copy()
        coeffs[m] += 0.1
        bumped = dataclasses.replace(res, coeffs=coeffs, theta_hat=res.classes.assemble(coeffs))
        assert kkt_residual(bumped, cov, pen, res.classes) > 0.01


# --------------------------------------------------------------------------
# FGL omega


def test_omega_identity_fixed_point():
    model = parse_model("S0=FGammaT N0=FGamma S1=F1 target=omega")
    res = fit_fgl_omega(cov_of(np.eye(6)), model, PenaltySpec(0.1), index=IDX32)
    np.testing.assert_allclose(res.theta_hat, np.eye(6), atol=1e-10)
    np.testing.assert_allclose(res.omega_hat, np.eye(6), atol=1e-10)
    assert res.converged and res.outer_iterations <= 2


EXCHANGEABLE = np.full((6, 6), 0.6) + 1.4 * np.eye(6)
ALL_F1 = "S0=F1 N0=F1 S1=F1 N1=F1"


def test_omega_and_theta_agree_for_exchangeable_covariance():
    cov = cov_of(EXCHANGEABLE)
    th = fit_fgl_theta(cov, parse_model(ALL_F1), PenaltySpec(0.0), index=IDX32)
    om = fit_fgl_omega(cov, parse_model(ALL_F1 + " target=omega"), PenaltySpec(0.0),
                       index=IDX32)
    np.testing.assert_allclose(om.theta_hat, th.theta_hat, atol=1e-6)


@pytest.mark.parametrize("lam", [0.05, 0.2])
def test_omega_penalty_is_theta_penalty_rescaled_by_diagonal(lam):
    # omega classes carry the penalty on theta / theta_aa, so with one diagonal
    # class the omega fit solves the theta problem at lam / theta_aa
    cov = cov_of(EXCHANGEABLE)
    om = fit_fgl_omega(cov, parse_model(ALL_F1 + " target=omega"), PenaltySpec(lam),
                       index=IDX32)
    th = fit_fgl_theta(cov, parse_model(ALL_F1), PenaltySpec(lam / om.theta_hat[0, 0]),
                       index=IDX32)
    np.testing.assert_allclose(om.theta_hat, th.theta_hat, atol=1e-6)


def test_omega_fit_constant_on_scaled_classes():
    s = random_spd(np.random.default_rng(4), 8, scale_spread=2.0)
    model = parse_model("S0=FGammaT N0=FGamma S1=F1 target=omega")
    res = fit(cov_of(s), model, PenaltySpec(0.05), index=GraphIndex(4, 2))
    assert res.target is Target.OMEGA and res.converged
    sigma = np.asarray(res.sigma0)
    scaled = res.theta_hat / np.outer(sigma, sigma)
    for m, cls in enumerate(res.classes):
        if cls.is_diagonal:
            continue
        vals = [scaled[a, b] for a, b in cls.cells]
        assert np.ptp(vals) <= 1e-8
    assert kkt_residual(res, cov_of(s), PenaltySpec(0.05), res.classes) <= 1e-6


def test_fit_dispatches_on_target():
    s = random_spd(np.random.default_rng(6), 6)
    a = fit(cov_of(s), parse_model(WORKED), PenaltySpec(0.1), index=IDX32)
    assert a.target is Target.THETA
    b = fit(cov_of(s), parse_model(WORKED + " target=omega"), PenaltySpec(0.1), index=IDX32)
    assert b.target is Target.OMEGA and b.sigma0 is not None

import numpy as np
import pytest

from ocflow import (ConfigurationError, EvolutionMode, EvolutionState, Gains,
                    MultiplierBoundWarning, RankError, StopCriteria,
                    evaluate_iterate, evolution_rhs, gradient_flow_generic,
                    lyapunov_diagnostic, make_basis, multiplier, solve_evolution)

MP_EXACT = 10.0 * np.array([[2, 2, 8 / 3, 4],
                            [2, 8 / 3, 4, 32 / 5],
                            [8 / 3, 4, 32 / 5, 32 / 3],
                            [4, 32 / 5, 32 / 3, 128 / 7]])
GAMMA_EXACT = np.array([[2.0, 2.0],
                        [4 / 3, 2.0],
                        [4 / 3, 8 / 3],
                        [8 / 5, 4.0]])


def cubic():
    return make_basis("global_polynomial", m=1, t0=0.0, form="form1", order=3)


def test_multiplier_closed_form_at_zero_control():
    # Gram identity: Gamma^T M_p^-1 Gamma = K * Gram{2-t, 1} on [0, 2]
    M_pi_expect = 0.1 * np.array([[8 / 3, 2.0], [2.0, 2.0]])
    M_pi = GAMMA_EXACT.T @ np.linalg.solve(MP_EXACT, GAMMA_EXACT)
    np.testing.assert_allclose(M_pi, M_pi_expect, atol=1e-12)
    pi = multiplier(MP_EXACT, np.zeros(4), GAMMA_EXACT, None,
                    0.1 * np.eye(2), np.array([3.0, 1.0]))
    np.testing.assert_allclose(pi, [3.0, -2.5], atol=1e-12)


def test_multiplier_empty_constraint():
    pi = multiplier(np.eye(2), np.zeros(2), np.zeros((2, 0)), None,
                    np.zeros((0, 0)), np.zeros(0))
    assert pi.shape == (0,)


def test_multiplier_bound_warning():
    with pytest.warns(MultiplierBoundWarning):
        multiplier(MP_EXACT, np.zeros(4), GAMMA_EXACT, None,
                   0.1 * np.eye(2), np.array([3.0, 1.0]), pi_bound=1.0)


def test_multiplier_rank_error_on_dependent_columns():
    Gamma = np.stack([GAMMA_EXACT[:, 0], GAMMA_EXACT[:, 0]], axis=1)
    with pytest.raises(RankError):
        multiplier(MP_EXACT, np.zeros(4), Gamma, None,
                   0.1 * np.eye(2), np.array([1.0, 1.0]))


def test_rhs_vanishes_at_analytic_optimum(example1, e1_par):
    state = EvolutionState(p=np.array([-3.5, 3.0, 0.0, 0.0]), t_f=2.0)
    d = evolution_rhs(EvolutionMode.form1(), example1.prob, e1_par,
                      example1.gains, state)
    assert np.abs(d.p).max() <= 1e-4
    assert d.t_f == 0.0


def test_rhs_at_zero_control_matches_matrix_arithmetic(example1, e1_par):
    it = evaluate_iterate(EvolutionMode.form1(), example1.prob, e1_par,
                          example1.gains, np.zeros(4), 2.0)
    # residual = Gamma pi with pi = [3, -2.5]; first entry 2*3 + 2*(-2.5) = 1
    assert it.residual[0] == pytest.approx(1.0, abs=1e-6)
    expect = -np.linalg.solve(MP_EXACT, GAMMA_EXACT @ np.array([3.0, -2.5]))
    np.testing.assert_allclose(it.dp, expect, atol=1e-6)


def test_form2_degenerate_matches_form1_equations(brach):
    # zero t_f-sensitivity: the coupled equations fall apart into the
    # decoupled ones built from the same bundle
    from ocflow import (QuadratureSpec, assemble_form1, solve_adjoints,
                        solve_state)
    from ocflow.sensitivity import spd_solve

    par = make_basis("piecewise_constant", m=1, t0=0.0, form="form2", n_segments=4)
    prob, gains = brach.prob, brach.gains
    rng = np.random.default_rng(6)
    p = rng.uniform(-0.2, 1.0, par.s)
    t_f = 1.07
    it2 = evaluate_iterate(EvolutionMode.form2(), prob, par, gains, p, t_f)

    x = solve_state(prob, par, p, t_f)
    b = solve_adjoints(prob, par, p, x, t_f)
    q1 = assemble_form1(prob, par, b, gains, t_f, QuadratureSpec())
    pi = multiplier(q1.M_p, q1.r_1p, q1.Gamma_1p,
                    (gains.k_tf, q1.tf_scalar, q1.tf_row),
                    gains.K_g, it2.g_val)
    dp = -spd_solve(q1.M_p, q1.r_1p + q1.Gamma_1p @ pi, "M_p")
    dtf = -gains.k_tf * (q1.tf_scalar + pi @ q1.tf_row)
    np.testing.assert_allclose(it2.pi, pi, atol=1e-12)
    np.testing.assert_allclose(it2.dp, dp, atol=1e-12)
    assert it2.dtf == pytest.approx(dtf, abs=1e-12)


def test_lyapunov_diagnostic_values():
    assert lyapunov_diagnostic(np.zeros(2), 3.25, 0.01) == pytest.approx(0.0325)
    assert lyapunov_diagnostic(np.array([3.0, 1.0]), 0.0, 0.01) \
        == pytest.approx(np.sqrt(10.0))
    assert lyapunov_diagnostic(np.zeros(2), 0.0, 0.01) == 0.0
    with pytest.raises(ValueError):
        lyapunov_diagnostic(np.zeros(2), 1.0, 0.0)


def test_gradient_flow_generic_kkt_point():
    theta, pi = gradient_flow_generic(
        f_grad=lambda th: th,
        h_val=lambda th: np.array([th[0] - 1.0]),
        h_jac=lambda th: np.array([[1.0, 0.0, 0.0]]),
        K_theta=np.eye(3), K_h=np.eye(1), theta0=np.zeros(3),
        stop=StopCriteria(tau_max=200.0))
    np.testing.assert_allclose(theta, [1.0, 0.0, 0.0], atol=1e-6)
    assert pi[0] == pytest.approx(-1.0, abs=1e-6)


def test_gradient_flow_generic_unconstrained():
    a = np.array([0.3, -1.2])
    theta, pi = gradient_flow_generic(
        f_grad=lambda th: th - a,
        h_val=lambda th: np.zeros(0),
        h_jac=lambda th: np.zeros((0, 2)),
        K_theta=np.eye(2), K_h=np.zeros((0, 0)), theta0=np.zeros(2),
        stop=StopCriteria(tau_max=100.0))
    np.testing.assert_allclose(theta, a, atol=1e-6)
    assert pi.shape == (0,)


def test_gradient_flow_multiplier_is_least_squares_at_convergence():
    rng = np.random.default_rng(14)
    A = rng.normal(size=(2, 4))
    b = rng.normal(size=2)
    target = rng.normal(size=4)
    theta, pi = gradient_flow_generic(
        f_grad=lambda th: th - target,
        h_val=lambda th: A @ th - b,
        h_jac=lambda th: A,
        K_theta=0.5 * np.eye(4), K_h=np.eye(2), theta0=np.zeros(4),
        stop=StopCriteria(tau_max=500.0, tol_opt=1e-10, tol_feas=1e-10))
    lsq = -np.linalg.pinv(A.T) @ (theta - target)
    np.testing.assert_allclose(pi, lsq, atol=1e-6)


def test_gradient_flow_large_diagonal_gain(example1):
    # a second arbitrary SPD gain (100x the other one) reaches the same
    # optimum much faster in tau; checks gain-independence of the equilibrium
    par = cubic()
    report, _, _ = solve_evolution(
        EvolutionMode.gradient_flow(10.0 * np.eye(4)), example1.prob, par,
        example1.gains, EvolutionState(p=np.zeros(4), t_f=2.0),
        StopCriteria(tau_max=600.0, record_every=10.0))
    np.testing.assert_allclose(report.p_final, [-3.5, 3.0, 0.0, 0.0], atol=1e-3)
    np.testing.assert_allclose(report.pi_final, [3.0, -2.5], atol=1e-3)


def test_unconstrained_flow_descends_objective(lqr_like):
    # q = 0: empty multiplier, plain descent on J
    from ocflow import OdeSettings
    par = make_basis("global_polynomial", m=1, t0=0.0, form="form1", order=2)
    gains = Gains.constant(K=0.1, m=1, q=0)
    report, trace, _ = solve_evolution(
        EvolutionMode.form1(), lqr_like, par, gains,
        EvolutionState(p=np.zeros(3), t_f=2.0),
        StopCriteria(tau_max=200.0, tol_opt=1e-8),
        ode_outer=OdeSettings(rel_tol=1e-8, abs_tol=1e-11),
        ode_inner=OdeSettings(rel_tol=1e-10, abs_tol=1e-12))
    assert report.pi_final.shape == (0,)
    J = trace.column("J")
    assert np.all(np.diff(J) <= 1e-10)
    assert report.residual_norm <= 1e-8


def test_case2_node_values_reference(brach_case2):
    # interpolation-node values of the converged linear heading law
    report, _, _, _ = brach_case2
    np.testing.assert_allclose(report.p_final,
                               [0.0, 0.3015, 0.6030, 0.9045, 1.2060], atol=2e-3)


def test_time_varying_control_weight_reaches_same_optimum(example1):
    # the weight reshapes the flow's metric, not its equilibrium
    from ocflow import OdeSettings

    def K_inv(t):
        return np.array([[10.0 * (1.0 + 0.5 * np.sin(t))]])

    gains = Gains(K_inv=K_inv, k_tf=0.0, K_g=0.1 * np.eye(2))
    par = cubic()
    report, _, _ = solve_evolution(
        EvolutionMode.form1(), example1.prob, par, gains,
        EvolutionState(p=np.zeros(4), t_f=2.0),
        StopCriteria(tau_max=300.0, record_every=2.0))
    np.testing.assert_allclose(report.p_final, [-3.5, 3.0, 0.0, 0.0], atol=1e-3)
    np.testing.assert_allclose(report.pi_final, [3.0, -2.5], atol=1e-3)


def test_two_control_problem_converges():
    # x' = u (two independent channels), minimum energy to a target point;
    # optimal controls are constant, so a 2-segment step basis is exact
    from ocflow import OcpProblem
    prob = OcpProblem(
        n=2, m=2, q=2, t0=0.0, x0=np.zeros(2), tf_mode="fixed", tf_fixed=1.0,
        f=lambda x, u, t: np.asarray(u, float),
        f_x=lambda x, u, t: np.zeros((2, 2)),
        f_u=lambda x, u, t: np.eye(2),
        L=lambda x, u, t: 0.5 * float(np.asarray(u) @ np.asarray(u)),
        L_x=lambda x, u, t: np.zeros(2),
        L_u=lambda x, u, t: np.asarray(u, float),
        phi=lambda xf, tf: 0.0,
        phi_x=lambda xf, tf: np.zeros(2),
        phi_t=lambda xf, tf: 0.0,
        g=lambda xf, tf: np.asarray(xf, float) - np.array([1.0, -1.0]),
        g_x=lambda xf, tf: np.eye(2),
        g_t=lambda xf, tf: np.zeros(2),
        name="two-channel")
    par = make_basis("piecewise_constant", m=2, t0=0.0, form="form1", n_segments=2)
    gains = Gains.constant(K=0.1, m=2, q=2)
    report, _, _ = solve_evolution(
        EvolutionMode.form1(), prob, par, gains,
        EvolutionState(p=np.zeros(4), t_f=1.0), StopCriteria(tau_max=300.0))
    np.testing.assert_allclose(report.p_final, [1.0, -1.0, 1.0, -1.0], atol=1e-3)
    np.testing.assert_allclose(report.pi_final, [-1.0, 1.0], atol=1e-3)
    assert report.J_final == pytest.approx(1.0, abs=1e-3)


def test_solve_report_invariant(e1_form1_solve):
    report, trace, _, _ = e1_form1_solve
    if report.converged:
        assert report.residual_norm <= 1e-6
        assert report.g_norm <= 1e-6
    taus = trace.taus()
    assert np.all(np.diff(taus) > 0)


def test_trace_spacing_and_final_row(e1_form1_solve):
    report, trace, _, _ = e1_form1_solve
    taus = trace.taus()
    assert taus[0] == 0.0
    assert np.all(np.diff(taus) >= 1.0 - 1e-9)
    assert taus[-1] == report.tau_reached


def test_mode_parameterization_compatibility(example1, brach):
    par_f2 = make_basis("lagrange_nodes", m=1, t0=0.0, form="form2", n_segments=4)
    with pytest.raises(ConfigurationError):
        evolution_rhs(EvolutionMode.form1(), brach.prob, par_f2, brach.gains,
                      EvolutionState(p=np.zeros(5), t_f=1.0))
    par_f1_nodes = make_basis("piecewise_linear", m=1, t0=0.0, form="form1",
                              n_segments=4)
    with pytest.raises(ConfigurationError):
        evolution_rhs(EvolutionMode.form1(), brach.prob, par_f1_nodes, brach.gains,
                      EvolutionState(p=np.zeros(5), t_f=1.0))
    with pytest.raises(ConfigurationError):
        evolution_rhs(EvolutionMode.form2(), example1.prob, par_f2, example1.gains,
                      EvolutionState(p=np.zeros(5), t_f=2.0))
    with pytest.raises(ConfigurationError):
        evaluate_iterate(EvolutionMode.gradient_flow(), example1.prob,
                         make_basis("global_polynomial", m=1, t0=0.0,
                                    form="form1", order=3),
                         example1.gains, np.zeros(4), 2.0)


def test_init_tf_conflict_rejected(example1, e1_par):
    with pytest.raises(ConfigurationError):
        solve_evolution(EvolutionMode.form1(), example1.prob, e1_par,
                        example1.gains, EvolutionState(p=np.zeros(4), t_f=1.0),
                        StopCriteria(tau_max=1.0))


def test_stop_criteria_validation():
    with pytest.raises(ValueError):
        StopCriteria(tau_max=-1.0)
    with pytest.raises(ValueError):
        StopCriteria(record_every=0.0)

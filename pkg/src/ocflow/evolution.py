"""The outer initial-value problem in virtual time.

An iterate theta = (p[, t_f]) flows under one of three right-hand sides:

* ``form1``  -- dp/dtau = -M_p^-1 (r_1p + Gamma_1p pi), and for free terminal
  time dt_f/dtau = -k_tf * (terminal bracket); the two equations decouple.
* ``form2``  -- d(p, t_f)/dtau = -M_ptf^-1 (r_2ptf + Gamma_2ptf pi), for
  parameterizations whose shape depends on t_f.
* ``gradient_flow`` -- d theta/dtau = -K_theta (f_theta + g_theta^T pi) with
  an arbitrary constant SPD gain; the NLP-side twin of form 1 (they coincide
  when K_theta is the inverse Gram matrix).

In every mode the multiplier pi is chosen so the terminal-constraint
violation obeys dg/dtau = -K_g g, i.e. the infeasibility decays
exponentially along the flow.  Equilibria satisfy the parameterized
optimality conditions; the solver integrates until a residual/feasibility
tolerance or a tau budget is hit, recording a trace row every
``record_every`` units of tau via dense output.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, MultiplierBoundWarning
from .integrate import OdeSettings, _Stepper
from .parameterization import FORM1, FORM2, Parameterization
from .problem import Gains, OcpProblem, SolveReport, SolveTrace, TraceRow
from .quadrature import QuadratureSpec
from .sensitivity import (AdjointBundle, Form1Quantities, Form2Quantities,
                          NlpGradients, assemble_form1, assemble_form2,
                          basis_gram, nlp_gradients, solve_adjoints,
                          solve_state, spd_solve)

_NODE_KINDS = ("lagrange_nodes", "piecewise_linear", "piecewise_constant")


@dataclass(frozen=True)
class EvolutionState:
    """The unknowns flowing in virtual time."""

    p: np.ndarray
    t_f: float

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float))


@dataclass(frozen=True)
class EvolutionMode:
    """Which right-hand side drives the flow."""

    kind: str                          # "form1" | "form2" | "gradient_flow"
    K_theta: np.ndarray | None = None

    @classmethod
    def form1(cls) -> "EvolutionMode":
        return cls(kind="form1")

    @classmethod
    def form2(cls) -> "EvolutionMode":
        return cls(kind="form2")

    @classmethod
    def gradient_flow(cls, K_theta=None) -> "EvolutionMode":
        if K_theta is not None:
            K_theta = np.atleast_2d(np.asarray(K_theta, dtype=float))
        return cls(kind="gradient_flow", K_theta=K_theta)


@dataclass(frozen=True)
class StopCriteria:
    """Stopping and recording policy for one solve."""

    tau_max: float = 300.0
    tol_opt: float = 1e-6
    tol_feas: float = 1e-6
    record_every: float = 1.0
    c1: float = 0.01
    pi_bound: float = 1e6

    def __post_init__(self):
        if self.tau_max <= 0 or self.tol_opt <= 0 or self.tol_feas <= 0 \
                or self.record_every <= 0:
            raise ValueError("tau_max, tolerances and record_every must be positive")


def lyapunov_diagnostic(g_val, J_val: float, c1: float) -> float:
    """V = ||g|| + c1 * J, the energy-like quantity recorded along the flow."""
    if c1 <= 0:
        raise ValueError("c1 must be positive")
    g_val = np.asarray(g_val, dtype=float)
    return float(np.sqrt(g_val @ g_val) + c1 * J_val)


def multiplier(M, r, Gamma, tf_terms, K_g, g_val, *, pi_bound: float = 1e6,
               m_is_weight: bool = False) -> np.ndarray:
    """Terminal-constraint multiplier enforcing dg/dtau = -K_g g.

    Solves pi = -(Gamma^T W Gamma [+ k_tf row term])^-1
                 (Gamma^T W r [+ k_tf bracket term] - K_g g)
    where W = M^-1 normally, or W = M directly when ``m_is_weight`` (the
    gradient-flow mode passes its gain matrix that way).  ``tf_terms`` is
    ``(k_tf, tf_scalar, tf_row)`` for the decoupled free-terminal-time form,
    else None.
    """
    g_val = np.asarray(g_val, dtype=float)
    q = g_val.size
    if q == 0:
        return np.zeros(0)
    Gamma = np.asarray(Gamma, dtype=float)
    r = np.asarray(r, dtype=float)
    if m_is_weight:
        WG, Wr = M @ Gamma, M @ r
    else:
        WG = spd_solve(M, Gamma, "multiplier weight")
        Wr = spd_solve(M, r, "multiplier weight")
    M_pi = Gamma.T @ WG
    r_pi = Gamma.T @ Wr - K_g @ g_val
    if tf_terms is not None:
        k_tf, tf_scalar, tf_row = tf_terms
        M_pi = M_pi + k_tf * np.outer(tf_row, tf_row)
        r_pi = r_pi + k_tf * tf_row * tf_scalar
    pi = -spd_solve(M_pi, r_pi,
                    "multiplier system (constraint sensitivity lacks full column rank)")
    norm = float(np.linalg.norm(pi))
    if norm > pi_bound:
        warnings.warn(f"||pi|| = {norm:.3e} exceeds bound {pi_bound:.1e}; the "
                      "multiplier boundedness assumption looks violated",
                      MultiplierBoundWarning, stacklevel=2)
    return pi


@dataclass
class IterateEval:
    """Everything the flow and its diagnostics need at one iterate."""

    p: np.ndarray
    t_f: float
    bundle: AdjointBundle
    quantities: Form1Quantities | Form2Quantities | NlpGradients
    pi: np.ndarray
    J: float
    g_val: np.ndarray
    g_norm: float
    residual: np.ndarray
    residual_norm: float
    dp: np.ndarray
    dtf: float
    free_tf: bool

    def deriv(self) -> np.ndarray:
        if self.free_tf:
            return np.concatenate([self.dp, [self.dtf]])
        return self.dp


def _check_compat(mode: EvolutionMode, prob: OcpProblem, par: Parameterization) -> None:
    free = prob.tf_mode == "free"
    if mode.kind == "form2":
        if par.form != FORM2:
            raise ConfigurationError("form2 mode requires a form2 parameterization")
        if not free:
            raise ConfigurationError("form2 mode targets free-terminal-time problems")
    else:
        if par.form != FORM1:
            raise ConfigurationError(f"{mode.kind} mode requires a form1 parameterization")
        if free and par.kind in _NODE_KINDS:
            raise ConfigurationError(
                f"{par.kind} nodes move with t_f; use form2 when t_f is free")


def _resolve_k_theta(mode: EvolutionMode, gains: Gains, dim: int) -> np.ndarray:
    K_theta = mode.K_theta if mode.K_theta is not None else gains.K_theta
    if K_theta is None:
        raise ConfigurationError("gradient_flow mode needs K_theta (mode or gains)")
    K_theta = np.atleast_2d(np.asarray(K_theta, dtype=float))
    if K_theta.shape == (1, 1) and dim != 1:
        K_theta = K_theta[0, 0] * np.eye(dim)
    if K_theta.shape != (dim, dim):
        raise ConfigurationError(
            f"K_theta has shape {K_theta.shape}, expected ({dim}, {dim})")
    return K_theta


def evaluate_iterate(mode: EvolutionMode, prob: OcpProblem, par: Parameterization,
                     gains: Gains, p, t_f: float,
                     ode_inner: OdeSettings | None = None,
                     quad: QuadratureSpec | None = None, *,
                     M_p_const: np.ndarray | None = None,
                     pi_bound: float = 1e6) -> IterateEval:
    """Run the full pipeline (state, adjoints, assembly, multiplier) at (p, t_f)."""
    _check_compat(mode, prob, par)
    quad = quad or QuadratureSpec()
    p = np.asarray(p, dtype=float)
    free = prob.tf_mode == "free"

    x_traj = solve_state(prob, par, p, t_f, ode_inner)
    bundle = solve_adjoints(prob, par, p, x_traj, t_f, ode_inner)
    x_f = bundle.x_at(t_f)
    J = float(prob.phi(x_f, t_f)) + bundle.cost_integral
    g_val = np.asarray(prob.g(x_f, t_f), dtype=float)
    g_norm = float(np.linalg.norm(g_val))

    if mode.kind == "form1":
        quant = assemble_form1(prob, par, bundle, gains, t_f, quad, M_p=M_p_const)
        k_tf = gains.k_tf if free else 0.0
        tf_terms = (k_tf, quant.tf_scalar, quant.tf_row) if free else None
        pi = multiplier(quant.M_p, quant.r_1p, quant.Gamma_1p, tf_terms,
                        gains.K_g, g_val, pi_bound=pi_bound)
        stat = quant.r_1p + quant.Gamma_1p @ pi
        dp = -spd_solve(quant.M_p, stat, "M_p")
        if free:
            bracket = quant.tf_scalar + float(pi @ quant.tf_row)
            dtf = -k_tf * bracket
            residual = np.concatenate([stat, [bracket]])
        else:
            dtf = 0.0
            residual = stat
    elif mode.kind == "form2":
        quant = assemble_form2(prob, par, bundle, gains, p, t_f, quad)
        pi = multiplier(quant.M_ptf, quant.r_2ptf, quant.Gamma_2ptf, None,
                        gains.K_g, g_val, pi_bound=pi_bound)
        residual = quant.r_2ptf + quant.Gamma_2ptf @ pi
        dtheta = -spd_solve(quant.M_ptf, residual, "M_ptf")
        dp, dtf = dtheta[:-1], float(dtheta[-1])
    elif mode.kind == "gradient_flow":
        quant = nlp_gradients(prob, par, bundle, p, t_f, quad)
        dim = par.s + (1 if free else 0)
        K_theta = _resolve_k_theta(mode, gains, dim)
        f_th = quant.f_theta if free else quant.f_theta[:par.s]
        G_th = quant.g_theta if free else quant.g_theta[:, :par.s]
        pi = multiplier(K_theta, f_th, G_th.T, None, gains.K_g, g_val,
                        pi_bound=pi_bound, m_is_weight=True)
        residual = f_th + G_th.T @ pi
        dtheta = -K_theta @ residual
        if free:
            dp, dtf = dtheta[:-1], float(dtheta[-1])
        else:
            dp, dtf = dtheta, 0.0
    else:
        raise ConfigurationError(f"unknown evolution mode {mode.kind!r}")

    return IterateEval(p=p, t_f=t_f, bundle=bundle, quantities=quant, pi=pi,
                       J=J, g_val=g_val, g_norm=g_norm, residual=residual,
                       residual_norm=float(np.linalg.norm(residual)),
                       dp=dp, dtf=dtf, free_tf=free)


def evolution_rhs(mode: EvolutionMode, prob: OcpProblem, par: Parameterization,
                  gains: Gains, state: EvolutionState,
                  ode: OdeSettings | None = None,
                  quad: QuadratureSpec | None = None) -> EvolutionState:
    """d(state)/dtau at the given iterate."""
    it = evaluate_iterate(mode, prob, par, gains, state.p, state.t_f, ode, quad)
    return EvolutionState(p=it.dp, t_f=it.dtf)


def _resolve_init(prob: OcpProblem, init: EvolutionState) -> tuple[np.ndarray, float]:
    p0 = np.asarray(init.p, dtype=float)
    if prob.tf_mode == "fixed":
        t_f0 = prob.tf_fixed
        if init.t_f is not None and not np.isclose(init.t_f, t_f0):
            raise ConfigurationError(
                f"init.t_f = {init.t_f!r} conflicts with fixed t_f = {t_f0!r}")
    else:
        t_f0 = float(init.t_f)
        if t_f0 <= prob.t0:
            raise ConfigurationError("init.t_f must exceed t0")
    return p0, t_f0


def solve_evolution(mode: EvolutionMode, prob: OcpProblem, par: Parameterization,
                    gains: Gains, init: EvolutionState, stop: StopCriteria,
                    ode_outer: OdeSettings | None = None,
                    ode_inner: OdeSettings | None = None,
                    quad: QuadratureSpec | None = None
                    ) -> tuple[SolveReport, SolveTrace, AdjointBundle]:
    """Integrate the evolution until tolerance convergence or tau_max.

    Trace rows are sampled on the uniform tau grid (spacing
    ``stop.record_every``) via dense output; the stopping test runs at those
    same points.  Returns the final report, the trace, and the adjoint bundle
    of the final iterate (from which costates are reconstructed).
    """
    t_start = time.perf_counter()
    _check_compat(mode, prob, par)
    ode_outer = ode_outer or OdeSettings()
    quad = quad or QuadratureSpec()
    free = prob.tf_mode == "free"
    p0, t_f0 = _resolve_init(prob, init)

    M_p_const = None
    if (mode.kind == "form1" and not free and par.linear_in_p
            and gains.K_inv_const is not None):
        M_p_const = basis_gram(par, gains, p0, t_f0, quad)

    def evaluate(theta: np.ndarray) -> IterateEval:
        if free:
            return evaluate_iterate(mode, prob, par, gains, theta[:-1], theta[-1],
                                    ode_inner, quad, M_p_const=M_p_const,
                                    pi_bound=stop.pi_bound)
        return evaluate_iterate(mode, prob, par, gains, theta, t_f0,
                                ode_inner, quad, M_p_const=M_p_const,
                                pi_bound=stop.pi_bound)

    def rhs(tau, theta):
        return evaluate(theta).deriv()

    guard = None
    if free:
        eps_t = 1e-6 * (t_f0 - prob.t0)
        guard = lambda tau, theta: theta[-1] > prob.t0 + eps_t

    theta = np.concatenate([p0, [t_f0]]) if free else p0.copy()
    trace = SolveTrace()

    def record(tau: float, theta_at: np.ndarray) -> tuple[IterateEval, bool]:
        it = evaluate(theta_at)
        trace.append(TraceRow(
            tau=tau, p=it.p.copy(), t_f=it.t_f, pi=it.pi.copy(), J=it.J,
            g_norm=it.g_norm, residual_norm=it.residual_norm,
            V=lyapunov_diagnostic(it.g_val, it.J, stop.c1)))
        done = it.residual_norm <= stop.tol_opt and it.g_norm <= stop.tol_feas
        return it, done

    final_it, done = record(0.0, theta)
    tau_final = 0.0
    if not done:
        stepper = _Stepper(rhs, 0.0, theta, stop.tau_max, ode_outer, guard=guard)
        next_k = 1
        while not stepper.done and not done:
            tau_prev = stepper.t
            anchor, h, base, Q = stepper.step()
            # record-grid points inside the accepted step, via dense output
            while not done:
                tau_rec = next_k * stop.record_every
                if tau_rec > stepper.t + 1e-12 * stop.tau_max or tau_rec > stop.tau_max:
                    break
                th = (tau_rec - anchor) / (stepper.t - tau_prev)
                powers = np.array([th, th**2, th**3, th**4])
                theta_rec = base + h * (Q @ powers)
                final_it, done = record(tau_rec, theta_rec)
                tau_final = tau_rec
                next_k += 1
        if not done and tau_final < stepper.t:
            final_it, done = record(stepper.t, stepper.y)
            tau_final = stepper.t

    report = SolveReport(
        p_final=final_it.p.copy(), tf_final=final_it.t_f,
        pi_final=final_it.pi.copy(), J_final=final_it.J,
        residual_norm=final_it.residual_norm, g_norm=final_it.g_norm,
        converged=bool(done), tau_reached=tau_final,
        wall_time=time.perf_counter() - t_start)
    return report, trace, final_it.bundle


def gradient_flow_generic(f_grad, h_val, h_jac, K_theta, K_h, theta0,
                          stop: StopCriteria,
                          ode: OdeSettings | None = None
                          ) -> tuple[np.ndarray, np.ndarray]:
    """Equality-constrained gradient flow for a plain NLP.

    Integrates d theta/dtau = -K_theta (f_grad + h_jac^T pi) with the
    multiplier pi = -(h_jac K_theta h_jac^T)^-1 (h_jac K_theta f_grad - K_h h)
    until stationarity; returns (theta*, pi*).  With an empty constraint this
    is plain gradient flow.  At convergence pi* equals the least-squares
    multiplier -(h_jac^T)^+ f_grad, independent of K_theta.

    There is no inner simulation here, so the default integration tolerances
    are tight; the flow's accuracy is limited only by them.
    """
    theta0 = np.asarray(theta0, dtype=float)
    K_theta = np.atleast_2d(np.asarray(K_theta, dtype=float))
    if K_theta.shape == (1, 1) and theta0.size != 1:
        K_theta = K_theta[0, 0] * np.eye(theta0.size)

    def pi_of(theta):
        h = np.asarray(h_val(theta), dtype=float)
        if h.size == 0:
            return np.zeros(0), h
        H = np.atleast_2d(np.asarray(h_jac(theta), dtype=float))
        A = H @ K_theta
        pi = -spd_solve(A @ H.T, A @ np.asarray(f_grad(theta), float) - K_h @ h,
                        "gradient-flow multiplier (h_jac lacks row rank)")
        return pi, h

    def rhs(tau, theta):
        pi, h = pi_of(theta)
        grad = np.asarray(f_grad(theta), dtype=float)
        if pi.size:
            H = np.atleast_2d(np.asarray(h_jac(theta), dtype=float))
            grad = grad + H.T @ pi
        return -K_theta @ grad

    ode = ode or OdeSettings(rel_tol=1e-8, abs_tol=1e-10)
    stepper = _Stepper(rhs, 0.0, theta0, stop.tau_max, ode)
    while not stepper.done:
        stepper.step()
        pi, h = pi_of(stepper.y)
        if (np.linalg.norm(rhs(stepper.t, stepper.y)) <= stop.tol_opt
                and np.linalg.norm(h) <= stop.tol_feas):
            break
    pi, _ = pi_of(stepper.y)
    return stepper.y, pi

"""Costate reconstruction and optimality residuals.

The costate of the underlying optimal control problem is recovered from the
already-computed adjoints as the exact linear combination

    lambda(t) = mu(t) + Psi(t) pi,

so the terminal condition lambda(t_f) = phi_x + g_x^T pi holds to rounding
and no additional integration is performed.  A second, basis-free multiplier
(the one the non-parameterized theory would produce) is also available; the
two agree when the parameterized control has converged to the optimal one,
which is the certification payload of the solver.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .integrate import DenseTrajectory
from .parameterization import Parameterization
from .problem import Gains, OcpProblem
from .quadrature import QuadratureSpec, simpson_points
from .sensitivity import (AdjointBundle, Form1Quantities, Form2Quantities,
                          _grid_data, _terminal_values, spd_solve)


@dataclass
class CostateTrajectory:
    """lambda(t) together with the multiplier used to assemble it."""

    lam_traj: DenseTrajectory
    pi_used: np.ndarray


@dataclass
class OptimalityResiduals:
    """How far an iterate is from the parameterized optimality conditions.

    ``param_residual`` is the stationarity vector r + Gamma pi;
    ``tf_residual`` the terminal-time bracket; ``continuous_residual_sup``
    the sup over the grid of the basis-free stationarity condition
    ||p_u + f_u^T Psi pi||; ``feasibility`` the terminal-constraint norm.
    """

    param_residual: np.ndarray
    tf_residual: float
    continuous_residual_sup: float
    feasibility: float


def reconstruct_costate(prob: OcpProblem, bundle: AdjointBundle,
                        pi) -> CostateTrajectory:
    """lambda(t) = mu(t) + Psi(t) pi, pointwise from the stored adjoints."""
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (prob.q,):
        raise DimensionError(f"pi has shape {pi.shape}, expected ({prob.q},)")
    n, q = prob.n, prob.q
    mu, psi = bundle.mu_traj, bundle.psi_traj

    def lam_fn(ts):
        lam = mu(ts)
        if q:
            lam = lam + psi(ts).reshape(-1, n, q) @ pi
        return lam

    values = mu.values + (psi.values.reshape(-1, n, q) @ pi if q else 0.0)
    lam_traj = DenseTrajectory(mu.t_grid, values, fn=lam_fn)
    return CostateTrajectory(lam_traj=lam_traj, pi_used=pi)


def optimality_residuals(prob: OcpProblem, par: Parameterization,
                         quantities: Form1Quantities | Form2Quantities,
                         bundle: AdjointBundle, pi, g_val,
                         quad: QuadratureSpec | None = None) -> OptimalityResiduals:
    """All four residuals of an iterate, sampled on the shared grid."""
    pi = np.asarray(pi, dtype=float)
    g_val = np.asarray(g_val, dtype=float)
    quad = quad or QuadratureSpec()

    if isinstance(quantities, Form1Quantities):
        param_residual = quantities.r_1p + quantities.Gamma_1p @ pi
    else:
        param_residual = quantities.r_2ptf + quantities.Gamma_2ptf @ pi
    tf_residual = quantities.tf_scalar + float(pi @ quantities.tf_row)

    gd = _grid_data(prob, par, bundle, quad)
    pointwise = gd.pu + (gd.fupsi @ pi if prob.q else 0.0)     # (N, m)
    continuous_sup = float(np.max(np.linalg.norm(pointwise, axis=1), initial=0.0))
    return OptimalityResiduals(
        param_residual=param_residual,
        tf_residual=tf_residual,
        continuous_residual_sup=continuous_sup,
        feasibility=float(np.linalg.norm(g_val)))


def continuous_multiplier(prob: OcpProblem, bundle: AdjointBundle, gains: Gains,
                          g_val, quad: QuadratureSpec | None = None) -> np.ndarray:
    """Multiplier of the non-parameterized theory (no basis involved).

    pi_c = -M_c^-1 r_c with M_c = int (f_u^T Psi)^T K (f_u^T Psi) dt and
    r_c = int (f_u^T Psi)^T K p_u dt - K_g g, plus the terminal-time rank-one
    terms when t_f is free.  Used to certify the parameterized multiplier.
    """
    g_val = np.asarray(g_val, dtype=float)
    if prob.q == 0:
        return np.zeros(0)
    quad = quad or QuadratureSpec()
    t_f = bundle.t_f
    ts, w = simpson_points(bundle.t0, t_f, quad)
    xs = bundle.x_at(ts)
    psis = bundle.psi_at(ts)
    mus = bundle.mu_traj(ts)

    if prob.vectorized:
        us = np.stack([np.atleast_1d(np.asarray(bundle.u_of_t(t), float)) for t in ts])
        fu = np.asarray(prob.f_u(xs, us, ts), dtype=float)
        lu = np.asarray(prob.L_u(xs, us, ts), dtype=float)
    else:
        fu, lu, us = [], [], []
        for i, t in enumerate(ts):
            u = np.atleast_1d(np.asarray(bundle.u_of_t(t), float))
            us.append(u)
            fu.append(np.asarray(prob.f_u(xs[i], u, t), dtype=float))
            lu.append(np.asarray(prob.L_u(xs[i], u, t), dtype=float))
        fu, lu = np.stack(fu), np.stack(lu)
    fupsi = np.einsum("tnm,tnq->tmq", fu, psis)
    pu = lu + np.einsum("tnm,tn->tm", fu, mus)
    Kt = gains.K_at(ts)

    M_c = np.einsum("t,tmq,tmn,tnr->qr", w, fupsi, Kt, fupsi)
    r_c = np.einsum("t,tmq,tmn,tn->q", w, fupsi, Kt, pu)
    if prob.tf_mode == "free" and gains.k_tf > 0:
        tf_scalar, tf_row = _terminal_values(prob, bundle)
        M_c = M_c + gains.k_tf * np.outer(tf_row, tf_row)
        r_c = r_c + gains.k_tf * tf_row * tf_scalar
    r_c = r_c - gains.K_g @ g_val
    return -spd_solve(M_c, r_c, "continuous multiplier system")

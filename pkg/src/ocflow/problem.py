"""Optimal control problem definition, gains, and simulation-based values.

An :class:`OcpProblem` bundles the dynamics, running/terminal costs and the
terminal constraint together with their analytic first derivatives.  The
derivatives are trusted inside the solver; :func:`validate_problem` checks
them against central finite differences so a bad Jacobian fails loudly up
front instead of silently bending gradients.

The cost integral is accumulated as an extra state during the forward solve,
so its accuracy is tied to the adaptive integrator rather than to a separate
quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigurationError, DerivativeMismatchError, DimensionError
from .integrate import DenseSolution, OdeSettings, integrate_ivp


@dataclass(frozen=True)
class OcpProblem:
    """Bolza problem: minimize phi(x(t_f), t_f) + int L dt s.t. x' = f, g(x_f, t_f) = 0.

    Evaluators take per-point arguments ``(x, u, t)`` (dynamics/running cost)
    or ``(x_f, t_f)`` (terminal cost/constraint).  With ``vectorized=True``
    they must also accept stacked inputs ``(N, n), (N, m), (N,)`` and return
    stacked outputs; the quadrature layer exploits this.

    ``q = 0`` (no terminal constraint) is allowed: ``g`` returns an empty
    vector and the multiplier machinery degenerates gracefully.
    """

    n: int
    m: int
    q: int
    t0: float
    x0: np.ndarray
    tf_mode: str                       # "fixed" | "free"
    f: Callable
    f_x: Callable
    f_u: Callable
    L: Callable
    L_x: Callable
    L_u: Callable
    phi: Callable
    phi_x: Callable
    phi_t: Callable
    g: Callable
    g_x: Callable
    g_t: Callable
    tf_fixed: float | None = None      # required iff tf_mode == "fixed"
    vectorized: bool = False
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))
        if self.x0.shape != (self.n,):
            raise DimensionError(f"x0 has shape {self.x0.shape}, expected ({self.n},)")
        if self.tf_mode not in ("fixed", "free"):
            raise ConfigurationError(f"tf_mode must be 'fixed' or 'free', got {self.tf_mode!r}")
        if self.tf_mode == "fixed":
            if self.tf_fixed is None:
                raise ConfigurationError("tf_mode='fixed' requires tf_fixed")
            if self.tf_fixed <= self.t0:
                raise ConfigurationError("tf_fixed must exceed t0")
        if self.q < 0:
            raise ConfigurationError("q must be >= 0")


@dataclass(frozen=True)
class Gains:
    """Evolution gains: inverse control weight, terminal-time and constraint gains.

    ``K_inv(t)`` is the m x m symmetric positive-definite *inverse* control
    weight.  ``k_tf`` scales the terminal-time equation (forced to zero by the
    solver when t_f is fixed).  ``K_g`` sets the exponential decay rate of the
    terminal-constraint violation.  ``K_theta`` is only used by the
    gradient-flow mode.
    """

    K_inv: Callable[[float], np.ndarray]
    k_tf: float
    K_g: np.ndarray
    K_theta: np.ndarray | None = None
    K_inv_const: np.ndarray | None = None   # set when K_inv is time-invariant

    @classmethod
    def constant(cls, K, m: int, q: int, *, k_tf: float = 0.0, K_g=0.1,
                 K_theta=None) -> "Gains":
        """Build time-invariant gains from scalars or matrices.

        ``K`` is the control weight (its inverse enters the Gram matrix);
        scalars are promoted to multiples of the identity.
        """
        K = np.atleast_2d(np.asarray(K, dtype=float))
        if K.shape == (1, 1) and m != 1:
            K = K[0, 0] * np.eye(m)
        _require_spd(K, "K")
        K_inv_const = np.linalg.inv(K)
        K_g = np.atleast_2d(np.asarray(K_g, dtype=float))
        if q == 0:
            K_g = np.zeros((0, 0))
        elif K_g.shape == (1, 1) and q != 1:
            K_g = K_g[0, 0] * np.eye(q)
        if q > 0:
            _require_spd(K_g, "K_g")
        if K_theta is not None:
            K_theta = np.atleast_2d(np.asarray(K_theta, dtype=float))
            _require_spd(K_theta, "K_theta")
        if k_tf < 0:
            raise ConfigurationError("k_tf must be >= 0")
        return cls(K_inv=lambda t: K_inv_const, k_tf=float(k_tf), K_g=K_g,
                   K_theta=K_theta, K_inv_const=K_inv_const)

    def K_inv_at(self, ts: np.ndarray) -> np.ndarray:
        """Inverse control weight stacked over an array of times: (N, m, m)."""
        ts = np.atleast_1d(ts)
        if self.K_inv_const is not None:
            return np.broadcast_to(self.K_inv_const, (ts.size, *self.K_inv_const.shape))
        return np.stack([np.asarray(self.K_inv(t), dtype=float) for t in ts])

    def K_at(self, ts: np.ndarray) -> np.ndarray:
        """Control weight K(t) = K_inv(t)^-1 stacked over times: (N, m, m)."""
        if self.K_inv_const is not None:
            K = np.linalg.inv(self.K_inv_const)
            return np.broadcast_to(K, (np.atleast_1d(ts).size, *K.shape))
        return np.linalg.inv(self.K_inv_at(ts))


def _require_spd(M: np.ndarray, name: str) -> None:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ConfigurationError(f"{name} must be square, got shape {M.shape}")
    if not np.allclose(M, M.T, rtol=1e-12, atol=1e-12):
        raise ConfigurationError(f"{name} must be symmetric")
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise ConfigurationError(f"{name} must be positive-definite") from None


@dataclass
class SolveReport:
    """Final certified iterate of one evolution solve."""

    p_final: np.ndarray
    tf_final: float
    pi_final: np.ndarray
    J_final: float
    residual_norm: float
    g_norm: float
    converged: bool
    tau_reached: float
    wall_time: float

    def as_dict(self) -> dict:
        return {
            "p_final": [float(v) for v in self.p_final],
            "tf_final": float(self.tf_final),
            "pi_final": [float(v) for v in self.pi_final],
            "J_final": float(self.J_final),
            "residual_norm": float(self.residual_norm),
            "g_norm": float(self.g_norm),
            "converged": bool(self.converged),
            "tau_reached": float(self.tau_reached),
            "wall_time": float(self.wall_time),
        }


@dataclass
class TraceRow:
    tau: float
    p: np.ndarray
    t_f: float
    pi: np.ndarray
    J: float
    g_norm: float
    residual_norm: float
    V: float


@dataclass
class SolveTrace:
    """Per-tau history of the evolution (rows at >= record_every spacing)."""

    rows: list[TraceRow] = field(default_factory=list)

    def append(self, row: TraceRow) -> None:
        if self.rows and row.tau <= self.rows[-1].tau:
            raise ValueError("trace taus must be strictly increasing")
        self.rows.append(row)

    def taus(self) -> np.ndarray:
        return np.array([r.tau for r in self.rows])

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])


@dataclass
class ValidationReport:
    """Per-evaluator maximum relative derivative errors over the samples."""

    samples: int
    errors: dict[str, float]

    def max_error(self) -> float:
        return max(self.errors.values())


_EXPECTED_SHAPES = {
    "f": lambda p: (p.n,), "f_x": lambda p: (p.n, p.n), "f_u": lambda p: (p.n, p.m),
    "L": lambda p: (), "L_x": lambda p: (p.n,), "L_u": lambda p: (p.m,),
    "phi": lambda p: (), "phi_x": lambda p: (p.n,), "phi_t": lambda p: (),
    "g": lambda p: (p.q,), "g_x": lambda p: (p.q, p.n), "g_t": lambda p: (p.q,),
}


def _check_shapes(prob: OcpProblem, x, u, t, tf) -> None:
    for name in ("f", "f_x", "f_u", "L", "L_x", "L_u"):
        out = np.asarray(getattr(prob, name)(x, u, t), dtype=float)
        want = _EXPECTED_SHAPES[name](prob)
        if out.shape != want:
            raise DimensionError(f"{name} returned shape {out.shape}, expected {want}")
    for name in ("phi", "phi_x", "phi_t", "g", "g_x", "g_t"):
        out = np.asarray(getattr(prob, name)(x, tf), dtype=float)
        want = _EXPECTED_SHAPES[name](prob)
        if out.shape != want:
            raise DimensionError(f"{name} returned shape {out.shape}, expected {want}")


def _central_diff(fun, z0, h=1e-5):
    """Jacobian of fun at z0 by central differences; columns index z."""
    z0 = np.asarray(z0, dtype=float)
    cols = []
    for i in range(z0.size):
        dz = np.zeros_like(z0)
        dz[i] = h * max(1.0, abs(z0[i]))
        hi = np.asarray(fun(z0 + dz), dtype=float)
        lo = np.asarray(fun(z0 - dz), dtype=float)
        cols.append((hi - lo) / (2 * dz[i]))
    return np.stack(cols, axis=-1)


def validate_problem(prob: OcpProblem, samples: int, *, tol: float = 1e-4,
                     seed: int = 0) -> ValidationReport:
    """Check every analytic derivative against central finite differences.

    Raises :class:`DimensionError` on shape mismatches and
    :class:`DerivativeMismatchError` when any derivative disagrees with the
    finite-difference probe beyond ``tol`` (relative).  Returns the error
    table otherwise.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    horizon = (prob.tf_fixed - prob.t0) if prob.tf_fixed is not None else 1.0

    def rel(an, fd):
        an, fd = np.asarray(an, float), np.asarray(fd, float)
        scale = max(1.0, np.abs(an).max(initial=0.0), np.abs(fd).max(initial=0.0))
        return np.abs(an - fd).max(initial=0.0) / scale

    worst: dict[str, float] = {}
    for k in range(samples):
        x = prob.x0 + rng.uniform(-1.0, 1.0, prob.n)
        u = rng.uniform(-1.0, 1.0, prob.m)
        t = prob.t0 + rng.uniform(0.1, 0.9) * horizon
        tf = prob.t0 + rng.uniform(0.5, 1.5) * horizon
        if k == 0:
            _check_shapes(prob, x, u, t, tf)

        checks = {
            "f_x": (prob.f_x(x, u, t), _central_diff(lambda z: prob.f(z, u, t), x)),
            "f_u": (prob.f_u(x, u, t), _central_diff(lambda z: prob.f(x, z, t), u)),
            "L_x": (prob.L_x(x, u, t), _central_diff(lambda z: prob.L(z, u, t), x)),
            "L_u": (prob.L_u(x, u, t), _central_diff(lambda z: prob.L(x, z, t), u)),
            "phi_x": (prob.phi_x(x, tf), _central_diff(lambda z: prob.phi(z, tf), x)),
            "phi_t": (prob.phi_t(x, tf),
                      _central_diff(lambda z: prob.phi(x, z[0]), np.array([tf]))[..., 0]),
            "g_x": (prob.g_x(x, tf), _central_diff(lambda z: prob.g(z, tf), x)),
            "g_t": (prob.g_t(x, tf),
                    _central_diff(lambda z: prob.g(x, z[0]), np.array([tf]))[..., 0]),
        }
        for name, (an, fd) in checks.items():
            err = rel(an, fd)
            worst[name] = max(worst.get(name, 0.0), err)
            if err > tol:
                raise DerivativeMismatchError(
                    f"{name} disagrees with finite differences: relative error "
                    f"{err:.3e} > {tol:.1e} at x={x!r}, u={u!r}, t={t!r}")
    return ValidationReport(samples=samples, errors=worst)


def simulate_control(prob: OcpProblem, u_of_t, t_f: float,
                     ode: OdeSettings | None = None,
                     breakpoints=()) -> tuple[DenseSolution, float, np.ndarray]:
    """Forward solve under an arbitrary control; returns (solution, J, g).

    The returned dense solution has n+1 channels: the state plus the running
    cost accumulated as an augmented state.
    """
    if t_f <= prob.t0:
        raise ValueError("t_f must exceed t0")
    n = prob.n

    def rhs(t, ya):
        x = ya[:n]
        u = np.atleast_1d(np.asarray(u_of_t(t), dtype=float))
        return np.concatenate([prob.f(x, u, t), [prob.L(x, u, t)]])

    y0 = np.concatenate([prob.x0, [0.0]])
    sol = integrate_ivp(rhs, y0, (prob.t0, t_f), ode or OdeSettings(),
                        breakpoints=breakpoints)
    yf = sol(t_f)
    x_f, cost = yf[:n], yf[n]
    J = float(prob.phi(x_f, t_f)) + cost
    g_val = np.asarray(prob.g(x_f, t_f), dtype=float)
    return sol, J, g_val


def objective_value(prob: OcpProblem, u_of_t, t_f: float,
                    ode: OdeSettings | None = None, breakpoints=()) -> float:
    """J = phi(x(t_f), t_f) + int L dt under the given control."""
    _, J, _ = simulate_control(prob, u_of_t, t_f, ode, breakpoints)
    return J


def constraint_value(prob: OcpProblem, u_of_t, t_f: float,
                     ode: OdeSettings | None = None, breakpoints=()) -> np.ndarray:
    """Terminal-constraint value g(x(t_f), t_f) from the simulated state."""
    _, _, g_val = simulate_control(prob, u_of_t, t_f, ode, breakpoints)
    return g_val

"""Weighted least-squares projection onto a finite function subspace.

Given a time-varying SPD weight W(t) and basis columns assembled in A(t),
the projection of a vector function f minimizes the weighted L2 distance;
its coordinates solve the Gram system

    (int A^T W A dt) x = int A^T W f dt.

With the basis K^-1 u_p and weight K, the Gram matrix is exactly the
evolution matrix M_p, which turns the parameter stationarity condition into
a statement about function projections: the projected control gradient must
be cancelled by the projected constraint sensitivities.  Both readings of
that residual are computed here on the same grid so they vanish together.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import DependentBasisError
from .quadrature import QuadratureSpec, simpson_points


@dataclass(frozen=True)
class InnerProductSpec:
    """<f, g> = int_t0^tf f^T W(t) g dt on the given grid.

    ``weight`` is either a constant SPD matrix (or scalar) or a callable
    t -> matrix; ``breakpoints`` split quadrature panels where integrands are
    not smooth.
    """

    t0: float
    t_f: float
    weight: object
    quad: QuadratureSpec = QuadratureSpec()
    breakpoints: tuple = ()

    def grid(self) -> tuple[np.ndarray, np.ndarray]:
        return simpson_points(self.t0, self.t_f, self.quad, self.breakpoints)

    def weight_at(self, ts: np.ndarray) -> np.ndarray:
        if callable(self.weight):
            return np.stack([np.atleast_2d(np.asarray(self.weight(t), float))
                             for t in ts])
        W = np.atleast_2d(np.asarray(self.weight, dtype=float))
        return np.broadcast_to(W, (ts.size, *W.shape))


@dataclass(frozen=True)
class BasisSet:
    """Columns a_1(t) ... a_k(t) assembled by A(t); A(ts) -> (N, d, k)."""

    A: Callable
    k: int

    def at(self, ts: np.ndarray) -> np.ndarray:
        out = np.asarray(self.A(ts), dtype=float)
        if out.ndim == 2:            # scalar-valued basis: (N, k) -> (N, 1, k)
            out = out[:, None, :]
        return out


def _as_batch_fn(f: Callable) -> Callable:
    def at(ts):
        out = np.asarray(f(ts), dtype=float)
        if out.ndim == 1:
            out = out[:, None]
        return out
    return at


def gram_matrix(spec: InnerProductSpec, basis: BasisSet) -> np.ndarray:
    ts, w = spec.grid()
    A = basis.at(ts)
    W = spec.weight_at(ts)
    return np.einsum("t,tdi,tde,tej->ij", w, A, W, A)


def project(spec: InnerProductSpec, basis: BasisSet, f: Callable):
    """Least-squares coordinates and the projected function.

    Returns ``(coords, projection)`` where ``projection(ts)`` evaluates
    A(ts) @ coords.  Raises :class:`DependentBasisError` when the Gram matrix
    is numerically singular.
    """
    ts, w = spec.grid()
    A = basis.at(ts)
    W = spec.weight_at(ts)
    gram = np.einsum("t,tdi,tde,tej->ij", w, A, W, A)
    rhs = np.einsum("t,tdi,tde,te->i", w, A, W, _as_batch_fn(f)(ts))
    try:
        coords = cho_solve(cho_factor(gram, lower=True), rhs)
    except (LinAlgError, np.linalg.LinAlgError):
        raise DependentBasisError(
            "projection Gram matrix is singular; basis columns are dependent") from None

    def projection(t):
        tt = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.einsum("tdi,i->td", basis.at(tt), coords)
        return out[0] if np.ndim(t) == 0 else out

    return coords, projection


def weighted_norm(spec: InnerProductSpec, f: Callable) -> float:
    """L2(W) norm of a vector function, by the shared quadrature."""
    ts, w = spec.grid()
    vals = _as_batch_fn(f)(ts)
    W = spec.weight_at(ts)
    sq = np.einsum("t,td,tde,te->", w, vals, W, vals)
    return float(np.sqrt(max(sq, 0.0)))


@dataclass
class DualResidualReport:
    """Dual readings of the parameter stationarity residual.

    ``function_residual_norm`` is the L2(W) norm of
    Pro_S(p_u) + Pro_S(f_u^T Psi) pi; ``coord_residual`` its coordinates in
    the basis, which equal M_p^-1 (r_1p + Gamma_1p pi).  The two vanish
    together (they differ by an SPD change of metric).
    """

    function_residual_norm: float
    coord_residual: np.ndarray
    coord_residual_norm: float


def projected_stationarity_check(spec: InnerProductSpec, u_p_basis: BasisSet, p_u_fn: Callable,
                   psi_fn: Callable, pi) -> DualResidualReport:
    """Project the stationarity condition onto the control basis.

    ``u_p_basis`` holds the columns of K^-1 u_p, ``p_u_fn`` the pointwise
    cost gradient, ``psi_fn`` the pointwise constraint sensitivity
    f_u^T Psi (shape (N, m, q)), and ``pi`` the multiplier.
    """
    pi = np.asarray(pi, dtype=float)
    coords_pu, _ = project(spec, u_p_basis, p_u_fn)
    if pi.size:
        ts, w = spec.grid()
        A = u_p_basis.at(ts)
        W = spec.weight_at(ts)
        gram = np.einsum("t,tdi,tde,tej->ij", w, A, W, A)
        rhs_cols = np.einsum("t,tdi,tde,teq->iq", w, A, W,
                             np.asarray(psi_fn(ts), dtype=float))
        coords_psi = cho_solve(cho_factor(gram, lower=True), rhs_cols)
        coord_residual = coords_pu + coords_psi @ pi
    else:
        coord_residual = coords_pu

    def residual_fn(ts):
        return np.einsum("tdi,i->td", u_p_basis.at(np.atleast_1d(ts)), coord_residual)

    return DualResidualReport(
        function_residual_norm=weighted_norm(spec, residual_fn),
        coord_residual=coord_residual,
        coord_residual_norm=float(np.linalg.norm(coord_residual)))

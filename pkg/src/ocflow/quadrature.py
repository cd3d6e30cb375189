"""Composite Simpson quadrature on panels aligned with control breakpoints.

All time integrals in the solver (Gram matrices, gradient and constraint
integrals, projections) run through this module so that quantities built on
the *same grid* agree to round-off, not merely to quadrature error.  The grid
is described by an odd node count on a uniform partition; callers may pass
extra breakpoints (control nodes of piecewise bases) that split panels so the
integrand stays smooth panel by panel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class QuadratureSpec:
    """Uniform composite-Simpson grid: ``nodes`` must be odd and >= 3."""

    nodes: int = 201

    def __post_init__(self):
        if self.nodes < 3 or self.nodes % 2 == 0:
            raise ValueError(f"nodes must be an odd integer >= 3, got {self.nodes}")


def panel_edges(t0: float, t_f: float, spec: QuadratureSpec,
                breakpoints=()) -> np.ndarray:
    """Panel boundaries: uniform edges merged with interior breakpoints."""
    n_panels = (spec.nodes - 1) // 2
    edges = np.linspace(t0, t_f, n_panels + 1)
    extra = np.asarray(breakpoints, dtype=float)
    if extra.size:
        lo, hi = min(t0, t_f), max(t0, t_f)
        extra = extra[(extra > lo) & (extra < hi)]
        edges = np.union1d(edges, extra)
        # drop near-duplicates introduced by the union
        tol = 1e-12 * max(1.0, abs(t_f - t0))
        keep = np.concatenate([[True], np.diff(edges) > tol])
        edges = edges[keep]
        if t0 > t_f:
            edges = edges[::-1]
    return edges


def simpson_points(t0: float, t_f: float, spec: QuadratureSpec,
                   breakpoints=()) -> tuple[np.ndarray, np.ndarray]:
    """Evaluation points and weights for the 3-point rule on each panel.

    Returns ``(points, weights)`` with one (left, mid, right) triple per
    panel; ``sum(w * f(points))`` is the composite Simpson integral.  Panel
    endpoints are nudged one ulp into the panel so a one-sided discontinuity
    sitting exactly on a panel edge (a breakpoint of a step control) is
    integrated with the branch that actually rules the panel interior.
    """
    edges = panel_edges(t0, t_f, spec, breakpoints)
    a, b = edges[:-1], edges[1:]
    pts = np.stack([np.nextafter(a, b), 0.5 * (a + b), np.nextafter(b, a)],
                   axis=1).reshape(-1)
    h = (b - a) / 6.0
    w = np.stack([h, 4.0 * h, h], axis=1).reshape(-1)
    return pts, w

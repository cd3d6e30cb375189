"""Batch front end: solve problems from a JSON config, emit plot-ready files.

Subcommands::

    ocflow solve --config run.json [--out DIR]
    ocflow check --config run.json --what {gradients,projection,all}
    ocflow list-problems

``solve`` writes trace.csv, trajectory.csv, costates.csv and report.json to
the output directory and exits 0 on convergence, 4 when tau_max was reached
first (files are still written), 2 on config errors, 3 on solver failures.
``check`` runs the finite-difference gradient oracle and the projection
invariants at the config's initial point, writes checks.json, and exits 5 if
any check fails.  Numbers in the CSV files carry 17 significant digits so a
parse round-trips bit-exactly.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .costate import reconstruct_costate
from .errors import OcflowError
from .evolution import EvolutionMode, EvolutionState, StopCriteria, solve_evolution
from .integrate import OdeSettings
from .parameterization import FORM1, FORM2, make_basis
from .problem import Gains, SolveTrace, constraint_value, objective_value
from .problems import get_problem, list_problems
from .projection import BasisSet, InnerProductSpec, project, weighted_norm
from .quadrature import QuadratureSpec
from .sensitivity import assemble_form2, nlp_gradients, solve_adjoints, solve_state

_FMT = "%.17g"


class ConfigError(Exception):
    """Invalid run configuration (reported with exit code 2)."""


def _fmt(x: float) -> str:
    return _FMT % float(x)


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def _get(d: dict, key: str, default=None):
    return d[key] if key in d else default


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path!r} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    return raw


def build_run(raw: dict):
    """Resolve a config dict into solver objects.

    Returns (problem bundle, parameterization, gains, mode, init, stop,
    ode_inner, ode_outer, quad, out_dir).
    """
    name = _get(raw, "problem")
    _require(isinstance(name, str), "config needs a 'problem' name")
    try:
        bundle = get_problem(name)
    except KeyError as exc:
        raise ConfigError(str(exc)) from None
    prob = bundle.prob

    mode_name = _get(raw, "mode", "form1")
    _require(mode_name in ("form1", "form2", "gradient_flow"),
             f"mode must be form1|form2|gradient_flow, got {mode_name!r}")

    par_cfg = dict(_get(raw, "parameterization") or bundle.recommended)
    kind = par_cfg.get("kind")
    _require(kind is not None, "parameterization needs a 'kind'")
    form = FORM2 if mode_name == "form2" else FORM1
    try:
        par = make_basis(kind, m=prob.m, t0=prob.t0, form=form,
                         order=par_cfg.get("order"),
                         n_segments=par_cfg.get("N", par_cfg.get("n_segments")))
    except OcflowError as exc:
        raise ConfigError(f"parameterization: {exc}") from None

    g_cfg = dict(_get(raw, "gains") or {})
    k_tf = float(_get(g_cfg, "k_tf", 0.1 if prob.tf_mode == "free" else 0.0))
    try:
        gains = Gains.constant(
            K=_get(g_cfg, "K", 0.1), m=prob.m, q=prob.q, k_tf=k_tf,
            K_g=_get(g_cfg, "K_g", 0.1), K_theta=_get(g_cfg, "K_theta"))
    except OcflowError as exc:
        raise ConfigError(f"gains: {exc}") from None

    init_cfg = dict(_get(raw, "init") or {})
    p0 = init_cfg.get("p", "zeros")
    if isinstance(p0, str):
        _require(p0 == "zeros", f"init.p must be a vector or 'zeros', got {p0!r}")
        p0 = np.zeros(par.s)
    else:
        try:
            p0 = np.asarray(p0, dtype=float)
        except (TypeError, ValueError):
            raise ConfigError(f"init.p is not a numeric vector: {p0!r}") from None
        _require(p0.shape == (par.s,),
                 f"init.p has {p0.size} entries, the basis needs {par.s}")
    try:
        t_f0 = float(init_cfg.get("t_f",
                                  prob.tf_fixed if prob.tf_mode == "fixed" else 1.0))
    except (TypeError, ValueError):
        raise ConfigError(f"init.t_f is not a number: {init_cfg.get('t_f')!r}") from None
    init = EvolutionState(p=p0, t_f=t_f0)

    stop_cfg = dict(_get(raw, "stop") or {})
    try:
        stop = StopCriteria(
            tau_max=float(_get(stop_cfg, "tau_max", 300.0)),
            tol_opt=float(_get(stop_cfg, "tol_opt", 1e-6)),
            tol_feas=float(_get(stop_cfg, "tol_feas", 1e-6)),
            record_every=float(_get(stop_cfg, "record_every", 1.0)),
            c1=float(_get(stop_cfg, "c1", 0.01)),
            pi_bound=float(_get(stop_cfg, "pi_bound", 1e6)))
    except ValueError as exc:
        raise ConfigError(f"stop: {exc}") from None

    def ode_from(key):
        cfg = dict(_get(raw, key) or {})
        try:
            return OdeSettings(
                rel_tol=float(_get(cfg, "rel_tol", 1e-3)),
                abs_tol=float(_get(cfg, "abs_tol", 1e-6)),
                max_steps=int(_get(cfg, "max_steps", 100_000)),
                initial_step=cfg.get("initial_step"))
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from None

    ode_inner, ode_outer = ode_from("ode_inner"), ode_from("ode_outer")

    try:
        quad = QuadratureSpec(nodes=int(_get(raw, "quad_nodes", 201)))
    except ValueError as exc:
        raise ConfigError(f"quad_nodes: {exc}") from None

    mode = {"form1": EvolutionMode.form1, "form2": EvolutionMode.form2,
            "gradient_flow": lambda: EvolutionMode.gradient_flow(gains.K_theta)}[mode_name]()
    out_dir = _get(raw, "out_dir", "out")
    return bundle, par, gains, mode, init, stop, ode_inner, ode_outer, quad, out_dir


def _write_trace(path: Path, trace: SolveTrace, s: int, q: int) -> None:
    cols = (["tau"] + [f"p_{i}" for i in range(s)] + ["t_f"]
            + [f"pi_{i}" for i in range(q)]
            + ["J", "g_norm", "residual_norm", "V"])
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for r in trace.rows:
            vals = [r.tau, *r.p, r.t_f, *r.pi, r.J, r.g_norm, r.residual_norm, r.V]
            fh.write(",".join(_fmt(v) for v in vals) + "\n")


def _write_columns(path: Path, header: list[str], rows: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def cmd_solve(args) -> int:
    raw = load_config(args.config)
    if args.out is not None:
        raw["out_dir"] = args.out
    (bundle, par, gains, mode, init, stop, ode_inner, ode_outer, quad,
     out_dir) = build_run(raw)
    prob = bundle.prob

    report, trace, adj = solve_evolution(mode, prob, par, gains, init, stop,
                                         ode_outer=ode_outer, ode_inner=ode_inner,
                                         quad=quad)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_trace(out / "trace.csv", trace, par.s, prob.q)

    ts = np.linspace(prob.t0, report.tf_final, 401)
    xs = adj.x_at(ts)
    us = par.eval(ts, report.p_final, report.tf_final)
    _write_columns(out / "trajectory.csv",
                   ["t"] + [f"x_{i}" for i in range(prob.n)]
                   + [f"u_{i}" for i in range(prob.m)],
                   np.column_stack([ts, xs, us]))

    lam = reconstruct_costate(prob, adj, report.pi_final).lam_traj(ts)
    _write_columns(out / "costates.csv",
                   ["t"] + [f"lambda_{i}" for i in range(prob.n)],
                   np.column_stack([ts, lam]))

    with open(out / "report.json", "w") as fh:
        json.dump(report.as_dict(), fh, indent=2)
        fh.write("\n")
    print(f"{'converged' if report.converged else 'NOT converged'} at tau = "
          f"{report.tau_reached:g} (residual {report.residual_norm:.3e}, "
          f"||g|| {report.g_norm:.3e}); wrote {out}/")
    return 0 if report.converged else 4


def _check_gradients(prob, par, gains, init, quad) -> list[dict]:
    """Adjoint-assembled gradients vs central differences of simulated values."""
    ode = OdeSettings(rel_tol=1e-10, abs_tol=1e-12)
    p, t_f = init.p, init.t_f
    x_traj = solve_state(prob, par, p, t_f, ode)
    bund = solve_adjoints(prob, par, p, x_traj, t_f, ode)
    if par.form == FORM2:
        # for a t_f-dependent basis the theta-gradients are the form-2 vectors
        q2 = assemble_form2(prob, par, bund, gains, p, t_f, quad)
        f_theta, g_theta = q2.r_2ptf, q2.Gamma_2ptf.T
    else:
        grads = nlp_gradients(prob, par, bund, p, t_f, quad)
        f_theta, g_theta = grads.f_theta, grads.g_theta

    def J_of(pv, tfv):
        return objective_value(prob, lambda t: par.eval(t, pv, tfv), tfv, ode,
                               breakpoints=par.breakpoints(tfv))

    def g_of(pv, tfv):
        return constraint_value(prob, lambda t: par.eval(t, pv, tfv), tfv, ode,
                                breakpoints=par.breakpoints(tfv))

    results = []
    h = 1e-4
    fd_f = np.empty(par.s + 1)
    fd_g = np.empty((prob.q, par.s + 1))
    for i in range(par.s):
        dp = np.zeros(par.s)
        dp[i] = h * max(1.0, abs(p[i]))
        fd_f[i] = (J_of(p + dp, t_f) - J_of(p - dp, t_f)) / (2 * dp[i])
        fd_g[:, i] = (g_of(p + dp, t_f) - g_of(p - dp, t_f)) / (2 * dp[i])
    dtf = h * max(1.0, abs(t_f))
    fd_f[par.s] = (J_of(p, t_f + dtf) - J_of(p, t_f - dtf)) / (2 * dtf)
    fd_g[:, par.s] = (g_of(p, t_f + dtf) - g_of(p, t_f - dtf)) / (2 * dtf)

    tol = 1e-3
    scale_f = max(1.0, float(np.abs(fd_f).max()))
    err_f = float(np.abs(f_theta - fd_f).max()) / scale_f
    results.append({"name": "objective_gradient_vs_fd", "value": err_f,
                    "tol": tol, "passed": err_f <= tol})
    if prob.q:
        scale_g = max(1.0, float(np.abs(fd_g).max()))
        err_g = float(np.abs(g_theta - fd_g).max()) / scale_g
        results.append({"name": "constraint_jacobian_vs_fd", "value": err_g,
                        "tol": tol, "passed": err_g <= tol})
    return results


def _check_projection(prob, init, quad) -> list[dict]:
    """Idempotence, residual orthogonality and the norm identity, randomized."""
    rng = np.random.default_rng(0)
    t0, t_f = prob.t0, init.t_f
    spec = InnerProductSpec(t0=t0, t_f=t_f, weight=np.eye(1), quad=quad)
    results = []
    worst = {"idempotence": 0.0, "orthogonality": 0.0, "pythagoras": 0.0}
    for _ in range(10):
        coeff = rng.uniform(-1, 1, (3, 4))
        basis = BasisSet(
            A=lambda ts, c=coeff: np.stack(
                [np.vander(ts, 4, increasing=True) @ c[j] for j in range(3)],
                axis=-1)[:, None, :],
            k=3)
        fc = rng.uniform(-1, 1, 6)
        f = lambda ts, fc=fc: (np.vander(ts, 6, increasing=True) @ fc)[:, None]
        coords, proj = project(spec, basis, f)
        coords2, _ = project(spec, basis, lambda ts: proj(ts))
        worst["idempotence"] = max(worst["idempotence"],
                                   float(np.abs(coords - coords2).max()))
        ts, w = spec.grid()
        resid = f(ts) - proj(ts)
        A = basis.at(ts)
        ortho = np.einsum("t,tdk,td->k", w, A, resid)
        worst["orthogonality"] = max(worst["orthogonality"], float(np.abs(ortho).max()))
        n_f = weighted_norm(spec, f)
        n_p = weighted_norm(spec, lambda ts: proj(ts))
        n_r = weighted_norm(spec, lambda ts: f(ts) - proj(ts))
        worst["pythagoras"] = max(worst["pythagoras"],
                                  abs(n_f**2 - n_p**2 - n_r**2))
    for name, val in worst.items():
        results.append({"name": f"projection_{name}", "value": val,
                        "tol": 1e-8, "passed": val <= 1e-8})
    return results


def cmd_check(args) -> int:
    raw = load_config(args.config)
    (bundle, par, gains, mode, init, stop, ode_inner, ode_outer, quad,
     out_dir) = build_run(raw)
    prob = bundle.prob

    results = []
    if args.what in ("gradients", "all"):
        results += _check_gradients(prob, par, gains, init, quad)
    if args.what in ("projection", "all"):
        results += _check_projection(prob, init, quad)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "checks.json", "w") as fh:
        json.dump({"what": args.what, "checks": results}, fh, indent=2)
        fh.write("\n")
    failures = [r for r in results if not r["passed"]]
    for r in results:
        print(f"{'PASS' if r['passed'] else 'FAIL'}  {r['name']}: "
              f"{r['value']:.3e} (tol {r['tol']:.1e})")
    if failures:
        print(f"{len(failures)} check(s) failed", file=sys.stderr)
        return 5
    return 0


def cmd_list_problems(_args) -> int:
    for name in list_problems():
        print(name)
    return 0


def run_solve(config_path: str, out_dir: str | None = None) -> int:
    """Programmatic equivalent of ``ocflow solve``; returns the exit status."""
    return main(["solve", "--config", config_path]
                + (["--out", out_dir] if out_dir else []))


def run_check(config_path: str, what: str = "all") -> int:
    """Programmatic equivalent of ``ocflow check``; returns the exit status."""
    return main(["check", "--config", config_path, "--what", what])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ocflow",
        description="Direct-shooting optimal control by virtual-time gradient flow")
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="run one solve from a JSON config")
    p_solve.add_argument("--config", required=True)
    p_solve.add_argument("--out", default=None, help="override config out_dir")
    p_solve.set_defaults(fn=cmd_solve)

    p_check = sub.add_parser("check", help="run gradient/projection oracles")
    p_check.add_argument("--config", required=True)
    p_check.add_argument("--what", choices=("gradients", "projection", "all"),
                         default="all")
    p_check.set_defaults(fn=cmd_check)

    p_list = sub.add_parser("list-problems", help="list built-in problem names")
    p_list.set_defaults(fn=cmd_list_problems)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OcflowError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

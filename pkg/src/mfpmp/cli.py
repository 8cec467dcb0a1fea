"""Command-line entry point: ``mfpmp <command> --scenario FILE``.

Exit codes: 0 when every check holds, 1 when a check is violated,
2 on usage or scenario errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from .controls import ControlSignal
from .dynamics import SimulationError
from .optimizer import optimize, total_cost
from .pmp import (costate_backward, default_candidates, hamiltonian_curve,
                  k_function, maximization_check, stationarity_check,
                  terminal_structure_error)
from .scenario import Scenario, ScenarioError, parse_scenario
from .transport import kr_duality_gap, wasserstein
from .variations import first_order_condition, needle_grid

COMMANDS = ("simulate", "ot", "needle", "extremal", "check", "optimize")
log = logging.getLogger("mfpmp")


class UsageError(Exception):
    pass


# -- output helpers -----------------------------------------------------------

def _fmt(v) -> str:
    return repr(float(v))


def trajectory_csv(trajectory, costates: Optional[np.ndarray] = None) -> str:
    n, d = trajectory.positions.shape[1:]
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    head = ["time", "particle_index"] + [f"x{a}" for a in range(d)]
    if costates is not None:
        head += [f"r{a}" for a in range(d)]
    wr.writerow(head + ["weight"])
    for k, t in enumerate(trajectory.times):
        for i in range(n):
            row = [_fmt(t), str(i)] + [_fmt(v) for v in trajectory.positions[k, i]]
            if costates is not None:
                row += [_fmt(v) for v in costates[k, i]]
            wr.writerow(row + [_fmt(trajectory.weights[i])])
    return buf.getvalue()


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(type(o).__name__)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, default=_json_default, allow_nan=True) + "\n"


def _write(out: Optional[Path], name: str, text: str):
    if out is None:
        return
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)


def _render(report: dict) -> str:
    lines = [f"mfpmp {report['command']}: {'PASS' if report['passed'] else 'FAIL'}"]
    for c in report.get("checks", []):
        flag = "ok  " if c["passed"] else ("skip" if c.get("skipped") else "FAIL")
        lines.append(f"  [{flag}] {c['name']}: {c.get('detail', '')}")
    for k, v in report.get("values", {}).items():
        lines.append(f"  {k} = {json.dumps(v, default=_json_default)}")
    return "\n".join(lines) + "\n"


# -- checks -------------------------------------------------------------------

def _entry(name, passed, detail, **extra):
    return {"name": name, "passed": bool(passed), "detail": detail, **extra}


def pmp_checks(sc: Scenario, u: ControlSignal, trajectory=None, costate=None,
               extra_candidates=()) -> list:
    """Maximisation, stationarity, first-order and terminal checks at ``u``.

    The maximisation candidates are the default parameter grid plus
    ``extra_candidates`` (the optimizer passes its own iterates).
    """
    prob = sc.problem
    traj = prob.simulate(u) if trajectory is None else trajectory
    cs = costate_backward(prob, traj, u) if costate is None else costate
    checks = []

    if np.isfinite(prob.c1_bound):
        cands = default_candidates(prob, u.basis) + list(extra_candidates)
        rep = maximization_check(prob, traj, cs, u, cands)
        checks.append(_entry("maximization", rep.passed,
                             f"{len(rep.violations)} violations over {len(rep.entries)} times "
                             f"x {len(cands)} candidates; worst slack {rep.worst_margin:.3e}",
                             report=rep.summary()))
    else:
        checks.append(_entry("maximization", True, "skipped: control.c1_bound is infinite",
                             skipped=True))

    rep = stationarity_check(prob, traj, cs, u)
    checks.append(_entry("stationarity", rep.passed,
                         f"{len(rep.violations)} violations over {len(rep.entries)} times "
                         f"({len(rep.skipped)} on the C^1 boundary); "
                         f"worst slack {rep.worst_margin:.3e}", report=rep.summary()))

    tol = prob.tol("first_order", 1e-4)
    needles = _needles(sc, traj, u)
    vals = [first_order_condition(prob, u, traj, p) for p in needles]
    worst = min(vals) if vals else 0.0
    checks.append(_entry("first_order", worst >= -tol,
                         f"min over {len(vals)} needles {worst:.3e} (tol {tol:g})",
                         min_value=worst, tol=tol))

    err = terminal_structure_error(prob, traj, cs)
    tol = prob.tol("terminal", 0.0)
    checks.append(_entry("terminal_costate", err <= tol, f"max |r(T) + grad phi| = {err:.3e}",
                         error=err))
    return checks


def _needles(sc, traj, u):
    cfg = sc.needle
    return needle_grid(sc.problem, u.basis, traj, cfg.get("n_omega", 10),
                       cfg.get("n_tau", 10), sc.seed, cfg.get("scale", 1.0))


def _report(command, checks=(), **values):
    checks = list(checks)
    return {"command": command,
            "passed": all(c["passed"] for c in checks),
            "checks": checks, "values": values}


# -- subcommands --------------------------------------------------------------

def cmd_simulate(sc: Scenario, out):
    traj = sc.problem.simulate(sc.control)
    text = trajectory_csv(traj)
    _write(out, "trajectory.csv", text)
    rep = _report("simulate", n_steps=traj.n_steps, n_particles=traj.positions.shape[1],
                  cost=total_cost(sc.problem, sc.control, traj))
    return rep, (text if out is None else None)


def cmd_ot(sc: Scenario, out):
    if sc.reference is None:
        raise UsageError("the 'ot' command needs a 'reference' measure in the scenario")
    p = sc.ot.get("p", 1)
    mu, nu = sc.problem.mu0, sc.reference
    sol = wasserstein(p, mu, nu, duals=(p == 1))
    values = {"p": p, "distance": sol.distance,
              "w1": wasserstein(1, mu, nu).distance, "w2": wasserstein(2, mu, nu).distance}
    checks = []
    if p == 1:
        gap = kr_duality_gap(sol)
        tol = 1e-8 * (1.0 + sol.distance)
        checks.append(_entry("kr_duality_gap", gap <= tol, f"{gap:.3e} (tol {tol:.3e})"))
    rep = _report("ot", checks, **values)
    return rep, None


def cmd_needle(sc: Scenario, out):
    prob, u = sc.problem, sc.control
    traj = prob.simulate(u)
    needles = _needles(sc, traj, u)
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    P = u.basis.n_params
    wr.writerow(["omega_index", "tau", "value"] + [f"theta{p}" for p in range(P)])
    n_tau = sc.needle.get("n_tau", 10)
    vals = []
    for j, p in enumerate(needles):
        v = first_order_condition(prob, u, traj, p)
        vals.append(v)
        wr.writerow([str(j // n_tau), _fmt(p.tau), _fmt(v)] + [_fmt(t) for t in p.omega.theta])
    text = buf.getvalue()
    _write(out, "needle.csv", text)
    tol = prob.tol("first_order", 1e-4)
    worst = min(vals)
    rep = _report("needle", [_entry("first_order", worst >= -tol,
                                    f"min over {len(vals)} needles {worst:.3e} (tol {tol:g})")],
                  n_needles=len(vals), min_value=worst)
    return rep, (text if out is None else None)


def cmd_extremal(sc: Scenario, out):
    prob, u = sc.problem, sc.control
    traj = prob.simulate(u)
    cs = costate_backward(prob, traj, u)
    _write(out, "trajectory.csv", trajectory_csv(traj, cs.costates))
    checks = []

    tol = prob.tol("k_constancy", 1e-3)
    needles = _needles(sc, traj, u)
    rng = np.random.default_rng(sc.seed)
    pick = rng.choice(len(needles), size=min(10, len(needles)), replace=False)
    worst = 0.0
    for j in sorted(pick):
        _, K = k_function(prob, u, traj, cs, needles[j])
        worst = max(worst, float(np.max(np.abs(K - K[-1])) / (1.0 + abs(K[-1]))))
    checks.append(_entry("k_constancy", worst <= tol,
                         f"max_t |K(t) - K(T)| / (1 + |K(T)|) = {worst:.3e} "
                         f"over {len(pick)} needles (tol {tol:g})"))

    H = hamiltonian_curve(prob, u, cs, traj)
    drift = float(np.max(np.abs(H - H[0])) / (1.0 + abs(H[0])))
    const_ctrl = all(np.array_equal(f.theta, u.fields[0].theta) for f in u.fields)
    if const_ctrl and prob.running is None:
        tol = prob.tol("hamiltonian", 1e-5)
        checks.append(_entry("hamiltonian_conservation", drift <= tol,
                             f"max |H(t) - H(0)| / (1 + |H(0)|) = {drift:.3e} (tol {tol:g})"))
    else:
        checks.append(_entry("hamiltonian_conservation", True,
                             "skipped: needs a constant control and no running cost",
                             skipped=True))
    err = terminal_structure_error(prob, traj, cs)
    checks.append(_entry("terminal_costate", err <= prob.tol("terminal", 0.0),
                         f"max |r(T) + grad phi| = {err:.3e}"))
    rep = _report("extremal", checks, hamiltonian_start=H[0], hamiltonian_end=H[-1],
                  hamiltonian_variation=drift)
    return rep, None


def cmd_check(sc: Scenario, out):
    traj = sc.problem.simulate(sc.control)
    rep = _report("check", pmp_checks(sc, sc.control, traj),
                  cost=total_cost(sc.problem, sc.control, traj))
    return rep, None


def cmd_optimize(sc: Scenario, out):
    cfg = sc.optimizer
    run = optimize(sc.problem, sc.control, max_iters=cfg.get("max_iters", 500),
                   tol=cfg.get("tol", 1e-6))
    checks = [_entry("optimizer", True, f"{len(run.iterates) - 1} iterations: {run.message}",
                     converged=run.converged)]
    recent = run.iterates[-10:]
    extra = [f for it in recent for f in it.control.fields]
    checks += pmp_checks(sc, run.control, run.trajectory, run.costate, extra)
    _write(out, "trajectory.csv", trajectory_csv(run.trajectory, run.costate.costates))
    _write(out, "optimized_scenario.json", _dump(sc.with_control(run.control).raw))
    rep = _report("optimize", checks, initial_cost=run.iterates[0].cost, final_cost=run.cost,
                  params=run.control.params.tolist())
    return rep, None


HANDLERS = {"simulate": cmd_simulate, "ot": cmd_ot, "needle": cmd_needle,
            "extremal": cmd_extremal, "check": cmd_check, "optimize": cmd_optimize}


def run(command: str, scenario: Scenario, out: Optional[Path] = None):
    """Run one command; returns ``(exit_code, report, stdout_payload)``."""
    rep, payload = HANDLERS[command](scenario, out)
    _write(out, "report.json", _dump(rep))
    return (0 if rep["passed"] else 1), rep, payload


# -- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mfpmp", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--scenario", required=True, type=Path, help="scenario JSON file")
    p.add_argument("--out", type=Path, help="directory for CSV/JSON artifacts")
    p.add_argument("--dt", type=float, help="override the scenario time step")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--json", action="store_true", help="print the report as JSON")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _thread_limit() -> int:
    raw = os.environ.get("MFPMP_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"MFPMP_THREADS must be a nonnegative integer, got {raw!r}") from None
    if n < 0:
        raise UsageError(f"MFPMP_THREADS must be a nonnegative integer, got {raw!r}")
    return n


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        threads = _thread_limit()
        sc = parse_scenario(args.scenario, dt=args.dt, seed=args.seed)
    except ScenarioError as exc:
        print(f"mfpmp: {exc}", file=sys.stderr)
        return 2
    except UsageError as exc:
        print(f"mfpmp: {exc}", file=sys.stderr)
        return 2

    from threadpoolctl import threadpool_limits
    try:
        with threadpool_limits(limits=threads or None):
            code, rep, payload = run(args.command, sc, args.out)
    except UsageError as exc:
        print(f"mfpmp: {exc}", file=sys.stderr)
        return 2
    except (SimulationError, ValueError) as exc:
        print(f"mfpmp {args.command}: {exc}", file=sys.stderr)
        return 1

    if args.json:
        sys.stdout.write(_dump(rep))
    elif payload is not None:
        sys.stdout.write(payload)
    else:
        sys.stdout.write(_render(rep))
    if payload is not None and args.json is False:
        sys.stderr.write(_render(rep))
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

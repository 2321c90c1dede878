"""Command-line front end: ``algebroid-dynamics {check,simulate,livens,compare,reduce}``.

Exit status: 0 success / PASS, 1 numerical FAIL or integration error,
2 usage or model-loading error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from .algebroid import DualPoint, HOLDS_TOL
from .constraints import (
    constraint_drift,
    integrate_nonholonomic,
    integrate_reduced,
    integrate_vaconomic,
    nh_project_initial,
    reduce,
    restrict_to_D,
)
from .errors import DimensionMismatch, InvariantViolation, MechanicsError, ModelParseError
from .fiber import hamiltonian, lagrangian
from .mechanics import (
    ELVectorField,
    Trajectory,
    first_variation,
    hamiltonian_lift,
    integrate_hamilton,
    integrate_lagrange,
    livens_residuals,
    perturb_bump,
    random_generator,
)
from .models import load_model

MODES = ("hamilton", "lagrange", "nonholonomic", "vaconomic", "reduced")
LIVENS_TOL = 1e-6
LIVENS_FACTOR = 3.0
REDUCE_TOL = 1e-6


class UsageError(Exception):
    pass


def sci(v) -> str:
    """Compact scientific notation: 0.0e0, 5.0e-1, 1.2e-13."""
    mant, exp = f"{v:.1e}".split("e")
    return f"{mant}e{int(exp)}"


def _vector(text):
    try:
        return np.array([float(s) for s in text.split(",") if s.strip()], dtype=float)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None


# -- run configuration ------------------------------------------------------------


def _load(name):
    try:
        return load_model(name)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from None
    except (ModelParseError, DimensionMismatch, InvariantViolation) as exc:
        raise UsageError(f"cannot load model {name}: {exc}") from None


def _config(args, model):
    ini = model.initial
    spec = model.spec
    cfg = {
        "t0": ini["t0"] if args.t0 is None else args.t0,
        "t1": ini["t1"] if args.t1 is None else args.t1,
        "dt": ini["dt"] if args.dt is None else args.dt,
        "method": args.method or ini["method"],
    }
    if not cfg["dt"] > 0:
        raise UsageError("dt must be positive")
    if not cfg["t1"] > cfg["t0"]:
        raise UsageError("t1 must exceed t0")
    x0 = args.x0 if args.x0 is not None else ini.get("x0", np.zeros(spec.n))
    xi0 = args.xi0 if args.xi0 is not None else ini.get("xi0", ini.get("p0"))
    if xi0 is None:
        raise UsageError("no initial momentum: pass --xi0 or set xi0 in [initial]")
    if len(x0) != spec.n:
        raise UsageError(f"--x0 needs {spec.n} components, got {len(x0)}")
    if len(xi0) != spec.m:
        raise UsageError(f"--xi0 needs {spec.m} components, got {len(xi0)}")
    cfg["x0"], cfg["xi0"] = np.asarray(x0, float), np.asarray(xi0, float)
    mu0 = getattr(args, "mu0", None)
    cfg["mu0"] = mu0 if mu0 is not None else ini.get("mu0")
    return cfg


def _require(model, mode):
    if model.hamiltonian is None and mode != "lagrange":
        raise UsageError(f"mode {mode!r} needs a hamiltonian")
    if mode == "lagrange" and model.lagrangian is None:
        raise UsageError("mode 'lagrange' needs a lagrangian")
    if mode in ("nonholonomic", "vaconomic") and model.constraint is None:
        raise UsageError(f"mode {mode!r} needs a [constraints] section")
    if mode == "reduced" and (model.constraint is None or not model.constraint.has_frame
                              or model.mechanical is None):
        raise UsageError("mode 'reduced' needs a constraint frame and a [metric] section")


# -- tables -------------------------------------------------------------------------


def trajectory_table(model, traj: Trajectory, mode) -> dict:
    """Column name -> array, in output order."""
    spec, con, H = model.spec, model.constraint, model.hamiltonian
    n, m, N = spec.n, spec.m, len(traj)
    X = traj["x"]
    cols = {"t": traj.t}
    for a in range(n):
        cols[f"x{a + 1}"] = X[:, a]
    Y = np.empty((N, m))
    energy = np.empty(N)
    if mode == "lagrange":
        P = traj["p"]
        for i in range(m):
            cols[f"p{i + 1}"] = P[:, i]
        fld = ELVectorField(spec, model.lagrangian)
        Lf = lagrangian(model.lagrangian, n, m)
        for k in range(N):
            Y[k] = fld.velocity(X[k], P[k])
            fld.y = Y[k]
            energy[k] = Y[k] @ P[k] - float(Lf.jet(X[k], Y[k]).value)
    elif mode == "reduced":
        red, Hred = reduce(spec, con, model.mechanical)
        ETA = traj["eta"]
        for i in range(con.d):
            cols[f"eta{i + 1}"] = ETA[:, i]
        for k in range(N):
            j, a, _ = Hred.lift(X[k], ETA[k])
            Y[k] = con.frame_at(X[k]) @ a
            energy[k] = float(Hred.jet(X[k], ETA[k], order=0).value)
    else:
        XI = traj["xi"]
        for i in range(m):
            cols[f"xi{i + 1}"] = XI[:, i]
        Hf = hamiltonian(H, n, m)
        for k in range(N):
            jet = Hf.jet(X[k], XI[k], order=1)
            Y[k] = jet.dv
            energy[k] = float(jet.value)
    for i in range(m):
        cols[f"y{i + 1}"] = Y[:, i]
    cols["H"] = energy
    if con is not None and con.r:
        PHI = np.array([con(X[k], Y[k]).value for k in range(N)]).reshape(N, con.r)
        for s in range(con.r):
            cols[f"phi{s + 1}"] = PHI[:, s]
    if traj.multipliers is not None and traj.multipliers.shape[1]:
        for s in range(traj.multipliers.shape[1]):
            cols[f"mu{s + 1}"] = traj.multipliers[:, s]
    return cols


def format_table(cols: dict, fmt="csv") -> str:
    if fmt == "json":
        return json.dumps({k: [float(v) for v in arr] for k, arr in cols.items()}) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for row in zip(*cols.values()):
        w.writerow(["%.17g" % v for v in row])
    return buf.getvalue()


def read_table(path) -> dict:
    text = Path(path).read_text()
    if str(path).endswith(".json"):
        return {k: np.asarray(v, dtype=float) for k, v in json.loads(text).items()}
    rows = list(csv.reader(io.StringIO(text)))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    return {name: body[:, k] for k, name in enumerate(header)}


# -- commands -------------------------------------------------------------------------


def cmd_check(args, out):
    model = _load(args.model)
    spec, rep = model.spec, model.report
    print(f"model: {model.name} (n={spec.n}, m={spec.m})", file=out)
    print(f"tolerance: {sci(HOLDS_TOL)}", file=out)

    def verdict(v):
        return "PASS" if v <= HOLDS_TOL else "FAIL"

    print(f"skew: {sci(rep['skew'])} {verdict(rep['skew'])}", file=out)
    print(f"almost-lie: {sci(rep['almost_lie'])} {verdict(rep['almost_lie'])}", file=out)
    if rep["jacobi"] is None:
        print("jacobi: n/a (bracket is not skew)", file=out)
    else:
        print(f"jacobi: {sci(rep['jacobi'])} {verdict(rep['jacobi'])}", file=out)
    print(f"class: {rep['class']}", file=out)
    if model.constraint is not None:
        con = model.constraint
        frame = f", frame of rank {con.d}" if con.has_frame else ""
        print(f"constraints: {con.r}{' linear' if con.linear else ''}{frame}", file=out)
    return 0


def simulate(model, mode, cfg) -> Trajectory:
    spec, con, H = model.spec, model.constraint, model.hamiltonian
    t0, t1, dt, method = cfg["t0"], cfg["t1"], cfg["dt"], cfg["method"]
    x0, xi0 = cfg["x0"], cfg["xi0"]
    if mode == "hamilton":
        return integrate_hamilton(spec, H, x0, xi0, t0, t1, dt, method)
    if mode == "lagrange":
        return integrate_lagrange(spec, model.lagrangian, x0, xi0, t0, t1, dt, method)
    if mode == "nonholonomic":
        return integrate_nonholonomic(spec, H, con, x0, xi0, t0, t1, dt, method)
    if mode == "vaconomic":
        return integrate_vaconomic(spec, H, con, x0, xi0, cfg["mu0"], t0, t1, dt, method)
    red, Hred = reduce(spec, con, model.mechanical)
    start = nh_project_initial(spec, H, con, DualPoint(x0, xi0))
    eta0 = con.frame_at(start.x).T @ start.xi
    return integrate_reduced(red, Hred, start.x, eta0, t0, t1, dt, method)


def cmd_simulate(args, out):
    model = _load(args.model)
    _require(model, args.mode)
    cfg = _config(args, model)
    traj = simulate(model, args.mode, cfg)
    cols = trajectory_table(model, traj, args.mode)
    fmt = args.format or ("json" if args.output and args.output.endswith(".json") else "csv")
    text = format_table(cols, fmt)
    if args.output is None:
        out.write(text)
        return 0
    Path(args.output).write_text(text)
    phi = [v for k, v in cols.items() if k.startswith("phi")]
    print(f"wrote {len(traj)} rows to {args.output}", file=out)
    print(f"final t: {traj.t[-1]:.17g}", file=out)
    print(f"energy drift: {sci(np.max(np.abs(cols['H'] - cols['H'][0])))}", file=out)
    if phi:
        print(f"max |phi|: {sci(max(np.max(np.abs(p)) for p in phi))}", file=out)
    return 0


def _livens_values(model, gamma_F, generators):
    res = livens_residuals(model.spec, model.hamiltonian, gamma_F)
    return [abs(first_variation(model.spec, model.hamiltonian, gamma_F, g, res)) for g in generators]


def cmd_livens(args, out):
    model = _load(args.model)
    _require(model, "hamilton")
    spec, H = model.spec, model.hamiltonian
    if args.trials < 1:
        raise UsageError("--trials must be at least 1")
    if args.trajectory:
        try:
            table = read_table(args.trajectory)
        except FileNotFoundError:
            raise UsageError(f"no such trajectory file: {args.trajectory}") from None
        t = table["t"]
        X = np.column_stack([table[f"x{a + 1}"] for a in range(spec.n)]) if spec.n else np.zeros((len(t), 0))
        XI = np.column_stack([table[f"xi{i + 1}"] for i in range(spec.m)])
        dual = Trajectory.from_blocks(t, x=X, xi=XI)
        lifted = hamiltonian_lift(spec, H, dual)
        if all(f"y{i + 1}" in table for i in range(spec.m)):
            lifted = lifted.with_block("y", np.column_stack([table[f"y{i + 1}"] for i in range(spec.m)]))
        runs = [("file", lifted)]
    else:
        cfg = _config(args, model)
        runs = []
        for label, dt in (("dt", cfg["dt"]), ("dt/2", cfg["dt"] / 2)):
            traj = integrate_hamilton(spec, H, cfg["x0"], cfg["xi0"], cfg["t0"], cfg["t1"], dt, cfg["method"])
            runs.append((label, hamiltonian_lift(spec, H, traj)))
    if args.perturb:
        runs = [(label, perturb_bump(g, args.perturb)) for label, g in runs]
    t0, t1 = runs[0][1].t[0], runs[0][1].t[-1]
    rng = np.random.default_rng(args.seed)
    gens = [random_generator(spec.m, t0, t1, rng) for _ in range(args.trials)]
    values = {label: _livens_values(model, g, gens) for label, g in runs}
    for k in range(args.trials):
        row = "  ".join(f"|dS|({label})={sci(values[label][k])}" for label, _ in runs)
        print(f"trial {k + 1}: {row}", file=out)
    worst = max(values[runs[0][0]])
    print(f"max |dS| ({runs[0][0]}): {sci(worst)}", file=out)
    ok = worst <= LIVENS_TOL
    if len(runs) == 2:
        half = max(values["dt/2"])
        factor = worst / half if half > 0 else float("inf")
        print(f"max |dS| (dt/2): {sci(half)}", file=out)
        print(f"reduction factor: {factor:.3f}", file=out)
        ok = ok and factor >= LIVENS_FACTOR
    print("PASS" if ok else "FAIL", file=out)
    return 0 if ok else 1


def cmd_compare(args, out):
    model = _load(args.model)
    _require(model, "nonholonomic")
    cfg = _config(args, model)
    spec, con, H = model.spec, model.constraint, model.hamiltonian
    args_ = (cfg["t0"], cfg["t1"], cfg["dt"], cfg["method"])
    nh = integrate_nonholonomic(spec, H, con, cfg["x0"], cfg["xi0"], *args_)
    vac = integrate_vaconomic(spec, H, con, cfg["x0"], cfg["xi0"], None, *args_)
    width = spec.n + spec.m
    dist = float(np.max(np.abs(nh.states[:, :width] - vac.states[:, :width]), initial=0.0))
    print(f"sup-distance (x, xi): {sci(dist)}", file=out)
    print(f"nonholonomic drift: {sci(constraint_drift(spec, H, con, nh))}", file=out)
    print(f"vaconomic drift: {sci(constraint_drift(spec, H, con, vac))}", file=out)
    return 0


def cmd_reduce(args, out):
    model = _load(args.model)
    _require(model, "reduced")
    cfg = _config(args, model)
    spec, con, H = model.spec, model.constraint, model.hamiltonian
    args_ = (cfg["t0"], cfg["t1"], cfg["dt"], cfg["method"])
    nh = integrate_nonholonomic(spec, H, con, cfg["x0"], cfg["xi0"], *args_)
    red, Hred = reduce(spec, con, model.mechanical)
    x0 = nh["x"][0]
    reduced = integrate_reduced(red, Hred, x0, con.frame_at(x0).T @ nh["xi"][0], *args_)
    dist = max(float(np.max(np.abs(restrict_to_D(con, nh) - reduced["eta"]), initial=0.0)),
               float(np.max(np.abs(nh["x"] - reduced["x"]), initial=0.0)))
    print(f"sup-distance i*(E*) vs D*: {sci(dist)}", file=out)
    ok = dist <= REDUCE_TOL
    print("PASS" if ok else "FAIL", file=out)
    return 0 if ok else 1


# -- argument parsing -----------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="algebroid-dynamics",
                                description="Mechanics on algebroids: checks, simulation, residual reports.")
    sub = p.add_subparsers(dest="command", required=True)

    def run_flags(sp, mu=False):
        sp.add_argument("model", help="built-in model name or path to a .model file")
        sp.add_argument("--t0", type=float)
        sp.add_argument("--t1", type=float)
        sp.add_argument("--dt", type=float)
        sp.add_argument("--method", choices=("rk4", "heun", "euler"))
        sp.add_argument("--x0", type=_vector, help="comma-separated, e.g. --x0=-0.5,1")
        sp.add_argument("--xi0", type=_vector, help="initial momentum (p for lagrange mode)")
        if mu:
            sp.add_argument("--mu0", type=_vector, help="initial vaconomic multipliers")

    sp = sub.add_parser("check", help="structure residuals and classification")
    sp.add_argument("model")
    sp.set_defaults(func=cmd_check)

    sp = sub.add_parser("simulate", help="integrate and write a trajectory table")
    run_flags(sp, mu=True)
    sp.add_argument("--mode", choices=MODES, default="hamilton")
    sp.add_argument("--output", help="file to write (default: standard output)")
    sp.add_argument("--format", choices=("csv", "json"))
    sp.add_argument("--seed", type=int, default=0, help="unused by simulate; accepted for uniformity")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("livens", help="first variation of the Livens action along X_H trajectories")
    run_flags(sp)
    sp.add_argument("--trials", type=int, default=20)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--trajectory", help="CSV/JSON trajectory (t, x, xi[, y]) instead of integrating")
    sp.add_argument("--perturb", type=float, default=0.0, help="amplitude of a sin^2 bump added to xi")
    sp.set_defaults(func=cmd_livens)

    sp = sub.add_parser("compare", help="nonholonomic vs vaconomic from the same initial data")
    run_flags(sp)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("reduce", help="nonholonomic motion on E* vs reduced motion on D*")
    run_flags(sp)
    sp.set_defaults(func=cmd_reduce)
    return p


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    try:
        return args.func(args, out)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (MechanicsError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except BrokenPipeError:
        # reader went away (e.g. piped into head); silence the flush at exit
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 1


if __name__ == "__main__":
    sys.exit(main())

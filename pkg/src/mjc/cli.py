"""Command-line entry point: ``mjc <subcommand> ...``."""
from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from .effective import build_effective, closed_form_effective
from .ergodic import estimate_invariant_measure
from .errors import MJCError, UsageError
from .harness import ExperimentConfig, run_all, run_sweep, run_weak_convergence
from .hjb import Axis, Grid, HJBSolution, SchemeConfig, extract_policy, solve_effective_hjb, solve_two_scale_hjb
from .model import builtin_benchmark, validate_assumptions
from .sde import PolicyHandle, simulate_slow_fast
from .value import estimate_cost, estimate_effective_cost


def _triple(text):
    try:
        a, b, n = text.split(":")
        return float(a), float(b), int(n)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a:b:n, got {text!r}") from None


def _floats(text):
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _write_rows(path, header, rows):
    fh = open(path, "w", newline="") if path else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    finally:
        if path:
            fh.close()


def _effective(spec, source, xgrid=None, seed=0):
    if source == "closed":
        return closed_form_effective(spec)
    a, b, n = xgrid or (-4.0, 4.0, 41)
    return build_effective(spec, np.linspace(a, b, n), "simulate", rng=seed)


def _policy(text, spec, eff=None):
    kind, _, arg = text.partition(":")
    if kind == "const":
        return PolicyHandle.constant(float(arg), spec.control_set)
    if kind == "hjb":
        return extract_policy(eff or closed_form_effective(spec), load_solution(arg, spec.T))
    raise UsageError(f"policy must be const:<v> or hjb:<file>, got {text!r}")


def load_solution(path, T):
    """Read an effective solve written by ``mjc solve-hjb`` (columns tau, x, u)."""
    data = np.genfromtxt(path, delimiter=",", names=True)
    if "y" in data.dtype.names:
        raise UsageError("policy extraction needs an effective (one-dimensional) solve")
    taus = np.unique(data["tau"])
    xs = np.unique(data["x"])
    vals = np.empty((taus.size, xs.size))
    for k, t in enumerate(taus):
        sel = data["tau"] == t
        vals[k] = data["u"][sel][np.argsort(data["x"][sel])]
    grid = Grid(Axis.span(xs[0], xs[-1], xs.size), None, T)
    return HJBSolution(taus, vals, grid, {"source": path})


# ---- subcommands ----------------------------------------------------------------

def cmd_simulate(args):
    spec = builtin_benchmark(args.model)
    pol = _policy(args.policy, spec)
    tx, ty = simulate_slow_fast(spec, args.epsilon, pol, args.x0, args.y0, 0.0, args.dt, args.seed,
                                args.paths, record_every=args.record_every)
    rows = [(i, t, tx.states[i, k], ty.states[i, k]) for i in range(tx.n_paths) for k, t in enumerate(tx.times)]
    _write_rows(args.out, ["path_id", "time", "x", "y"], rows)
    return 0


def cmd_ergodic(args):
    spec = builtin_benchmark(args.model)
    beta = validate_assumptions(spec, rng_seed=args.seed).beta_hat
    burn = args.burn_in if args.burn_in is not None else 5.0 / beta
    thin = args.thin if args.thin is not None else 1.0 / beta
    mu = estimate_invariant_measure(spec, args.x, burn, args.n, thin, args.dt, args.seed, beta)
    _write_rows(args.out, ["sample_id", "y"], list(enumerate(mu.samples)))
    summary = json.dumps(mu.summary(), indent=2)
    if args.out:
        with open(args.out.rsplit(".", 1)[0] + ".json", "w") as fh:
            fh.write(summary)
        print(summary)
    return 0


def cmd_effective(args):
    spec = builtin_benchmark(args.model)
    eff = _effective(spec, args.source, args.x_grid, args.seed)
    d = eff.to_dict()
    if eff.x_nodes is None:  # closed forms: tabulate for the record
        a, b, n = args.x_grid
        x = np.linspace(a, b, n)
        vs = spec.control_set.sample_points(41)
        d.update(x_nodes=x.tolist(), v_grid=vs.tolist(), g_bar=eff.g_bar(x).tolist(),
                 b_bar=[eff.b_bar(x, np.full_like(x, v)).tolist() for v in vs],
                 L_bar=[eff.L_bar(x, np.full_like(x, v)).tolist() for v in vs])
    text = json.dumps(d, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        print(text)
    return 0


def cmd_solve_hjb(args):
    spec = builtin_benchmark(args.model).replace(T=args.T)
    scheme = SchemeConfig(dt=args.dt, extension=args.extension)
    taus = np.linspace(0.0, args.T, args.levels)
    xa = Axis.span(*args.xdomain)
    if args.epsilon is None:
        eff = _effective(spec, args.source, seed=args.seed)
        eff.T = args.T
        sol = solve_effective_hjb(eff, Grid(xa, None, args.T), scheme, taus=taus)
        rows = [(t, x, u) for k, t in enumerate(sol.taus) for x, u in zip(xa.nodes, sol.values[k])]
        _write_rows(args.out, ["tau", "x", "u"], rows)
    else:
        ya = Axis.span(*args.ydomain)
        sol = solve_two_scale_hjb(spec, args.epsilon, Grid(xa, ya, args.T), scheme, taus=taus)
        rows = [(t, x, y, sol.values[k, i, j]) for k, t in enumerate(sol.taus)
                for i, x in enumerate(xa.nodes) for j, y in enumerate(ya.nodes)]
        _write_rows(args.out, ["tau", "x", "y", "u"], rows)
    return 0


def cmd_value(args):
    spec = builtin_benchmark(args.model)
    t0, x0, y0 = args.start
    eff = None
    if args.epsilon is None or args.policy.startswith("hjb:"):
        eff = _effective(spec, args.source, seed=args.seed)
    pol = _policy(args.policy, spec, eff)
    if args.epsilon is None:
        dt = args.dt or 0.01
        est = estimate_effective_cost(eff, pol, x0, t0, args.paths, dt, args.seed, args.discount)
    else:
        dt = args.dt or args.epsilon / 10
        est = estimate_cost(spec, args.epsilon, pol, x0, y0, t0, args.paths, dt, args.seed, args.discount)
    eps = "effective" if args.epsilon is None else args.epsilon
    _write_rows(args.out, ["epsilon", "policy", "t0", "x0", "y0", "mean", "stderr", "n_paths"],
                [(eps, args.policy, t0, x0, y0, est.mean, est.stderr, est.n_paths)])
    return 0


def _config(args):
    base = {}
    if args.config:
        with open(args.config) as fh:
            base = json.load(fh)
    for key in ("model", "seed", "paths", "out_dir"):
        val = getattr(args, key, None)
        if val is not None:
            base[key] = val
    if args.eps_list is not None:
        base["eps_list"] = list(args.eps_list)
    if args.no_two_scale:
        base["two_scale"] = False
    for item in args.set or []:
        k, _, v = item.partition("=")
        base[k] = json.loads(v)
    return ExperimentConfig.from_dict(base)


def _run_report(fn):
    def run(args):
        report = fn(_config(args))
        for name, v in report.verdicts.items():
            print(f"{'PASS' if v['pass'] else 'FAIL'}  {name}: measured={v['measured']} threshold={v['threshold']}")
        for stage, msg in report.errors.items():
            print(f"ERROR {stage}: {msg}")
        return 0 if report.passed else 1
    return run


def build_parser():
    p = argparse.ArgumentParser(prog="mjc", description="Slow-fast controlled stable-driven systems.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, model=True):
        if model:
            sp.add_argument("--model", default="BM1")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", default=None)

    s = sub.add_parser("simulate", help="simulate slow-fast paths to CSV")
    common(s)
    s.add_argument("--epsilon", type=float, default=0.1)
    s.add_argument("--dt", type=float, default=None)
    s.add_argument("--paths", type=int, default=10)
    s.add_argument("--x0", type=float, default=0.0)
    s.add_argument("--y0", type=float, default=0.0)
    s.add_argument("--policy", default="const:0")
    s.add_argument("--record-every", type=int, default=1)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("ergodic", help="sample the invariant measure of the frozen equation")
    common(s)
    s.add_argument("--x", type=float, default=0.0)
    s.add_argument("--burn-in", type=float, default=None)
    s.add_argument("--n", type=int, default=10_000)
    s.add_argument("--thin", type=float, default=None)
    s.add_argument("--dt", type=float, default=0.01)
    s.set_defaults(func=cmd_ergodic)

    s = sub.add_parser("effective", help="build the effective problem")
    common(s)
    s.add_argument("--x-grid", type=_triple, default=(-4.0, 4.0, 41))
    s.add_argument("--source", choices=("mc", "closed"), default="closed")
    s.set_defaults(func=cmd_effective)

    s = sub.add_parser("solve-hjb", help="solve the effective (no --epsilon) or two-scale HJB equation")
    common(s)
    s.add_argument("--epsilon", type=float, default=None)
    s.add_argument("--xdomain", type=_triple, default=(-4.0, 4.0, 201))
    s.add_argument("--ydomain", type=_triple, default=(-6.0, 6.0, 121))
    s.add_argument("--dt", type=float, default=None)
    s.add_argument("--T", type=float, default=1.0)
    s.add_argument("--levels", type=int, default=11)
    s.add_argument("--extension", choices=("constant", "linear"), default="constant")
    s.add_argument("--source", choices=("mc", "closed"), default="closed")
    s.set_defaults(func=cmd_solve_hjb)

    s = sub.add_parser("value", help="Monte Carlo cost of a policy")
    common(s)
    s.add_argument("--epsilon", type=float, default=None)
    s.add_argument("--policy", default="const:0")
    s.add_argument("--start", type=_floats, default=(0.0, 0.0, 0.0))
    s.add_argument("--paths", type=int, default=10_000)
    s.add_argument("--dt", type=float, default=None)
    s.add_argument("--discount", choices=("printed", "dpp"), default="printed")
    s.add_argument("--source", choices=("mc", "closed"), default="closed")
    s.set_defaults(func=cmd_value)

    for name, fn, text in (("sweep", run_sweep, "epsilon sweep of the HJB gap"),
                           ("weak", run_weak_convergence, "KS weak-convergence sweep"),
                           ("all", run_all, "every diagnostic stage")):
        s = sub.add_parser(name, help=text)
        s.add_argument("--config", default=None)
        s.add_argument("--model", default=None)
        s.add_argument("--seed", type=int, default=None)
        s.add_argument("--paths", type=int, default=None)
        s.add_argument("--out-dir", dest="out_dir", default=None)
        s.add_argument("--eps-list", type=_floats, default=None)
        s.add_argument("--no-two-scale", action="store_true")
        s.add_argument("--set", action="append", metavar="KEY=JSON")
        s.set_defaults(func=_run_report(fn))
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if getattr(args, "dt", "unset") is None and args.command == "simulate":
        args.dt = args.epsilon / 10
    try:
        return args.func(args)
    except MJCError as exc:
        print(f"mjc: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``branchcoal <command> ...``."""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import applications as apps
from . import csb
from .discrete import b_chain, b_from_d, d_chain, write_trajectory_csv
from .measure import INF
from .offspring import iterate_pgf, make_offspring
from .trees import forest_coalescent
from .verify import acceptance_specs, run_suite


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t]


def _open_out(path):
    return open(path, "w", newline="") if path and path != "-" else sys.stdout


def _fmt(x) -> str:
    return "+inf" if x == INF else repr(float(x)) if isinstance(x, float) else str(x)


def cmd_simulate(args) -> int:
    dist = make_offspring(args.dist)
    rng = np.random.default_rng(args.seed)
    tab = iterate_pgf(dist, args.height)
    fc = forest_coalescent(dist, args.height, args.individuals, rng, table=tab)
    with _open_out(args.out) as fh:
        wr = csv.writer(fh)
        wr.writerow(["i", "A", "censored"])
        for i, (a, c) in enumerate(zip(fc.values, fc.censored), start=1):
            wr.writerow([i, int(a), int(c)])
    return 0


def cmd_chain(args) -> int:
    dist = make_offspring(args.dist)
    rng = np.random.default_rng(args.seed)
    tab = iterate_pgf(dist, args.horizon)
    out = Path(args.out) if args.out else None
    for r in range(args.reps):
        if args.kind == "d":
            traj = d_chain(dist, tab, args.steps, rng, horizon=args.horizon)
            measures = b_from_d(traj)
        else:
            traj = b_chain(dist, tab, args.steps, rng, horizon=args.horizon)
            measures = traj.B
        if out is None:
            print(" ".join(_fmt(a) for a in traj.A))
        else:
            path = out if args.reps == 1 else out.with_name(f"{out.stem}_{r + 1}{out.suffix}")
            write_trajectory_csv(traj, path, measures)
    return 0


def cmd_law(args) -> int:
    mech = csb.parse_mechanism(args.mech)
    x0, x1, steps = args.grid.split(":")
    xs = np.geomspace(float(x0), float(x1), int(steps))
    with _open_out(args.out) as fh:
        wr = csv.writer(fh)
        wr.writerow(["x", "tail", "density_n1", "density_n2"])
        for x in xs:
            x = max(float(x), args.eps)
            wr.writerow([x, csb.a_tail(mech, args.eps, x), csb.a_n_joint(mech, args.eps, x, 1),
                         csb.a_n_joint(mech, args.eps, x, 2)])
        print(f"# atom at infinity: {csb.atom_at_infinity(mech, args.eps)}", file=sys.stderr)
    return 0


def cmd_rho0(args) -> int:
    mech = csb.parse_mechanism(args.mech)
    rng = np.random.default_rng(args.seed)
    with _open_out(args.out) as fh:
        wr = csv.writer(fh)
        wr.writerow(["rep", "t", "size"])
        for r in range(1, args.reps + 1):
            g = csb.sample_rho0(mech, args.horizon, rng, min_atom=args.min_atom)
            for t, d in g.atoms:
                wr.writerow([r, t, d])
    return 0


def _parse_scheme(text: str) -> csb.RescalingScheme:
    head, _, rest = text.partition(":")
    if head != "lf-critical":
        raise SystemExit(f"unknown scheme {head!r}")
    kv = dict(item.split("=") for item in rest.split(",") if item)
    return csb.lf_critical_scheme(float(kv.get("q", 0.5)))


def cmd_limit(args) -> int:
    rng = np.random.default_rng(args.seed)
    rows = csb.rescaling_experiment(_parse_scheme(args.scheme), args.eps,
                                    [int(p) for p in args.p.split(",")], args.samples, rng)
    keys = list(rows[0])
    wr = csv.writer(sys.stdout)
    wr.writerow(keys)
    for r in rows:
        wr.writerow([r[k] for k in keys])
    return 0


def cmd_yaglom(args) -> int:
    y = apps.yaglom_distribution(make_offspring(args.dist), args.tol)
    with _open_out(args.out) as fh:
        wr = csv.writer(fh)
        wr.writerow(["k", "alpha_k"])
        for k in range(1, y.k_max + 1):
            wr.writerow([k, repr(float(y.alpha[k]))])
    return 0


def cmd_yaglom_check(args) -> int:
    dist = make_offspring(args.dist)
    rng = np.random.default_rng(args.seed)
    rows = apps.disintegration_check(dist, apps.yaglom_distribution(dist), _floats(args.s), args.reps, rng)
    wr = csv.writer(sys.stdout)
    wr.writerow(["s", "yaglom_pgf", "mc", "stderr", "pgf_identity", "pass"])
    for r in rows:
        wr.writerow([r["s"], r["yaglom_pgf"], r["mc"], r["stderr"], r["pgf_identity"], int(r["pass"])])
    return 0 if all(r["pass"] for r in rows) else 1


def cmd_verify(args) -> int:
    rep = run_suite(acceptance_specs(args.suite), seed=args.seed, workers=args.workers)
    for o in rep.outcomes:
        print(o.line())
    if args.out:
        Path(args.out).write_text(rep.to_json())
    return 0 if rep.passed else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="branchcoal", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="branch lengths of a standing population from sampled trees")
    p.add_argument("--dist", required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--individuals", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("chain", help="run the D- or B-chain")
    p.add_argument("--kind", choices=("d", "b"), default="d")
    p.add_argument("--dist", required=True)
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--horizon", type=int, default=200)
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_chain)

    p = sub.add_parser("law", help="tail and joint density of the first branch length in the limit")
    p.add_argument("--mech", required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--grid", default="0.1:10:50")
    p.add_argument("--out")
    p.set_defaults(func=cmd_law)

    p = sub.add_parser("rho0", help="sample the continuous great-aunt measure")
    p.add_argument("--mech", required=True)
    p.add_argument("--horizon", type=float, required=True)
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--min-atom", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_rho0)

    p = sub.add_parser("limit", help="rescaled discrete coalescent against its limit")
    p.add_argument("--scheme", default="lf-critical:q=0.5")
    p.add_argument("--p", default="10,100,1000")
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--samples", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_limit)

    p = sub.add_parser("yaglom", help="quasi-stationary law of a subcritical process")
    p.add_argument("--dist", required=True)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--out")
    p.set_defaults(func=cmd_yaglom)

    p = sub.add_parser("yaglom-check", help="disintegration of the quasi-stationary law")
    p.add_argument("--dist", default="lf:a=0.6,b=0.4")
    p.add_argument("--s", default="0.25,0.5,0.75")
    p.add_argument("--reps", type=int, default=100000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_yaglom_check)

    p = sub.add_parser("verify", help="run the cross-check suite")
    p.add_argument("--suite", choices=("all", "discrete", "csb", "apps"), default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface.

Exit codes: 0 on success, 1 on usage errors, 2 when a command fails at run time.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import __version__
from .adversary import attack
from .bench import BenchSpec, default_workers, run_bench, write_csv
from .circuit import Circuit, analyze_bounds
from .instances import resolve_circuit
from .oracle import circuit_oracle
from .smoothing import SmoothingParams, smooth
from .solver import (SolverConfig, deterministic_goldstein_sg, randomized_goldstein_sg,
                     sgd_on_uniform_smoothing)
from .stationarity import POLICIES, certify

SOLVE_COLUMNS = ("algo", "delta", "eps", "oracle_calls", "outer_iters", "inner_iters",
                 "final_value", "cert_norm", "status")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(1)


def _vector(text: str, circuit: Circuit, default=None) -> np.ndarray:
    t = text.strip()
    if t == "zeros":
        return np.zeros(circuit.dim)
    if t == "x0":
        if default is None:
            raise UsageError("'x0' is only available for builtin circuits")
        return np.asarray(default, dtype=float)
    try:
        x = np.array([float(v) for v in t.split(",")])
    except ValueError as exc:
        raise UsageError(f"cannot parse point {text!r}") from exc
    if x.shape[0] != circuit.dim:
        raise UsageError(f"point has {x.shape[0]} coordinates, circuit expects {circuit.dim}")
    return x


def _dump_json(obj, path):
    text = json.dumps(obj, indent=2)
    if path in (None, "-"):
        print(text)
    else:
        with open(path, "w") as fh:
            fh.write(text + "\n")


def _load(args):
    return resolve_circuit(args.circuit)


# ---------------------------------------------------------------------------
# subcommands

def cmd_validate(args) -> int:
    circuit, _ = _load(args)
    rep = circuit.validate()
    print(rep)
    return 0 if rep.ok else 2


def cmd_eval(args) -> int:
    circuit, x0 = _load(args)
    circuit.require_valid()
    print(repr(float(circuit.eval(_vector(args.x, circuit, x0)))))
    return 0


def cmd_grad(args) -> int:
    circuit, x0 = _load(args)
    circuit.require_valid()
    print(",".join(repr(float(v)) for v in circuit.grad(_vector(args.x, circuit, x0))))
    return 0


def cmd_bounds(args) -> int:
    circuit, _ = _load(args)
    b = analyze_bounds(circuit, args.diam)
    _dump_json({"L": b.L, "G": b.G, "size": circuit.size(), "region_diameter": args.diam,
                "node_L": b.node_L.tolist(), "node_G": b.node_G.tolist()}, args.out)
    return 0


def cmd_smooth(args) -> int:
    circuit, _ = _load(args)
    sc = smooth(circuit, SmoothingParams(args.delta, args.eps, args.gamma, args.half_width),
                args.diam)
    sc.circuit.save(args.out)
    report_path = args.report or (args.out[:-5] if args.out.endswith(".json") else args.out) + ".report.json"
    _dump_json(sc.report(), report_path)
    return 0


def cmd_solve(args) -> int:
    circuit, x0_default = _load(args)
    circuit.require_valid()
    x0 = _vector(args.x0, circuit, x0_default)
    fn = circuit
    if args.smooth:
        if args.gamma is None:
            raise UsageError("--smooth requires --gamma")
        fn = smooth(circuit, SmoothingParams(args.delta, args.eps, args.gamma), args.diam)
    oracle = circuit_oracle(fn)
    if args.algo in ("det", "rand-ls"):
        cfg = SolverConfig(args.delta, args.eps, max_outer=args.max_outer)
        res = (deterministic_goldstein_sg(oracle, x0, cfg) if args.algo == "det"
               else randomized_goldstein_sg(oracle, x0, cfg, args.seed))
    else:
        res = sgd_on_uniform_smoothing(oracle, x0, args.delta, args.eps, args.max_outer,
                                       args.step_size or args.delta, args.seed)
    row = {"algo": args.algo, "delta": args.delta, "eps": args.eps,
           "oracle_calls": res.oracle_calls, "outer_iters": res.outer_iters,
           "inner_iters": res.inner_iters_total, "final_value": float(fn.eval(res.point)),
           "cert_norm": res.cert_norm, "status": str(res.status)}
    fh = sys.stdout if args.out in (None, "-") else open(args.out, "w", newline="")
    try:
        w = csv.DictWriter(fh, fieldnames=SOLVE_COLUMNS)
        w.writeheader()
        w.writerow(row)
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def cmd_certify(args) -> int:
    circuit, x0 = _load(args)
    circuit.require_valid()
    x = _vector(args.x, circuit, x0)
    cert = certify(circuit_oracle(circuit), x, args.delta, args.samples, args.policy, args.seed)
    _dump_json(cert.to_dict(), args.out)
    return 0


def cmd_adversary(args) -> int:
    rep = attack(args.algo, args.mode, args.dim, args.budget, args.delta, args.eps,
                 L=args.L, Delta=args.Delta, seed=args.seed, hull_samples=args.hull_samples)
    _dump_json(rep.to_dict(), args.out)
    return 0


def cmd_bench(args) -> int:
    spec = BenchSpec.load(args.spec)
    rows = run_bench(spec, args.workers or default_workers())
    fh = sys.stdout if args.out in (None, "-") else open(args.out, "w", newline="")
    try:
        write_csv(rows, fh)
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="goldstein", description="Deterministic Goldstein-stationarity toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def circuit_arg(sp):
        sp.add_argument("--circuit", required=True, help="circuit JSON file or builtin name")

    sp = sub.add_parser("validate", help="check the structural circuit conditions")
    circuit_arg(sp)
    sp.set_defaults(func=cmd_validate)

    for name, fn in (("eval", cmd_eval), ("grad", cmd_grad)):
        sp = sub.add_parser(name, help=f"{name} at a point")
        circuit_arg(sp)
        sp.add_argument("--x", required=True, help="comma-separated point, 'zeros' or 'x0'")
        sp.set_defaults(func=fn)

    sp = sub.add_parser("bounds", help="recursive Lipschitz/value bounds")
    circuit_arg(sp)
    sp.add_argument("--diam", type=float, required=True)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_bounds)

    sp = sub.add_parser("smooth", help="rewrite relu gates as softrelu")
    circuit_arg(sp)
    for flag in ("--delta", "--eps", "--gamma", "--diam"):
        sp.add_argument(flag, type=float, required=True)
    sp.add_argument("--half-width", type=float, default=None)
    sp.add_argument("--out", required=True, help="smoothed circuit JSON")
    sp.add_argument("--report", default=None, help="bounds report JSON (default <out>.report.json)")
    sp.set_defaults(func=cmd_smooth)

    sp = sub.add_parser("solve", help="search for a Goldstein stationary point")
    circuit_arg(sp)
    sp.add_argument("--smooth", action="store_true")
    sp.add_argument("--gamma", type=float, default=None)
    sp.add_argument("--diam", type=float, default=2.0)
    sp.add_argument("--delta", type=float, required=True)
    sp.add_argument("--eps", type=float, required=True)
    sp.add_argument("--x0", default="zeros")
    sp.add_argument("--algo", choices=("det", "rand-ls", "sgd"), default="det")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--max-outer", type=int, default=1000,
                    help="outer iterations (sgd: number of steps)")
    sp.add_argument("--step-size", type=float, default=None)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("certify", help="certify (delta, eps)-stationarity by sampling")
    circuit_arg(sp)
    sp.add_argument("--x", required=True)
    sp.add_argument("--delta", type=float, required=True)
    sp.add_argument("--samples", type=int, default=64)
    sp.add_argument("--policy", choices=POLICIES, default="lds")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_certify)

    sp = sub.add_parser("adversary", help="run a solver against a resisting oracle")
    sp.add_argument("--mode", choices=("first-order", "grad-only"), required=True)
    sp.add_argument("--dim", type=int, default=10)
    sp.add_argument("--budget", type=int, required=True)
    sp.add_argument("--delta", type=float, required=True)
    sp.add_argument("--eps", type=float, required=True)
    sp.add_argument("--L", type=float, default=7.0)
    sp.add_argument("--Delta", type=float, default=1.0)
    sp.add_argument("--algo", choices=("det", "rand-ls", "sgd"), default="det")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--hull-samples", type=int, default=100_000)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_adversary)

    sp = sub.add_parser("bench", help="run a benchmark spec")
    sp.add_argument("--spec", required=True, help="bench spec JSON")
    sp.add_argument("--out", default=None)
    sp.add_argument("--workers", type=int, default=None,
                    help="parallel workers (env GOLDSTEIN_WORKERS)")
    sp.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"goldstein: error: {exc}\n")
        return 1
    except Exception as exc:
        sys.stderr.write(f"goldstein {args.command}: {type(exc).__name__}: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``mipt <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 numerical failure. Every command
writes its output atomically next to a ``<out>.manifest.json`` sidecar that
records the argument vector, all parameters, the seed and timing.
"""

import argparse
import json
import os
import sys
import time
import warnings

import numpy as np

from mipt import __version__, analysis, circuit, dense, dqite
from mipt._accel import backend_name
from mipt._io import atomic_write
from mipt.stabilizer import ImpossibleOutcomeError


class UsageError(Exception):
    pass


class NumericalError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _floats(s):
    try:
        return float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {s!r}") from None


def _prob(s):
    v = _floats(s)
    if not 0 <= v <= 1:
        raise argparse.ArgumentTypeError(f"{v} is not in [0, 1]")
    return v


def _born(s):
    v = _floats(s)
    if not 0 < v <= 1:
        raise argparse.ArgumentTypeError("P must lie in (0, 1]")
    return v


def _positive(s):
    v = _floats(s)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"{v} must be positive")
    return v


def _poly_term(s):
    try:
        c, a, b = s.split(":")
        return float(c), (int(a), int(b))
    except ValueError:
        raise argparse.ArgumentTypeError(f"poly term must be coeff:deg_n:deg_M, got {s!r}") from None


# ----------------------------------------------------------------- manifest


def _params(args):
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}


def write_manifest(args, outputs, started, argv):
    doc = {
        "command": args.command,
        "argv": list(argv),
        "parameters": _params(args),
        "master_seed": getattr(args, "seed", None),
        "version": __version__,
        "backend": backend_name(),
        "outputs": [os.path.abspath(o) for o in outputs],
        "wall_clock_seconds": time.time() - started,
    }
    payload = json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n"
    atomic_write(outputs[0] + ".manifest.json", payload)


def _dump(doc):
    return json.dumps(doc, indent=2, sort_keys=True, default=analysis._json_default) + "\n"


# ----------------------------------------------------------------- commands


def cmd_record(args):
    try:
        spec = circuit.CircuitSpec(n=args.n, L=args.layers, p=args.p, gate_family=args.family,
                                   seed=args.seed, initial_bitstring=args.bitstring)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if spec.gate_family == "haar" and spec.n > circuit.DENSE_CIRCUIT_CAP:
        raise UsageError(f"haar family limited to n <= {circuit.DENSE_CIRCUIT_CAP}")
    out = args.out or f"traj_n{spec.n}_L{spec.L}_p{spec.p:g}_{spec.gate_family}_s{spec.seed}.traj.json"
    record = circuit.generate_and_record(spec)
    atomic_write(out, circuit.serialize(record))
    print(f"wrote {out}: {len(record.gates)} gates, {record.M} measurements")
    return [out]


def cmd_mutualinfo(args):
    r_values = args.r or list(range(1, args.n // 2))
    layers = args.layers or args.n
    try:
        curves = analysis.sweep_mutual_info([(args.n, layers, p) for p in args.p], r_values, args.traj,
                                            stat=args.stat, master_seed=args.seed, jobs=args.jobs)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    analysis.write_mutual_info_csv(args.out, curves)
    for c in curves:
        print(f"p={c.p:g}: " + " ".join(f"{v:.3g}" for v in c.values))
    return [args.out]


def _collapse_branch(name, pts, args):
    res = analysis.collapse_branch(pts, name, p_c=args.p_c, nu_bounds=(args.nu_min, args.nu_max), seed=args.seed)
    analysis.warn_if_degenerate(res)
    return res


def cmd_collapse(args):
    bad = [n for n in args.n if n % 16]
    if bad:
        raise UsageError(f"n must be divisible by 16 (r = n/16): {bad}")
    if len(set(args.n)) < 3:
        raise UsageError("collapse needs at least three distinct n")
    report = {"p_c": args.p_c, "n": args.n, "log": "natural"}
    if args.synthetic is not None:
        master = analysis.ExpFit(2.68, 0.42, 0.68, 0.0, 0.0)
        pts = analysis.synthetic_collapse_points(args.synthetic, master, ns=args.n, p_c=args.p_c,
                                                 noise=args.noise, seed=args.seed)
        report["planted_nu"] = args.synthetic
        report["area"] = _collapse_branch("area", pts, args).to_dict()
    else:
        for name, ps in (("area", args.p_area), ("volume", args.p_volume)):
            if not ps:
                continue
            pts = analysis.collapse_points(args.n, ps, args.traj, stat=args.stat, master_seed=args.seed,
                                           jobs=args.jobs)
            report[name] = _collapse_branch(name, pts, args).to_dict()
    analysis.write_json(args.out, report)
    for name in ("area", "volume"):
        if name in report:
            r = report[name]
            print(f"{name}: nu={r['nu']:.4g} residual={r['residual']:.3g} fit_e={r['fit']['e']:.3g}")
    return [args.out]


def _config(args, beta, r=None):
    return dqite.QiteConfig(beta=beta, dtau=args.dtau, r=args.r if r is None else r, lam=args.lam, tomography=args.tomography,
                            shots=args.shots, shot_schedule=args.shot_schedule, seed=args.seed)


def cmd_replay(args):
    with open(args.trajectory, "rb") as fh:
        try:
            record = circuit.deserialize(fh.read())
        except (circuit.RecordFormatError, ValueError, KeyError) as exc:
            raise UsageError(f"cannot read {args.trajectory}: {exc}") from exc
    if args.family and record.spec.gate_family != args.family:
        raise UsageError(f"record family {record.spec.gate_family!r} does not match --family {args.family}")
    if record.spec.n > circuit.DENSE_CIRCUIT_CAP:
        raise UsageError(f"dense replay limited to n <= {circuit.DENSE_CIRCUIT_CAP}")
    learned = None
    if args.learned:
        with open(args.learned, "rb") as fh:
            try:
                learned = dqite.load_learned(fh.read())
            except (ValueError, KeyError) as exc:
                raise UsageError(f"cannot read {args.learned}: {exc}") from exc
    try:
        config = _config(args, args.beta)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", dqite.BudgetWarning)
        try:
            out_learned, _, diag = dqite.replay_trajectory(record, config, learned=learned, epsilon=args.epsilon,
                                                           beta_policy=args.beta_policy)
        except ValueError as exc:
            if isinstance(exc, (dense.VanishingNormError, ImpossibleOutcomeError)):
                raise
            raise UsageError(str(exc)) from exc
    base = args.trajectory[: -len(".traj.json")] if args.trajectory.endswith(".traj.json") else args.trajectory
    out = args.out or base + ".replay.json"
    outputs = [out]
    if learned is None:
        lpath = args.save_learned or base + ".learned.json"
        atomic_write(lpath, dqite.dump_learned(out_learned))
        outputs.append(lpath)
    report = {
        "trajectory": os.path.abspath(args.trajectory),
        "M": record.M,
        "epsilon": args.epsilon,
        "epsilon_beta": diag.epsilon_beta,
        "beta_policy": args.beta_policy,
        "beta": diag.beta,
        "born_p": diag.born_p,
        "local_infidelity": diag.local_infidelity,
        "cumulative_infidelity": diag.cumulative_infidelity,
        "final_fidelity": diag.final_fidelity,
        "budget_ok": diag.budget_ok,
        "budget_warnings": len(caught),
        "learned_from": os.path.abspath(args.learned) if args.learned else None,
        "log": "natural",
    }
    atomic_write(out, _dump(report))
    print(f"M={record.M} final fidelity {diag.final_fidelity:.6f}; budget {'met' if diag.budget_ok else 'exceeded'}")
    return outputs


def cmd_fidelity_sweep(args):
    try:
        betas = analysis.beta_grid(args.beta)
        config = _config(args, max(max(betas), args.dtau), r=1)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if args.n > circuit.DENSE_CIRCUIT_CAP:
        raise UsageError(f"n={args.n} exceeds the dense cap {circuit.DENSE_CIRCUIT_CAP}")
    layers = args.layers or args.n
    try:
        rows = analysis.infidelity_sweep([(args.n, layers, p) for p in args.p], args.r, betas, config, args.traj,
                                         master_seed=args.seed, target=args.target, jobs=args.jobs)
    except ValueError as exc:
        if isinstance(exc, (dense.VanishingNormError, ImpossibleOutcomeError)):
            raise
        raise UsageError(str(exc)) from exc
    analysis.write_infidelity_csv(args.out, rows)
    bmax = max(betas)
    for p in args.p:
        for r in args.r:
            print(f"p={p:g} r={r} beta={bmax:g}: mean infidelity "
                  f"{analysis.mean_infidelity(rows, p=p, r=r, beta=bmax):.4g}")
    return [args.out]


def cmd_bounds(args):
    try:
        report = analysis.eval_bounds_report(args.P, args.M, args.epsilon, args.gap, args.dtau)
        terms = args.poly or [(1.0, (1, 1))]
        fb = analysis.failure_probability_bound(args.M, args.n, ([c for c, _ in terms], [d for _, d in terms]))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    report["failure"] = fb.__dict__
    atomic_write(args.out, _dump(report))
    print(_dump(report), end="")
    return [args.out]


def cmd_amplify(args):
    modes = ["exact-projection", "dqite"] if args.mode == "both" else [args.mode]
    try:
        results = [analysis.amplification_gadget(args.k_amp, args.m, mode=m,
                                                 config=dqite.QiteConfig(beta=args.beta, dtau=args.dtau, r=1)
                                                 if m == "dqite" else None) for m in modes]
    except ValueError as exc:
        if isinstance(exc, dense.VanishingNormError):
            raise
        raise UsageError(str(exc)) from exc
    doc = {"k_amp": args.k_amp, "m": args.m, "results": [r.__dict__ for r in results]}
    atomic_write(args.out, _dump(doc))
    for r in results:
        probs = " ".join(f"{p:.6f}" for p in r.probabilities)
        print(f"{r.mode}: step probabilities [{probs}] final fidelity {r.final_fidelity:.6f}")
    return [args.out]


# ------------------------------------------------------------------ parser


def build_parser():
    p = _Parser(prog="mipt", description="Measured random circuits, cluster correlations and deterministic postselection.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, seed=True, jobs=False):
        if seed:
            sp.add_argument("--seed", type=int, default=0, help="master seed")
        if jobs:
            sp.add_argument("--jobs", type=int, default=1, help="worker processes")

    def qite(sp, beta=3.0):
        sp.add_argument("--beta", type=_positive, default=beta)
        sp.add_argument("--dtau", type=_positive, default=0.1)
        sp.add_argument("--r", type=int, default=2)
        sp.add_argument("--lam", type=float, default=1e-8, help="Tikhonov regularisation")
        sp.add_argument("--tomography", choices=["exact", "sampled"], default="exact")
        sp.add_argument("--shots", type=int, default=1000)
        sp.add_argument("--shot-schedule", choices=["fixed", "nbeta"], default="fixed")

    sp = sub.add_parser("record", help="simulate one trajectory and store it")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--layers", type=int, required=True)
    sp.add_argument("--p", type=_prob, required=True)
    sp.add_argument("--family", choices=["clifford", "haar"], default="clifford")
    sp.add_argument("--bitstring", default=None, help="initial computational basis state")
    sp.add_argument("--out", default=None)
    common(sp)
    sp.set_defaults(func=cmd_record)

    sp = sub.add_parser("mutualinfo", help="cluster mutual information versus r")
    sp.add_argument("--n", type=int, default=64)
    sp.add_argument("--layers", type=int, default=None, help="defaults to n")
    sp.add_argument("--p", type=_prob, nargs="+", default=[0.05, 0.1, 0.16, 0.3, 0.5])
    sp.add_argument("--r", type=int, nargs="+", default=None)
    sp.add_argument("--traj", type=int, default=200)
    sp.add_argument("--stat", choices=list(analysis.STATS), default="median")
    sp.add_argument("--out", default="mutualinfo.csv")
    common(sp, jobs=True)
    sp.set_defaults(func=cmd_mutualinfo)

    sp = sub.add_parser("collapse", help="finite-size collapse at r = n/16")
    sp.add_argument("--n", type=int, nargs="+", default=[32, 64, 128])
    sp.add_argument("--p-area", type=_prob, nargs="*", default=[0.2, 0.25, 0.3, 0.35, 0.4, 0.5])
    sp.add_argument("--p-volume", type=_prob, nargs="*", default=[0.02, 0.04, 0.06, 0.08, 0.1, 0.12, 0.14])
    sp.add_argument("--p-c", type=_prob, default=analysis.P_C)
    sp.add_argument("--nu-min", type=_positive, default=0.3)
    sp.add_argument("--nu-max", type=_positive, default=3.0)
    sp.add_argument("--traj", type=int, default=100)
    sp.add_argument("--stat", choices=list(analysis.STATS), default="mean")
    sp.add_argument("--synthetic", type=_positive, default=None, metavar="NU",
                    help="collapse synthetic master-curve data with this planted exponent")
    sp.add_argument("--noise", type=float, default=0.0, help="relative noise for --synthetic")
    sp.add_argument("--out", default="collapse.json")
    common(sp, jobs=True)
    sp.set_defaults(func=cmd_collapse)

    sp = sub.add_parser("replay", help="deterministic replay of a recorded trajectory")
    sp.add_argument("trajectory")
    qite(sp, beta=1.0)
    sp.add_argument("--epsilon", type=_positive, default=0.1)
    sp.add_argument("--beta-policy", choices=["budget", "fixed"], default="budget")
    sp.add_argument("--family", choices=["clifford", "haar"], default=None, help="require this gate family")
    sp.add_argument("--learned", default=None, help="apply stored learned unitaries instead of learning")
    sp.add_argument("--save-learned", default=None)
    sp.add_argument("--out", default=None)
    common(sp)
    sp.set_defaults(func=cmd_replay)

    sp = sub.add_parser("fidelity-sweep", help="DQITE infidelity versus imaginary time")
    sp.add_argument("--n", type=int, default=10)
    sp.add_argument("--layers", type=int, default=None, help="defaults to n")
    sp.add_argument("--p", type=_prob, nargs="+", default=[0.5, 0.1])
    sp.add_argument("--r", type=int, nargs="+", default=[1, 2, 3])
    sp.add_argument("--beta", default="0:3:0.25", help="grid start:stop:step or comma list")
    sp.add_argument("--dtau", type=_positive, default=0.1)
    sp.add_argument("--lam", type=float, default=1e-8)
    sp.add_argument("--tomography", choices=["exact", "sampled"], default="exact")
    sp.add_argument("--shots", type=int, default=1000)
    sp.add_argument("--shot-schedule", choices=["fixed", "nbeta"], default="fixed")
    sp.add_argument("--traj", type=int, default=20)
    sp.add_argument("--target", choices=["sampled", "born-weighted"], default="sampled")
    sp.add_argument("--out", default="fidelity.csv")
    common(sp, jobs=True)
    sp.set_defaults(func=cmd_fidelity_sweep)

    sp = sub.add_parser("bounds", help="error budget, imaginary time and runtime estimates")
    sp.add_argument("--P", type=_born, required=True)
    sp.add_argument("--M", type=int, required=True)
    sp.add_argument("--epsilon", type=_positive, required=True)
    sp.add_argument("--gap", type=_positive, default=dqite.GAP)
    sp.add_argument("--dtau", type=_positive, default=0.1)
    sp.add_argument("--n", type=int, default=64, help="qubit count for the failure bound")
    sp.add_argument("--poly", type=_poly_term, nargs="+", default=None,
                    help="poly(n, M) terms coeff:deg_n:deg_M (default 1:1:1 = n*M)")
    sp.add_argument("--out", default="bounds.json")
    sp.set_defaults(func=cmd_bounds)

    sp = sub.add_parser("amplify", help="controlled-Hadamard amplification gadget")
    sp.add_argument("--k-amp", type=int, default=4)
    sp.add_argument("--m", type=int, default=12)
    sp.add_argument("--mode", choices=["exact-projection", "dqite", "both"], default="exact-projection")
    sp.add_argument("--beta", type=_positive, default=4.0, help="imaginary time per ancilla in dqite mode")
    sp.add_argument("--dtau", type=_positive, default=0.05)
    sp.add_argument("--out", default="amplify.json")
    sp.set_defaults(func=cmd_amplify)
    return p


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # usage errors exit 1, --help/--version exit 0
        return exc.code if isinstance(exc.code, int) else 1
    started = time.time()
    try:
        outputs = args.func(args)
    except UsageError as exc:
        print(f"mipt {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"mipt {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (dense.VanishingNormError, ImpossibleOutcomeError, dqite.SolverError, np.linalg.LinAlgError,
            FloatingPointError, RuntimeError) as exc:
        print(f"mipt {args.command}: numerical failure: {exc}", file=sys.stderr)
        return 2
    write_manifest(args, outputs, started, argv)
    return 0


if __name__ == "__main__":
    sys.exit(main())

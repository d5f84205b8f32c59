"""Command line front end.

Exit codes: 0 ok, 2 bad arguments or unreadable model, 3 numerical failure,
4 non-convergence under ``--strict``, 5 information fixed point not certified.
"""

import argparse
import os
import sys
import time

import numpy as np

from . import convergence, engine, model as modelmod, modelio, netsim, oracle

EXIT_OK, EXIT_ARGS, EXIT_NUMERIC, EXIT_NOT_CONVERGED, EXIT_UNCERTIFIED = 0, 2, 3, 4, 5


class UsageError(Exception):
    pass


def _env_seed(default):
    value = os.environ.get("GABP_SEED")
    if value is None:
        return default
    try:
        return int(value)
    except ValueError as exc:
        raise UsageError(f"GABP_SEED must be an integer, got {value!r}") from exc


def _emit(doc, path):
    text = modelio.dumps(doc, indent=2) + "\n"
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _load(path):
    try:
        model = modelio.load(path)
    except (OSError, modelio.ModelFormatError) as exc:
        raise UsageError(str(exc)) from exc
    problems = modelmod.validate(model)
    if problems:
        raise UsageError("invalid model: " + "; ".join(map(str, problems)))
    return model


def _vec(x):
    return [float(v) for v in np.atleast_1d(x)]


def cmd_generate(args):
    seed = _env_seed(args.seed)
    n = args.n if args.n is not None else args.nodes
    if n is None:
        raise UsageError("--n/--nodes is required")
    try:
        if args.kind == "gmrf":
            if args.coupling is None:
                raise UsageError("--coupling is required for a GMRF")
            m = modelmod.generate_gmrf(n, args.topology, args.coupling, seed, p=args.p)
        else:
            dims = [int(d) for d in str(args.dim).split(",")]
            if len(dims) == 1:
                dims = dims[0]
            m = modelmod.generate_linear(n, dims, args.topology, seed, p=args.p)
    except modelmod.GenerationError as exc:
        raise UsageError(str(exc)) from exc
    if args.output:
        modelio.save(m, args.output)
    else:
        sys.stdout.write(modelio.model_text(m))
    return EXIT_OK


def cmd_run(args):
    m = _load(args.model)
    config = engine.EngineConfig(
        eta=args.eta, max_iter=args.max_iter, init_seed=_env_seed(args.init_seed), record=False, threads=args.threads
    )
    started = time.perf_counter()
    try:
        result = engine.run(m, config)
    except engine.NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    report = {
        "model_digest": modelio.digest(m),
        "kind": m.kind,
        "config": {"eta": args.eta, "max_iter": args.max_iter, "init_seed": config.init_seed},
        "converged": result.converged,
        "iterations": result.iterations,
        "means": {str(b.node_id): _vec(b.mean) for b in result.beliefs},
    }
    if args.oracle:
        try:
            ex = oracle.exact(m)
        except oracle.ImproperModelError as exc:
            report["oracle_error"] = str(exc)
        else:
            report["oracle_means"] = {str(k): _vec(v) for k, v in ex.means.items()}
            errs = [float(np.max(np.abs(b.mean - ex.means[b.node_id]))) for b in result.beliefs]
            report["max_error"] = max(errs) if all(np.isfinite(errs)) else None
    if args.certify:
        try:
            report["convergence"] = convergence.certify(m, centralized=True).to_dict()
        except convergence.FixedPointNotCertified as exc:
            report["convergence"] = {"error": str(exc)}
    if args.timing:
        report["seconds"] = time.perf_counter() - started
    _emit(report, args.output)
    if args.strict and not result.converged:
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_certify(args):
    m = _load(args.model)
    try:
        report = convergence.certify(m, centralized=args.centralized, tol=args.tol, max_iter=args.fp_max_iter)
    except convergence.FixedPointNotCertified as exc:
        print(f"fixed point not certified: {exc}", file=sys.stderr)
        return EXIT_UNCERTIFIED
    doc = {"model_digest": modelio.digest(m), "kind": m.kind}
    doc.update(report.to_dict())
    if args.distributed:
        sim = netsim.simulate(m, phases=("info_fixed_point", "certify"), tol=args.tol, max_iter=args.fp_max_iter)
        doc["distributed"] = {
            "verdict": sim.report.verdict,
            "local_radii": {str(k): v for k, v in sorted(sim.report.local_radii.items())},
            "agrees_with_central": sim.report.local_radii == report.local_radii and sim.report.verdict == report.verdict,
            "locality": "pass" if netsim.verify_locality(sim.trace, m) else "fail",
            "payloads": len(sim.trace.records),
        }
        if args.trace:
            with open(args.trace, "w") as fh:
                sim.trace.export(fh)
    _emit(doc, args.output)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="gabp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a random model file")
    g.add_argument("--kind", choices=("gmrf", "linear"), required=True)
    g.add_argument("--n", type=int)
    g.add_argument("--nodes", type=int)
    g.add_argument("--dim", default="1", help="node dimension, or a comma separated list")
    g.add_argument("--topology", choices=modelmod.TOPOLOGIES, default="chain")
    g.add_argument("--coupling", type=float)
    g.add_argument("--p", type=float, help="edge probability for erdos_renyi")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("-o", "--output")
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="run Gaussian BP on a model file")
    r.add_argument("model")
    r.add_argument("--eta", type=float, default=1e-9)
    r.add_argument("--max-iter", type=int, default=1000)
    r.add_argument("--init-seed", type=int)
    r.add_argument("--oracle", action="store_true")
    r.add_argument("--certify", action="store_true", help="attach the convergence report")
    r.add_argument("--strict", action="store_true")
    r.add_argument("--threads", type=int, default=1)
    r.add_argument("--timing", action="store_true", help="add wall time (makes reports non-reproducible)")
    r.add_argument("-o", "--output")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("certify", help="evaluate the local convergence certificate")
    c.add_argument("model")
    c.add_argument("--centralized", action="store_true")
    c.add_argument("--distributed", action="store_true")
    c.add_argument("--tol", type=float, default=convergence.FP_TOL)
    c.add_argument("--fp-max-iter", type=int, default=convergence.FP_MAX_ITER)
    c.add_argument("--trace", help="write the simulator payload trace here")
    c.add_argument("-o", "--output")
    c.set_defaults(func=cmd_certify)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if getattr(args, "eta", 1.0) <= 0 or getattr(args, "max_iter", 0) < 0:
            raise UsageError("--eta must be positive and --max-iter non-negative")
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARGS

"""Command line entry point.

    lacg run --instance R101.25 --mode gm --la-neighbors 6 --out r101.json
    lacg sweep --instances C101.25 R101.25 --modes gm cg --k 0 4 6 --out sweep.csv
    lacg dump --instance C101.25 --out c101.json

``run`` is the default command, so ``lacg --instance ...`` works too.
Instances are Solomon text files, JSON dumps written by ``dump``, or the
built-in names (``R101``; ``R101.25`` keeps the first 25 customers).

Exit codes: 0 converged, 2 iteration/time limit hit, 1 error or bad usage.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources

from .instance import Instance, InstanceError, load_solomon, normalize, parse_solomon
from .lp import ENV_VAR, BackendError, resolve_backend
from .master import Config, MasterError, run_gm, run_standard_cg
from .report import RunReport, append_csv, to_csv

EXIT_OK, EXIT_ERROR, EXIT_LIMIT = 0, 1, 2
ORACLE_MAX = 8
COMMANDS = ("run", "sweep", "dump")

log = logging.getLogger("lacg")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 means "limit hit" here
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def builtin_names() -> list[str]:
    folder = resources.files("lacg") / "data" / "solomon"
    return sorted(p.name[:-4] for p in folder.iterdir() if p.name.endswith(".txt"))


def load_instance(spec: str, time_scale: int = 10, max_customers: int | None = None) -> Instance:
    """Resolve a path or built-in name to a normalized instance."""
    if os.path.exists(spec):
        if spec.endswith(".json"):
            with open(spec) as fh:
                inst = normalize(Instance.from_json(fh.read()))
            if max_customers is not None and max_customers < inst.n:
                raise InstanceError("--max-customers is not supported for JSON instances")
            return inst
        return load_solomon(spec, time_scale, max_customers)
    m = re.fullmatch(r"([A-Za-z]+\d+)(?:\.(\d+))?", spec)
    if m and m.group(1).upper() in builtin_names():
        count = max_customers if max_customers is not None else (int(m.group(2)) if m.group(2) else None)
        path = resources.files("lacg") / "data" / "solomon" / f"{m.group(1).upper()}.txt"
        return normalize(parse_solomon(path.read_text(), time_scale, count))
    raise FileNotFoundError(f"no such instance file or built-in name: {spec}")


def _common(p):
    p.add_argument("--la-neighbors", type=int, default=6, metavar="K")
    p.add_argument("--alpha", type=float, default=0.2)
    p.add_argument("--time-scale", type=int, default=10, metavar="S")
    p.add_argument("--epsilon", type=float, default=1e-6)
    p.add_argument("--max-seconds", type=float, default=None, metavar="T")
    p.add_argument("--max-customers", type=int, default=None, metavar="N")
    p.add_argument("--prune", choices=("on", "off"), default="off")
    p.add_argument("--backend", default=None, help=f"LP backend (default from ${ENV_VAR} or highs-ds)")
    p.add_argument("--no-ilp", action="store_true", help="skip the integer postprocessing solve")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lacg", description="Column generation for CVRPTW with LA-arc pricing.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    run = sub.add_parser("run", help="solve one instance")
    run.add_argument("--instance", required=True, metavar="PATH")
    run.add_argument("--mode", choices=("gm", "cg"), default="gm")
    _common(run)
    run.add_argument("--out", metavar="PATH", help="JSON report file, or CSV (appended) if it ends in .csv")
    run.add_argument("--trace", metavar="PATH", help="write the pricing trace here")
    run.add_argument("--oracle-check", action="store_true",
                     help=f"compare with the route-enumeration LP (at most {ORACLE_MAX} customers)")

    sw = sub.add_parser("sweep", help="cross product of instances, modes and k values")
    sw.add_argument("--instances", nargs="+", required=True, metavar="PATH")
    sw.add_argument("--modes", nargs="+", choices=("gm", "cg"), default=["gm", "cg"])
    sw.add_argument("--k", nargs="+", type=int, default=[6], metavar="K", dest="k_list")
    _common(sw)
    sw.add_argument("--out", metavar="PATH", help="CSV file (default: stdout)")
    sw.add_argument("--jobs", type=int, default=1)

    dump = sub.add_parser("dump", help="write the normalized instance as JSON")
    dump.add_argument("--instance", required=True, metavar="PATH")
    dump.add_argument("--time-scale", type=int, default=10, metavar="S")
    dump.add_argument("--max-customers", type=int, default=None, metavar="N")
    dump.add_argument("--out", metavar="PATH")
    return parser


def config_from(args, k=None) -> Config:
    return Config(
        la_neighbors=args.la_neighbors if k is None else k,
        alpha=args.alpha,
        epsilon=args.epsilon,
        max_seconds=args.max_seconds,
        prune=args.prune == "on",
        backend=args.backend,
        ilp=not args.no_ilp,
    )


def run_one(instance: str, mode: str, config: Config, time_scale=10, max_customers=None,
            trace: list | None = None) -> RunReport:
    """One pipeline run; failures come back as an error report."""
    try:
        inst = load_instance(instance, time_scale, max_customers)
        runner = run_gm if mode == "gm" else run_standard_cg
        return runner(inst, config, trace=trace)
    except (OSError, InstanceError, MasterError, BackendError, ValueError) as exc:
        return RunReport.failed(instance, mode, config.la_neighbors, str(exc))


def _sweep_job(job):
    instance, mode, config, scale, count = job
    return run_one(instance, mode, config, scale, count)


def cmd_run(args) -> int:
    config = config_from(args)
    resolve_backend(args.backend)
    inst = load_instance(args.instance, args.time_scale, args.max_customers)
    if args.oracle_check and inst.n > ORACLE_MAX:
        raise UsageError(f"--oracle-check needs at most {ORACLE_MAX} customers, instance has {inst.n}")
    trace = [] if args.trace else None
    runner = run_gm if args.mode == "gm" else run_standard_cg
    report = runner(inst, config, trace=trace)
    if trace is not None:
        with open(args.trace, "w") as fh:
            fh.write("\n".join(trace) + "\n")
    print(report.to_json(indent=2))
    if args.out:
        if args.out.endswith(".csv"):
            append_csv(args.out, report)
        else:
            with open(args.out, "w") as fh:
                fh.write(report.to_json(indent=2) + "\n")
    if args.oracle_check:
        from .oracle import enumeration_lp

        target, _ = enumeration_lp(inst, args.backend)
        ok = report.lp_objective is not None and abs(report.lp_objective - target) <= 1e-6 * max(1.0, abs(target))
        print(f"oracle-check: {args.mode} {report.lp_objective} vs enumeration {target}: "
              f"{'ok' if ok else 'MISMATCH'} ({report.iterations} iterations)", file=sys.stderr)
        if not ok:
            return EXIT_ERROR
    return EXIT_OK if report.converged else EXIT_LIMIT


def cmd_sweep(args) -> int:
    resolve_backend(args.backend)
    jobs = [(i, m, config_from(args, k), args.time_scale, args.max_customers)
            for i in args.instances for m in args.modes for k in args.k_list]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            reports = list(pool.map(_sweep_job, jobs))
        if args.out:
            for r in reports:
                append_csv(args.out, r)
    else:
        reports = []
        for job in jobs:
            reports.append(_sweep_job(job))
            log.info("%s %s k=%d: %s", job[0], job[1], job[2].la_neighbors, reports[-1].status)
            if args.out:
                # written as we go so a long sweep keeps its finished rows
                append_csv(args.out, reports[-1])
    if not args.out:
        sys.stdout.write(to_csv(reports))
    if any(r.status == "error" for r in reports):
        return EXIT_ERROR
    return EXIT_OK if all(r.converged for r in reports) else EXIT_LIMIT


def cmd_dump(args) -> int:
    inst = load_instance(args.instance, args.time_scale, args.max_customers)
    text = json.dumps(inst.to_dict(), indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return EXIT_OK


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    lead = 0
    while lead < len(argv) and argv[lead] in ("-v", "--verbose"):
        lead += 1
    if lead < len(argv) and argv[lead] not in COMMANDS and argv[lead] not in ("-h", "--help"):
        argv.insert(lead, "run")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().rstrip() + "\nlacg: error: a command is required")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return {"run": cmd_run, "sweep": cmd_sweep, "dump": cmd_dump}[args.command](args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_ERROR
    except (OSError, InstanceError, MasterError, BackendError, ValueError) as exc:
        print(f"lacg: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

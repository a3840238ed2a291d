"""Command-line entry point: ``nctcp <subcommand> [--config FILE] ...``."""

from __future__ import annotations

import argparse
import os
import sys

from . import experiments as ex
from .model_nc import nc_average_throughput, recommend_redundancy, rounds_for_duration
from .model_tcp import DomainError, FlowParams, tcp_throughput

OUT_ENV = "NCTCP_OUT"


def _common(sub: argparse.ArgumentParser, config_required: bool = False):
    sub.add_argument("--config", required=config_required, help="TOML experiment file")
    sub.add_argument("--seed", type=int, help="base seed (replication r uses seed + r)")
    sub.add_argument("--out", help=f"output directory (default: config 'output' or ${OUT_ENV})")
    sub.add_argument("--replications", type=int, help="override the replication count")
    sub.add_argument("--workers", type=int, default=1, help="parallel worker processes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nctcp", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    a = subs.add_parser("analytic", help="closed-form TCP and TCP/NC throughput")
    _common(a)
    a.add_argument("--p", type=float, action="append", help="end-to-end loss rate (repeatable)")
    a.add_argument("--R", type=float, default=1.0, help="redundancy factor")
    a.add_argument("--srtt", type=float, help="SRTT in seconds for the NC model (default: RTT)")
    a.add_argument("--rtt", type=float, default=0.8)
    a.add_argument("--duration", type=float, default=1000.0)

    s = subs.add_parser("simulate", help="run a simulation experiment")
    _common(s, config_required=True)

    p = subs.add_parser("provision", help="base-station provisioning sweep")
    _common(p, config_required=True)

    t = subs.add_parser("table1", help="reproduce the reference throughput table")
    _common(t)

    c = subs.add_parser("compare", help="model vs simulation deviation report")
    _common(c)
    c.add_argument("--nc-tol", type=float, default=0.05, help="relative tolerance for NC rows")
    c.add_argument("--tcp-factor", type=float, default=2.0, help="factor band for TCP rows")
    return parser


def _spec(args, kind: str, default: ex.ExperimentSpec | None = None) -> ex.ExperimentSpec:
    overrides = {"base_seed": args.seed, "replications": args.replications}
    if args.config:
        spec = ex.load_spec(args.config, **overrides)
        if spec.kind != kind:
            raise ex.ConfigError(f"{args.config}: field 'kind': expected {kind!r} for this subcommand, got {spec.kind!r}")
        return spec
    return ex.with_overrides(default or ex.ExperimentSpec(kind=kind), **overrides)


def _out_dir(args, spec: ex.ExperimentSpec) -> str:
    return args.out or (spec.output if args.config else os.environ.get(OUT_ENV, spec.output))


def _print_table(columns, rows):
    print(",".join(columns))
    for row in rows:
        print(",".join(ex._fmt(row[c]) for c in columns))


def _analytic_flags(args) -> int:
    cols = ("p", "R", "srtt_s", "tcp_mbps", "nc_mbps", "recommended_R")
    rows = []
    for p in args.p:
        prm = FlowParams(loss_prob=p, rtt=args.rtt, redundancy=args.R, srtt=args.srtt)
        try:
            tcp = tcp_throughput(prm).mbps
        except DomainError:
            tcp = float("nan")
        n = rounds_for_duration(args.duration, prm.srtt)
        rows.append({"p": p, "R": args.R, "srtt_s": prm.srtt, "tcp_mbps": tcp,
                     "nc_mbps": nc_average_throughput(prm, n).mbps,
                     "recommended_R": recommend_redundancy(p, prm.wmax)})
    _print_table(cols, rows)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        ex.write_csv(os.path.join(args.out, "analytic.csv"), cols, rows)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "analytic" and args.p and not args.config:
            return _analytic_flags(args)
        if args.command == "analytic":
            spec = _spec(args, "analytic_only",
                         ex.ExperimentSpec(kind="analytic_only", p=tuple(p for p, _ in ex.TABLE1_ROWS)))
        elif args.command == "simulate":
            spec = ex.load_spec(args.config, base_seed=args.seed, replications=args.replications)
            if spec.kind not in ("erasure_sweep", "redundancy_sweep", "congestion", "table1"):
                raise ex.ConfigError(f"{args.config}: field 'kind': {spec.kind!r} is not a simulation kind")
        elif args.command == "provision":
            spec = _spec(args, "provision_sweep")
        else:
            spec = _spec(args, "table1")
    except (ex.ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    result = ex.run_experiment(spec, workers=args.workers)
    if args.command == "compare":
        devs = ex.table1_deviations(result.table("table1"), args.nc_tol, args.tcp_factor)
        result.tables["deviations"] = (ex.DEVIATION_COLUMNS, ex.deviation_rows(devs))
    paths = result.write(_out_dir(args, spec))
    shown = "deviations" if args.command == "compare" else next(iter(
        n for n in ("table1", "analytic", "provision", "aggregate") if n in result.tables))
    cols, rows = result.tables[shown]
    try:
        _print_table(cols, rows)
    except BrokenPipeError:
        # reader went away; the CSVs are already on disk
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
    for path in paths:
        print(f"wrote {path}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())

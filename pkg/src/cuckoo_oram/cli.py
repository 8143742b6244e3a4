"""``cuckoo-oram`` command line: sweep, soak, oblivious, overhead.

Exit status: 0 when every check passes, 1 on a failed check, 2 on a
usage error.
"""

import argparse
import json
import sys

from .errors import UsageError
from .experiments import (ExperimentConfig, run_obliviousness_suite, run_oracle_soak,
                          run_overhead_scaling, run_stash_sweep)


def _common(p, mode="functional", requests=None):
    p.add_argument("--variant", choices=["prf", "tree"], default="prf")
    p.add_argument("--mode", choices=["functional", "oblivious"], default=mode)
    p.add_argument("--n", type=int, action="append", help="RAM size; repeat for a ladder")
    p.add_argument("--requests", action="append",
                   help="episodes per run: 5000, n, 2n, 0.25n, n/4 (repeatable)")
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--epsilon", type=float, default=0.2)
    p.add_argument("--c", type=int, default=2)
    p.add_argument("--stash-factor", type=float, default=1.0)
    p.add_argument("--nu", type=float, default=1.0)
    p.add_argument("--workload", default="uniform",
                   help="uniform, sequential, repeat, or a file of indices")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cipher", choices=["aesgcm", "transparent"], default="aesgcm")
    p.add_argument("--out")
    p.add_argument("--trace-out")
    p.add_argument("--report-out")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(default_requests=requests or ["n"])


def build_parser():
    parser = argparse.ArgumentParser(prog="cuckoo-oram", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("sweep", help="stash-demand sweep, one CSV row per trial")
    _common(p)
    p.add_argument("--wall-time", action="store_true",
                   help="fill wall_ms (makes the CSV nondeterministic)")
    p = sub.add_parser("soak", help="mixed ops against a plain-array oracle")
    _common(p)
    p.add_argument("--fault-at", type=int, help="corrupt one stored cell before this op")
    p = sub.add_parser("oblivious", help="trace shape and offset-distribution checks")
    _common(p, mode="oblivious", requests=["2000"])
    p.add_argument("--leaky", action="store_true",
                   help="negative control: probe real locations after a hit")
    p = sub.add_parser("overhead", help="amortized server accesses over an n ladder")
    _common(p, mode="oblivious", requests=["cycle"])
    return parser


def _config(args):
    return ExperimentConfig(
        variant=args.variant, mode=args.mode, n=args.n or [1024],
        requests=args.requests or args.default_requests, trials=args.trials,
        epsilon=args.epsilon, c=args.c, stash_factor=args.stash_factor, nu=args.nu,
        workload=args.workload, seed=args.seed, cipher=args.cipher, out=args.out,
        trace_out=args.trace_out, report_out=args.report_out, jobs=args.jobs,
        wall_time=getattr(args, "wall_time", False),
    )


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = _config(args)
        if args.command == "sweep":
            records = run_stash_sweep(config)
            over = sum(r.overflowed for r in records)
            print(f"{len(records)} trial rows, {over} overflowed")
            return 0
        if args.command == "soak":
            report = run_oracle_soak(config, fault_at=args.fault_at)
            print(report.to_json(), end="")
            return 0 if report.status == "PASS" else 1
        if args.command == "oblivious":
            doc, ok = run_obliviousness_suite(config, leaky=args.leaky)
            for check in doc["checks"]:
                print(f"{check['name']}: {check['verdict']} (p={check['p']})")
            return 0 if ok else 1
        rows, fits, ok = run_overhead_scaling(config)
        for row in rows:
            print(f"n={row['n']} r={row['r']} per_op={row['per_op']:.2f}")
        for fit in fits:
            print(json.dumps(fit.as_dict()))
        return 0 if ok else 1
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``python -m superdp <command>``.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical abort.
"""

import argparse
import csv
import logging
import math
import os
import sys

from . import accountant, data, harness
from .errors import SuperDPError


def _kv_pairs(items):
    out = {}
    for item in items or ():
        if "=" not in item:
            raise argparse.ArgumentTypeError(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def cmd_train(args):
    cfg = harness.RunConfig.from_file(args.config) if args.config else harness.RunConfig()
    extra = _kv_pairs(args.set)
    if args.seed is not None:
        extra["run.seed"] = args.seed
    cfg = cfg.override(extra)
    out = args.out or os.path.join("runs", cfg["run.name"])
    m = harness.train_run(cfg, out)
    for key in ("final_val_accuracy", "epsilon", "best_order", "steps"):
        if key in m.summary:
            print(f"{key}={m.summary[key]}")
    print(f"output={out}")
    return 0


def cmd_account(args):
    ledger = accountant.RdpLedger()
    if args.per_step:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(("step", "epsilon", "best_order"))
        for step in range(1, args.steps + 1):
            rep = ledger.step(args.q, args.sigma).to_dp(args.delta)
            w.writerow((step, repr(rep.epsilon), repr(rep.best_order)))
        return 0
    rep = ledger.step(args.q, args.sigma, args.steps).to_dp(args.delta)
    print(f"epsilon={rep.epsilon!r}")
    print(f"best_order={rep.best_order!r}")
    return 0


def cmd_experiment(args):
    base = harness.RunConfig.from_file(args.config) if args.config else harness.RunConfig()
    extra = _kv_pairs(args.set)
    if args.subset is not None:
        extra["data.subset"] = args.subset
    if args.seed is not None:
        extra["run.seed"] = args.seed
    plain = {k: v for k, v in extra.items() if ":" not in k}
    base = base.override(plain)
    scoped = {k: v for k, v in extra.items() if ":" in k}
    out = args.out or os.path.join("experiments", f"exp{args.id}")
    written, runs = harness.experiment(args.id, out, base, scoped)
    for name, m in runs.items():
        eps = m.final_epsilon()
        print(f"{name}: val_accuracy={m.final_accuracy():.4f}" + (f" epsilon={eps:.4f}" if eps is not None else ""))
    for key, path in written.items():
        print(f"{key}={path}")
    return 0


def cmd_data(args):
    if args.data_cmd == "verify":
        results = data.verify_digests(args.digests, args.dir)
        bad = 0
        for name, ok, reason in results:
            print(f"{'OK  ' if ok else 'FAIL'} {name} {'' if ok else reason}".rstrip())
            bad += not ok
        return 3 if bad else 0
    paths = data.write_proxy_files(args.out)
    for key, path in paths.items():
        print(f"{key}={path}")
    return 0


def cmd_report(args):
    rows = harness.report(args.runs, args.baseline)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(harness.REPORT_COLUMNS)
    for r in rows:
        w.writerow([("" if r[c] is None else repr(r[c]) if isinstance(r[c], float) and math.isfinite(r[c])
                     else r[c]) for c in harness.REPORT_COLUMNS])
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="superdp", description="DP-SGD training, privacy accounting and experiment runs.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one model from a config file")
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--out")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("account", help="privacy spent by the subsampled Gaussian mechanism")
    a.add_argument("--sigma", type=float, required=True)
    a.add_argument("--q", type=float, required=True)
    a.add_argument("--delta", type=float, required=True)
    a.add_argument("--steps", type=int, required=True)
    a.add_argument("--per-step", action="store_true", help="emit step,epsilon,best_order CSV")
    a.set_defaults(func=cmd_account)

    e = sub.add_parser("experiment", help="run one of the paired experiments")
    e.add_argument("--id", type=int, required=True, choices=(1, 2, 3))
    e.add_argument("--subset", type=int)
    e.add_argument("--config")
    e.add_argument("--seed", type=int)
    e.add_argument("--out")
    e.add_argument("--set", action="append", metavar="[MODEL:]KEY=VALUE")
    e.set_defaults(func=cmd_experiment)

    d = sub.add_parser("data", help="dataset utilities")
    dsub = d.add_subparsers(dest="data_cmd", required=True)
    v = dsub.add_parser("verify", help="check SHA-256 digests of dataset files")
    v.add_argument("--digests", required=True)
    v.add_argument("--dir")
    pr = dsub.add_parser("proxy", help="write the offline digits stand-in as MNIST-named IDX files")
    pr.add_argument("--out", required=True)
    d.set_defaults(func=cmd_data)

    r = sub.add_parser("report", help="join run summaries into an accuracy-loss table")
    r.add_argument("--runs", required=True)
    r.add_argument("--baseline", help="name of the non-private run to compare against")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SuperDPError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())

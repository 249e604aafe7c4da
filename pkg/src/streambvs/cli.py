"""Command-line entry point: ``bvs simulate | priors | diagnostics``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .priors import (
    InvalidParameterError,
    PriorKind,
    PriorSpec,
    build_prior_table,
    limiting_size_pmf,
    resolve_prior,
    size_ratio,
)
from .results import atomic_write_text, fmt, write_manifest, write_metrics_csv
from .simulation import SCENARIOS, ConfigError, ScenarioConfig, builtin_scenario, default_threads, run_replicates

log = logging.getLogger("streambvs")

PRIOR_CHOICES = ("du", "bb", "md", "pa", "ba", "b11", "b1p", "b1psq")


class UsageError(Exception):
    """Invalid arguments or configuration; maps to exit status 2."""


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bvs", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a simulation scenario and write metrics.csv + manifest.json")
    src = sim.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario", choices=SCENARIOS)
    src.add_argument("--config", type=Path, help="JSON file with ScenarioConfig fields")
    sim.add_argument("--seed", type=int)
    sim.add_argument("--replicates", type=int)
    sim.add_argument("--eval-batches", type=_int_list)
    sim.add_argument("--all-batches", action="store_true", help="emit metrics at every batch")
    sim.add_argument("--threads", type=int, help="worker processes (default: $BVS_THREADS or 1)")
    sim.add_argument("--out", type=Path, default=Path("results"))

    pri = sub.add_parser("priors", help="tabulate a prior's per-model log prior and size pmf")
    pri.add_argument("--prior", required=True, type=str.lower, choices=PRIOR_CHOICES)
    pri.add_argument("--p", type=int, required=True)
    pri.add_argument("--theta", type=float)
    pri.add_argument("--a", type=float)
    pri.add_argument("--b", type=float)
    pri.add_argument("--out", type=Path)

    dia = sub.add_parser("diagnostics", help="size pmf and size ratio against their large-p limits")
    dia.add_argument("--theta", type=float, default=1.0)
    dia.add_argument("--p", type=_int_list, default=[100, 1000, 10000])
    dia.add_argument("--max-k", type=int, default=6)
    dia.add_argument("--prior", type=str.lower, choices=("ba", "md", "pa"), default="ba")
    dia.add_argument("--out", type=Path)
    return parser


def _load_config(args) -> ScenarioConfig:
    if args.config is not None:
        try:
            data = json.loads(args.config.read_text(encoding="utf-8"))
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config is not valid JSON: {exc}") from exc
        config = ScenarioConfig.from_dict(data)
    else:
        config = builtin_scenario(args.scenario)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.replicates is not None:
        overrides["replicates"] = args.replicates
    if args.eval_batches is not None:
        overrides["eval_batches"] = args.eval_batches
    if args.all_batches:
        overrides["all_batches"] = True
    return ScenarioConfig.from_dict(overrides, base=config) if overrides else config


def cmd_simulate(args) -> int:
    config = _load_config(args)
    threads = args.threads if args.threads is not None else default_threads()
    if threads < 1:
        raise UsageError("--threads must be >= 1")
    started = datetime.now(timezone.utc).isoformat()
    log.info("running %s: %d replicates, p=%d, %d threads", config.name, config.replicates, config.p, threads)
    results = run_replicates(config, threads)
    records = [r for res in results for r in res.records]
    out = args.out
    write_metrics_csv(out / "metrics.csv", records)
    nonconv = {m.value: 0 for m in config.methods}
    for res in results:
        for method, count in res.nonconverged_fits.items():
            nonconv[method] += count
    manifest = {
        "artifact": "streambvs",
        "version": __version__,
        "seed": config.seed,
        "threads": threads,
        "started_at": started,
        "finished_at": datetime.now(timezone.utc).isoformat(),
        "config": config.to_dict(),
        "records": len(records),
        "failures": {
            "failed_replicates": [{"replicate": r.replicate, "error": r.error} for r in results if r.error],
            "nonconverged_fits": nonconv,
            "nonconverged_records": sum(r.any_nonconverged for r in records),
        },
    }
    write_manifest(out / "manifest.json", manifest)
    print(f"wrote {len(records)} records to {out / 'metrics.csv'}")
    return 0


def _prior_from_args(args) -> PriorSpec:
    name = args.prior
    if name == "bb":
        if args.a is None or args.b is None:
            raise UsageError("--prior bb needs --a and --b")
        return PriorSpec.beta_binomial(args.a, args.b)
    if name in ("md", "pa", "ba"):
        theta = 1.0 if args.theta is None else args.theta
        kind = {"md": PriorKind.MATRYOSHKA_DOLL, "pa": PriorKind.TRUNCATED_POISSON_MD, "ba": PriorKind.BERNOULLI_MD}[name]
        return PriorSpec(kind, theta=theta)
    return resolve_prior(name, args.p)


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        atomic_write_text(out, text)


def cmd_priors(args) -> int:
    if args.p < 1:
        raise UsageError("--p must be >= 1")
    table = build_prior_table(_prior_from_args(args), args.p)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", "log_q", "size_pmf"])
    for k in range(args.p + 1):
        w.writerow([k, fmt(table.log_q[k], 17), fmt(table.size_pmf[k], 17)])
    _emit(buf.getvalue(), args.out)
    return 0


def cmd_diagnostics(args) -> int:
    if args.max_k < 0 or not args.p or min(args.p) < 1:
        raise UsageError("--max-k must be >= 0 and every --p >= 1")
    kind = {"ba": PriorKind.BERNOULLI_MD, "md": PriorKind.MATRYOSHKA_DOLL, "pa": PriorKind.TRUNCATED_POISSON_MD}[args.prior]
    spec = PriorSpec(kind, theta=args.theta)
    theta = spec.theta
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["prior", "theta", "p", "k", "size_pmf", "poisson_pmf", "pmf_abs_dev", "size_ratio", "ratio_limit", "ratio_abs_dev"])
    for p in args.p:
        table = build_prior_table(spec, p)
        for k in range(min(args.max_k, p) + 1):
            pmf = float(table.size_pmf[k])
            lim = limiting_size_pmf(theta, k)
            row = [spec.label, fmt(theta, 17), p, k, fmt(pmf, 17), fmt(lim, 17), fmt(abs(pmf - lim), 17)]
            if k < p:
                ratio = size_ratio(spec, p, k)
                rlim = theta / (k + 1)
                row += [fmt(ratio, 17), fmt(rlim, 17), fmt(abs(ratio - rlim), 17)]
            else:
                row += ["", "", ""]
            w.writerow(row)
    _emit(buf.getvalue(), args.out)
    return 0


COMMANDS = {"simulate": cmd_simulate, "priors": cmd_priors, "diagnostics": cmd_diagnostics}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, InvalidParameterError) as exc:
        print(f"bvs {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

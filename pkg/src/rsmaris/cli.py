"""Command-line entry point: ``rsmaris {run,sweep,bench,audit}``.

Exit codes: 0 success, 2 a trial failed or an audit found violations,
3 the configuration or arguments are invalid.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from typing import Optional, Sequence

from .channels import draw_channels
from .errors import InfeasibleError, RsmarisError, ValidationError
from .harness import (
    SWEEP_PARAMS,
    SweepSpec,
    benchmark_complexity,
    emit_results,
    load_config,
    run_sweep,
    scenario,
)
from .model import LN2, Allocation, FeasibilitySet, NetworkConfig, validate_config
from .optimizer import Mode, OptimizerOptions, evaluate_allocation, optimize
from .subproblems import ObjectiveKind

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 2, 3

_OBJECTIVES = {"rate": ObjectiveKind.RATE, "ee": ObjectiveKind.EE}
_RIS_SETS = {"disc": FeasibilitySet.UNIT_DISC, "modulus": FeasibilitySet.UNIT_MODULUS}


def _config(args) -> NetworkConfig:
    if args.config:
        return load_config(args.config)
    return scenario(args.scenario, desk=args.desk)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="network configuration JSON (overrides --scenario)")
    p.add_argument("--scenario", default="Scenario1", help="preset name (Scenario1, Scenario2)")
    p.add_argument("--desk", action="store_true",
                   help="use the small RIS size for quick runs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--objective", choices=sorted(_OBJECTIVES), default="rate")
    p.add_argument("--ris-set", choices=sorted(_RIS_SETS), default="disc")
    p.add_argument("--no-timing", action="store_true",
                   help="write zero wall times so outputs are byte-identical across runs")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="rsmaris", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="optimize one channel draw")
    _common(run)
    run.add_argument("--modes", default="RSMA", help="one mode, e.g. RSMA+NoRIS")
    run.add_argument("--out", help="write the allocation as JSON")

    sw = sub.add_parser("sweep", help="paired Monte Carlo sweep")
    _common(sw)
    sw.add_argument("--param", choices=SWEEP_PARAMS, default="P_dB")
    sw.add_argument("--values", default="0,5,10", help="comma-separated swept values")
    sw.add_argument("--trials", type=int, default=20)
    sw.add_argument("--modes", default="RSMA,TIN", help="comma-separated modes")
    sw.add_argument("--workers", type=int, default=None, help="default: RSMA_THREADS or CPUs")
    sw.add_argument("--out", help="result file (stdout summary only when omitted)")
    sw.add_argument("--format", choices=("csv", "json"), default="csv")
    sw.add_argument("--summary", help="also write the summary JSON here")

    be = sub.add_parser("bench", help="time single precoder and RIS updates")
    _common(be)
    be.add_argument("--grid", default="3,2,8;3,2,16",
                    help="semicolon-separated K,N_BS,N_RIS triples")
    be.add_argument("--repeats", type=int, default=3)
    be.add_argument("--out", help="write the timing table as JSON")

    au = sub.add_parser("audit", help="re-check a saved allocation")
    au.add_argument("allocation", help="JSON written by 'run --out'")
    au.add_argument("--config", help="configuration JSON (default: the one stored with the run)")
    au.add_argument("--seed", type=int, default=None, help="channel seed (default: stored)")
    au.add_argument("--tol", type=float, default=1e-6)
    return ap


def _options(args, mode: str) -> OptimizerOptions:
    return OptimizerOptions(mode=Mode.parse(mode), objective_kind=_OBJECTIVES[args.objective],
                            ris_set=_RIS_SETS[args.ris_set], timing=not args.no_timing)


def cmd_run(args) -> int:
    cfg = _config(args)
    opts = _options(args, args.modes)
    ch = draw_channels(cfg, seed=args.seed)
    try:
        alloc = optimize(cfg, ch, opts, seed=args.seed)
    except InfeasibleError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_FAILED
    audit = evaluate_allocation(cfg, ch, alloc)
    print(f"{opts.mode.name}: objective {alloc.objective / LN2:.6f} bits, "
          f"{alloc.info['iterations']} iterations ({alloc.info['stop_reason']}), "
          f"audit {'ok' if audit.ok else 'FAILED'}")
    for v in audit.violations:
        print(f"  violation: {v}")
    if args.out:
        doc = {"config": cfg.to_dict(), "seed": args.seed, "allocation": alloc.to_dict()}
        with open(args.out, "w") as fh:
            json.dump(doc, fh, indent=1)
    return EXIT_OK if audit.ok else EXIT_FAILED


def cmd_sweep(args) -> int:
    spec = SweepSpec(
        param=args.param,
        values=tuple(float(v) for v in args.values.split(",") if v.strip()),
        trials=args.trials,
        modes=tuple(m.strip() for m in args.modes.split(",") if m.strip()),
        base=args.config or args.scenario,
        seed=args.seed,
        desk=args.desk,
        objective_kind=_OBJECTIVES[args.objective],
        ris_set=_RIS_SETS[args.ris_set],
        timing=not args.no_timing,
        workers=args.workers,
    )
    res = run_sweep(spec)
    if args.out:
        emit_results(res.rows, args.format, args.out, res.config)
    if args.summary:
        with open(args.summary, "w") as fh:
            json.dump(res.summary, fh, indent=1)
    for m in res.summary["means"]:
        print(f"{spec.param}={m['value']:g} {m['mode']:<24} mean {m['mean']:.4f} "
              f"(ok {m['ok']}, failed {m['failed']})")
    for f in res.failures:
        print(f"failed: {f.sweep_param}={f.value:g} "
              f"{f.mode} seed {f.seed}: {f.status}", file=sys.stderr)
    return EXIT_FAILED if res.failures else EXIT_OK


def _grid(text: str) -> list:
    out = []
    for item in text.split(";"):
        parts = [int(x) for x in item.split(",")]
        if len(parts) != 3:
            raise ValidationError("grid", f"expected K,N_BS,N_RIS, got {item!r}")
        out.append(tuple(parts))
    return out


def cmd_bench(args) -> int:
    cfg = _config(args)
    res = benchmark_complexity(_grid(args.grid), cfg, seed=args.seed, repeats=args.repeats)
    for r in res["rows"]:
        print(f"K={r.K} N_BS={r.N_BS} N_RIS={r.N_RIS}: W {r.w_update_ms:.1f} ms "
              f"({r.w_newton} Newton), RIS {r.ris_update_ms:.1f} ms ({r.ris_newton} Newton)")
    for target, exps in res["exponents"].items():
        print(f"{target} exponents: " + ", ".join(f"{k} {v:.2f}" for k, v in exps.items()))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({"rows": [asdict(r) for r in res["rows"]],
                       "exponents": res["exponents"]}, fh, indent=1)
    return EXIT_OK


def cmd_audit(args) -> int:
    with open(args.allocation) as fh:
        doc = json.load(fh)
    cfg = load_config(args.config) if args.config else validate_config(
        NetworkConfig.from_dict(doc["config"]))
    seed = doc.get("seed", 0) if args.seed is None else args.seed
    alloc = Allocation.from_dict(doc["allocation"])
    rep = evaluate_allocation(cfg, draw_channels(cfg, seed=seed), alloc, tol=args.tol)
    print(f"objective {rep.objective / LN2:.6f} bits; "
          f"{len(rep.violations)} violation(s)")
    for v in rep.violations:
        print(f"  {v}")
    return EXIT_OK if rep.ok else EXIT_FAILED


_COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "bench": cmd_bench, "audit": cmd_audit}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RsmarisError as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except (ValueError, KeyError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

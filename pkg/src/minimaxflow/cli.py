"""Command-line entry point: ``minimaxflow <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from importlib import resources
from pathlib import Path

from . import kernels
from .downstream import analyze
from .errors import ConfigInvalid, MinimaxFlowError
from .microgrid import steady_state
from .scenario import (
    build_model,
    compare_oracle,
    generate_random_instance,
    load_config,
    run_scenario,
    windows,
    with_tight_boxes,
)

log = logging.getLogger("minimaxflow")


def default_scenario() -> Path:
    return Path(str(resources.files("minimaxflow") / "data" / "lv_feeder.yaml"))


def _config(path):
    return load_config(default_scenario() if path == "default" else path)


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2))


def cmd_validate(args) -> int:
    cfg = _config(args.config)
    model = build_model(cfg)
    for start, _ in windows(cfg):
        steady_state(build_model(cfg, start))
    print(
        f"ok: {len(cfg.nodes)} nodes, {len(cfg.generators)} generators, {len(cfg.edges)} lines, "
        f"{len(cfg.events)} events, {len(windows(cfg))} windows, coupling {model.coupling.min():g}..{model.coupling.max():g}"
    )
    return 0


def cmd_analyze(args) -> int:
    cfg = _config(args.config)
    model = build_model(cfg, args.time)
    flows, omega = steady_state(model)
    _, report = analyze(model.network, flows)
    out = report.to_dict(model.network)
    out["omega"] = omega
    _emit(out)
    return 0


def cmd_solve(args) -> int:
    cfg = _config(args.config)
    out = []
    for start, end in windows(cfg):
        sol = build_model(cfg, start).lp()
        out.append({"window": [start, end], **sol.to_dict()})
    _emit(out)
    return 0 if all(o["status"] == "optimal" for o in out) else 1


def cmd_run(args) -> int:
    cfg = _config(args.config)
    backend = kernels.get_backend(args.backend)
    report = run_scenario(cfg, out_dir=args.out, mode=args.mode, baseline=args.baseline, backend=backend)
    print(report.summary_text(), end="")
    if args.out:
        print(f"outputs written to {args.out}")
    if args.fail_on_fault and report.fault:
        return 3
    return 0


def _seed_range(text: str) -> range:
    try:
        a, b = text.split("..")
        lo, hi = int(a), int(b)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a..b, got {text!r}") from None
    if hi < lo:
        raise argparse.ArgumentTypeError("empty seed range")
    return range(lo, hi + 1)


def cmd_sweep(args) -> int:
    matched = total = skipped = 0
    failures = []
    for seed in args.seeds:
        cfg = generate_random_instance(seed, args.nodes, args.suppliers, T_end=args.t_end)
        if args.tight:
            cfg = with_tight_boxes(cfg, args.width)
            if cfg is None:
                skipped += 1
                continue
        rec = compare_oracle(cfg)
        total += 1
        w = rec["windows"][0] if rec["windows"] else {}
        ok = rec["verdict"] == "match"
        matched += ok
        if not ok:
            failures.append(seed)
        print(
            f"seed {seed}: {rec['verdict']} J_dist={w.get('J_dist', float('nan')):.6f} "
            f"J*={w.get('J_lp', float('nan')):.6f} gap={w.get('gap', float('nan')):.2e} "
            f"spread={w.get('phi_spread', float('nan')):.2e}"
        )
    print(f"{matched}/{total} instances match the minimax optimum" + (f" ({skipped} skipped: no binding box)" if skipped else ""))
    if failures:
        print("non-matching seeds: " + " ".join(map(str, failures)))
    return 0 if not failures or not args.strict else 1


def cmd_compare(args) -> int:
    cfg = _config(args.config)
    _emit(compare_oracle(cfg, mode=args.mode))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="minimaxflow", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    cfg_help = "scenario YAML file, or 'default' for the bundled feeder"

    s = sub.add_parser("validate", help="parse and check a scenario")
    s.add_argument("config", help=cfg_help)
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("analyze", help="downstream report at the droop steady state")
    s.add_argument("config", help=cfg_help)
    s.add_argument("--time", type=float, default=0.0, help="apply events up to this time first")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("solve", help="minimax program for every steady window")
    s.add_argument("config", help=cfg_help)
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("run", help="simulate the closed loop and write outputs")
    s.add_argument("config", help=cfg_help)
    s.add_argument("--mode", choices=("P", "D", "none"), default=None)
    s.add_argument("--baseline", action="store_true", help="delayed centralized dispatch instead of online control")
    s.add_argument("--out", default=None, help="run directory for timeseries.csv, summary.txt, report.json")
    s.add_argument("--backend", choices=("cython", "python"), default=None)
    s.add_argument("--fail-on-fault", action="store_true", help="exit with status 3 if any J_xi >= 1")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="random-instance comparison against the minimax program")
    s.add_argument("--seeds", type=_seed_range, required=True, help="inclusive range a..b")
    s.add_argument("--nodes", type=int, default=12)
    s.add_argument("--suppliers", type=int, default=4)
    s.add_argument("--t-end", type=float, default=8.0)
    s.add_argument("--tight", action="store_true", help="use tight generator boxes; skip instances with none binding")
    s.add_argument("--width", type=float, default=0.05, help="relative half-width of tight boxes")
    s.add_argument("--strict", action="store_true", help="exit with status 1 on any mismatch")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("compare", help="distributed steady state against the minimax program, per window")
    s.add_argument("config", help=cfg_help)
    s.add_argument("--mode", choices=("P", "D"), default="P")
    s.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except ConfigInvalid as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2
    except MinimaxFlowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

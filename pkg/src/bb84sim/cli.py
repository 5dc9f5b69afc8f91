"""Command-line interface.

    bb84sim run --config my.conf --set p_depol=0.1 --seed 3
    bb84sim sweep --axis p_depol --values 0,0.1,0.2
    bb84sim replicate exp1 --photons 10000 --iterations 1000 --seed 1
    bb84sim serve --port 5005          # terminal 1
    bb84sim connect --ip 127.0.0.1 --port 5005   # terminal 2
    bb84sim roc out/iterations.csv
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import PRESETS, ConfigError, SimConfig, load_config_file, load_preset
from .detection import roc_points
from .reporting import RunSummary, read_iterations_csv, write_roc_csv
from .runner import SWEEP_AXES, attack_schedule, run, sweep, write_run_outputs

log = logging.getLogger("bb84sim")

DEFAULT_OUT = "bb84sim-out"
_SHORTCUTS = ("seed", "photons", "iterations", "ip", "port")


def _common(with_config: bool = True) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--out-dir", default=DEFAULT_OUT, help="output directory (default: %(default)s)")
    p.add_argument("-v", "--verbose", action="store_true")
    if with_config:
        p.add_argument("--config", metavar="FILE", help="flat key = value config file")
        p.add_argument("--set", metavar="KEY=VALUE", action="append", default=[],
                       help="override a config key (repeatable)")
        p.add_argument("--seed", help="master seed for seeded randomness")
        p.add_argument("--photons", help="photons per iteration")
        p.add_argument("--iterations", help="key distributions per run")
    p.add_argument("--ip", help="server address")
    p.add_argument("--port", help="server port")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bb84sim", description="BB84 QKD simulator")
    sub = parser.add_subparsers(dest="cmd", required=True)
    cfg = _common()

    sub.add_parser("run", parents=[cfg], help="run one configuration")

    s = sub.add_parser("sweep", parents=[cfg], help="run once per value of one parameter")
    s.add_argument("--axis", required=True, choices=SWEEP_AXES)
    s.add_argument("--values", required=True, help="comma-separated values")

    sub.add_parser("serve", parents=[cfg], help="run as the server terminal")
    sub.add_parser("connect", parents=[_common(with_config=False)],
                   help="run as the client terminal (configuration comes from the server)")

    r = sub.add_parser("replicate", parents=[cfg], help="run a bundled experiment preset")
    r.add_argument("preset", choices=PRESETS)

    roc = sub.add_parser("roc", help="turn an iterations CSV into an ROC CSV")
    roc.add_argument("iterations_csv")
    roc.add_argument("--thresholds", help="comma-separated thresholds (default: every observed QBER)")
    roc.add_argument("--out", help="output path (default: roc.csv next to the input)")
    roc.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve_config(args, base: SimConfig | None = None) -> SimConfig:
    if args.config:
        base = load_config_file(args.config, base)
    overrides = {}
    problems = []
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            problems.append(f"--set {item!r}: expected KEY=VALUE")
            continue
        overrides[key.strip()] = value.strip()
    for name in _SHORTCUTS:
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if problems:
        raise ConfigError(problems)
    return SimConfig.from_mapping(overrides, base)


def _print_summary(summary: RunSummary, out_dir) -> None:
    print(f"iterations: {summary.iterations}")
    for name, m in summary.metrics.items():
        if m.count:
            std = f"{m.std:.6g}" if m.std is not None else "-"
            print(f"  {name:16s} mean={m.mean:.6g} std={std} n={m.count} nulls={m.nulls}")
    c = summary.confusion
    print(f"  confusion        TP={c.tp} FP={c.fp} TN={c.tn} FN={c.fn}")
    print(f"outputs written to {out_dir}")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError([f"values: {exc}"]) from None


def _cmd_run(args, cfg: SimConfig) -> int:
    _, summary = run(cfg, args.out_dir)
    _print_summary(summary, args.out_dir)
    return 0


def _cmd_sweep(args, cfg: SimConfig) -> int:
    results = sweep(cfg, args.axis, _floats(args.values), args.out_dir)
    for value, summary in results:
        q = summary.mean("qber_est")
        rate = summary.mean("sifted_rate_bps")
        print(f"{args.axis}={value:g}  qber_est_mean={q if q is None else f'{q:.6g}'}"
              f"  sifted_rate_mean={rate if rate is None else f'{rate:.6g}'}")
    print(f"outputs written to {Path(args.out_dir) / 'sweep.csv'}")
    return 0


def _finish_networked(args, session, records) -> int:
    from .reporting import summarize
    cfg = session.config
    summary = summarize(records, cfg)
    write_run_outputs(args.out_dir, cfg, records, summary, attack_schedule(cfg))
    print(f"{session.role} terminal ({session.protocol_role})")
    _print_summary(summary, args.out_dir)
    return 0


def _cmd_serve(args, cfg: SimConfig) -> int:
    from .transport import serve
    print(f"listening on {cfg.ip}:{cfg.port}", flush=True)
    session = serve(cfg.ip, cfg.port, cfg)
    return _finish_networked(args, session, session.run())


def _cmd_connect(args) -> int:
    from .transport import connect
    base = SimConfig()
    ip = args.ip or base.ip
    try:
        port = int(args.port) if args.port is not None else base.port
    except ValueError:
        raise ConfigError([f"port: expected int, got {args.port!r}"]) from None
    session = connect(ip, port, base.connect_retries, base.connect_delay_s, base.timeout_s)
    return _finish_networked(args, session, session.run())


def _cmd_roc(args) -> int:
    records = read_iterations_csv(args.iterations_csv)
    thresholds = sorted(_floats(args.thresholds)) if args.thresholds else None
    curve = roc_points([r.decision() for r in records], thresholds)
    out = Path(args.out) if args.out else Path(args.iterations_csv).with_name("roc.csv")
    write_roc_csv(curve, out)
    auc = curve.auc()
    print(f"{len(curve.points)} ROC points written to {out}" + (f" (AUC {auc:.4f})" if auc is not None else ""))
    return 0


def cli_main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.cmd == "roc":
            return _cmd_roc(args)
        if args.cmd == "connect":
            return _cmd_connect(args)
        base = load_preset(args.preset) if args.cmd == "replicate" else None
        cfg = resolve_config(args, base)
        return {"run": _cmd_run, "sweep": _cmd_sweep, "serve": _cmd_serve,
                "replicate": _cmd_run}[args.cmd](args, cfg)
    except ConfigError as exc:
        print("bb84sim: configuration error:", file=sys.stderr)
        for problem in exc.problems:
            print(f"  {problem}", file=sys.stderr)
        return 2
    except Exception as exc:
        if args.verbose:
            log.exception("failed")
        print(f"bb84sim: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()

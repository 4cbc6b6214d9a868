"""Command-line entry points.

Exit codes: 0 success, 2 invalid configuration or arguments, 3 model
domain violation, 4 acceptance criterion failed.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .acceptance import DEFAULT_SEED, format_results, run_all
from .harness import (
    ConfigError,
    LIFETIME_STACKS,
    emit_plots,
    load_experiment_config,
    run_characterization_replication,
    run_lifetime,
    run_rber_sweep,
)
from .models import ModelDomainError
from .raid import build_conventional_layout, build_liraid_layout, layout_table

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DOMAIN = 3
EXIT_ACCEPTANCE = 4


def _cmd_sweep(args: argparse.Namespace) -> int:
    cfg = load_experiment_config(args.config)
    result = run_rber_sweep(cfg)
    print(f"wrote {result.csv_path} ({len(result.rows)} rows, config {result.cfg_hash})")
    return EXIT_OK


def _cmd_lifetime(args: argparse.Namespace) -> int:
    cfg = load_experiment_config(args.config)
    res = run_lifetime(cfg)
    days = res.retention_s / 86400.0
    print(f"retention {days:g} days, RBER limit {res.rber_limit:g}")
    header = f"{'stack':10s} {'endurance':>9s} {'ratio':>6s} {'eol RBER':>9s} {'ECC':>7s} {'saved':>6s}"
    print(header)
    for key, label, _policy, _grouped in LIFETIME_STACKS:
        print(
            f"{key:10s} {res.endurance[key]:9d} {res.ratio[key]:6.2f} "
            f"{res.eol_rber[key]:9.2e} {res.ecc_overhead[key]:7.2%} "
            f"{res.ecc_reduction[key]:6.1%}  {label}"
        )
    print(f"wrote {res.scan_csv}")
    print(f"wrote {res.summary_csv}")
    return EXIT_OK


def _cmd_replicate(args: argparse.Namespace) -> int:
    cfg = load_experiment_config(args.config)
    res = run_characterization_replication(cfg)
    print(f"{'row':13s} {'alpha':>11s} {'beta':>9s} {'gamma':>11s} {'delta':>9s} {'rel err':>8s} {'adj R2':>7s}")
    for name, r in res.rows.items():
        f = r.fit
        print(
            f"{name:13s} {f.alpha:11.3e} {f.beta:9.4f} {f.gamma:11.3e} {f.delta:9.2f} "
            f"{r.max_rel_err:8.2%} {f.adj_r2:7.4f}"
        )
    print(f"worst coefficient recovery error: {res.max_rel_err():.2%}")
    for g in res.gamma.values():
        print(
            f"page RBER spread ({g.page_type}): gamma shape {g.shape:.2f}, scale {g.scale:.3e}, "
            f"KL {g.kl_nats:.4f} nats over {g.n_pages} pages"
        )
    for path in (res.samples_csv, res.report_csv, res.gamma_csv):
        print(f"wrote {path}")
    return EXIT_OK


def _cmd_liraid_layout(args: argparse.Namespace) -> int:
    try:
        if args.conventional:
            layout = build_conventional_layout(args.chips, args.wordlines)
        else:
            layout = build_liraid_layout(args.chips, args.wordlines)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    print(layout_table(layout))
    print(f"{layout.n_groups} groups, blank overhead {layout.blank_overhead():.2%}")
    return EXIT_OK


def _cmd_plot(args: argparse.Namespace) -> int:
    paths = emit_plots(args.csv, args.outdir)
    for path in paths:
        print(f"wrote {path}")
    return EXIT_OK


def _cmd_accept(args: argparse.Namespace) -> int:
    indices = None
    if args.only:
        try:
            indices = tuple(int(tok) for tok in args.only.split(","))
        except ValueError:
            raise ConfigError(f"--only expects comma-separated criterion numbers, got {args.only!r}") from None
        unknown = [i for i in indices if not 1 <= i <= 13]
        if unknown:
            raise ConfigError(f"no such criteria: {unknown}")
    results = run_all(args.outdir, seed=args.seed, indices=indices)
    print(format_results(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_ACCEPTANCE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nand3d",
        description="3D NAND reliability simulator and mitigation toolkit",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="average/worst page RBER per (policy, wear) cell")
    p.add_argument("config", type=Path, help="experiment YAML")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("lifetime", help="endurance scan of the mitigation stacks")
    p.add_argument("config", type=Path, help="experiment YAML")
    p.set_defaults(func=_cmd_lifetime)

    p = sub.add_parser("replicate", help="refit the error model from simulated characterization")
    p.add_argument("config", type=Path, help="experiment YAML (mode: mc)")
    p.set_defaults(func=_cmd_replicate)

    p = sub.add_parser("liraid-layout", help="print a RAID stripe layout table")
    p.add_argument("--chips", type=int, default=4)
    p.add_argument("--wordlines", type=int, default=4)
    p.add_argument("--conventional", action="store_true", help="layer-unaware grouping instead")
    p.set_defaults(func=_cmd_liraid_layout)

    p = sub.add_parser("plot", help="render a harness CSV to SVG charts")
    p.add_argument("csv", type=Path)
    p.add_argument("--outdir", type=Path, default=None, help="defaults to the CSV's directory")
    p.set_defaults(func=_cmd_plot)

    p = sub.add_parser("accept", help="run the 13-criterion acceptance suite")
    p.add_argument("--outdir", type=Path, default=Path("accept_out"))
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--only", type=str, default=None, help="comma-separated criterion numbers")
    p.set_defaults(func=_cmd_accept)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ModelDomainError as exc:
        print(f"model domain error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())

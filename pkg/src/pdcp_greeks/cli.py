"""Command-line front end.

    pdcp-greeks price --preset 1d --method dirka --N 100
    pdcp-greeks converge --preset 2d --methods be,cn,dirka,dirkb --m 100
    pdcp-greeks reference --preset 1d
    pdcp-greeks show-config --preset 2d

Every subcommand accepts ``--config FILE`` (INI sections problem, market, run,
price, penalty, reference, output); command-line flags override the file.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .config import RunConfig, build_config, dump_config
from .greeks import write_surfaces_csv
from .market import InvalidParameterError
from .stepping import GRID_KINDS, PRESET_NAMES, solve_pdcp, write_traces_csv

log = logging.getLogger("pdcp_greeks")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI file with key = value sections")
    p.add_argument("--preset", choices=("1d", "2d"))
    p.add_argument("--dim", type=int, choices=(1, 2))
    p.add_argument("--m", type=int, help="grid nodes per direction")
    p.add_argument("--grid", choices=GRID_KINDS, help="temporal grid kind")
    p.add_argument("--damping-steps", type=int, dest="damping_steps")
    p.add_argument("--out", help="output directory")
    p.add_argument("--cache-dir", dest="cache_dir", help="reference solution cache directory")
    p.add_argument("--reference-n", type=int, dest="reference_n", help="override the reference N")
    p.add_argument("--large", type=float, help="penalty parameter")
    p.add_argument("--tol", type=float, help="penalty iteration tolerance")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pdcp-greeks", description="American option prices and Greeks by penalized time stepping."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    price = sub.add_parser("price", help="solve once and write value and Greek surfaces")
    _common(price)
    price.add_argument("--method", choices=PRESET_NAMES)
    price.add_argument("--N", type=int, dest="N", help="number of time steps")

    conv = sub.add_parser("converge", help="temporal convergence sweep against a reference")
    _common(conv)
    conv.add_argument("--methods", help=f"comma-separated subset of {','.join(PRESET_NAMES)}")
    conv.add_argument("--n-list", dest="n_list", help="comma-separated N values or a range lo..hi")
    conv.add_argument("--roi", help="lo,hi of the region of interest")
    conv.add_argument("--jobs", type=int, help="worker processes (default: available cores)")

    ref = sub.add_parser("reference", help="build (or load) the reference solution")
    _common(ref)

    show = sub.add_parser("show-config", help="print the effective configuration")
    _common(show)
    show.add_argument("--methods")
    show.add_argument("--n-list", dest="n_list")
    show.add_argument("--roi")
    show.add_argument("--jobs", type=int)
    show.add_argument("--method", choices=PRESET_NAMES)
    show.add_argument("--N", type=int, dest="N")
    return parser


_OVERRIDES = ("preset", "dim", "m", "grid", "damping_steps", "out", "cache_dir", "reference_n",
              "large", "tol", "methods", "n_list", "roi", "jobs", "method", "N")


def config_from_args(args: argparse.Namespace) -> RunConfig:
    text = Path(args.config).read_text() if getattr(args, "config", None) else None
    overrides = {k: getattr(args, k, None) for k in _OVERRIDES}
    return build_config(text, **overrides)


def _cache(cfg: RunConfig):
    return ex.ReferenceCache(cfg.cache_dir) if cfg.cache_dir else None


def _strike_point(cfg: RunConfig):
    K = cfg.params.K
    return K if cfg.dims == 1 else (K, K)


def cmd_price(cfg: RunConfig) -> int:
    problem = ex.assemble(cfg.params, cfg.m)
    spec = ex.method_spec(cfg.price_method, cfg.dims, cfg.price_n, cfg.grid_kind, cfg.damping_steps)
    u, traces = solve_pdcp(problem, spec, cfg.penalty)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_surfaces_csv(problem, u, out / "surfaces.csv")
    write_traces_csv(traces, out / "traces.csv")

    kappas = [k for t in traces for k in t.kappas]
    where = "K" if cfg.dims == 1 else "(K,K)"
    print(f"{spec.label}  m={cfg.m}  N={spec.N}  grid={spec.grid_kind}  damping={spec.damping_steps}")
    print(f"u({where}, T) = {ex.value_at(problem, u, _strike_point(cfg)):.10f}")
    print(f"penalty iterations per stage: mean {np.mean(kappas):.2f}, max {max(kappas)}, "
          f"total {sum(kappas)} over {len(traces)} steps")
    print(f"wrote {out / 'surfaces.csv'} and {out / 'traces.csv'}")
    return 0


def _reference(cfg: RunConfig, problem):
    return ex.build_reference(cfg.params, cfg.m, _cache(cfg), problem, cfg.reference_n)


def cmd_reference(cfg: RunConfig) -> int:
    problem = ex.assemble(cfg.params, cfg.m)
    ref = _reference(cfg, problem)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_surfaces_csv(problem, ref.u_ref, out / "reference.csv")
    where = "K" if cfg.dims == 1 else "(K,K)"
    print(f"reference {ref.method}  N={ref.N_ref}  key={ref.key}")
    print(f"u_ref({where}, T) = {ex.value_at(problem, ref.u_ref, _strike_point(cfg)):.10f}")
    print(f"wrote {out / 'reference.csv'}")
    return 0


def cmd_converge(cfg: RunConfig) -> int:
    problem = ex.assemble(cfg.params, cfg.m)
    roi = ex.RegionOfInterest(*cfg.roi) if cfg.roi else ex.RegionOfInterest.default(cfg.dims, cfg.params.K)
    roi.mask(problem.grids)  # reject an empty region before the expensive reference
    reference = _reference(cfg, problem)
    report = ex.convergence_sweep(
        cfg.params, cfg.m, cfg.methods, cfg.n_list, cfg.grid_kind, roi, cfg.penalty,
        reference=reference, damping_steps=cfg.damping_steps,
        jobs=cfg.jobs or ex.default_jobs(), problem=problem,
    )
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    ex.write_errors_csv(report, out / "errors.csv")
    ex.write_orders_csv(report, out / "orders.csv")
    for fit in report.order_fits():
        print(f"{fit.method:8s} {fit.quantity:8s} N={fit.n_min}..{fit.n_max}  order {fit.order:6.3f}")
    failed = {(r.method, r.N): r.status for r in report.failed()}
    for (method, N), status in sorted(failed.items()):
        print(f"FAILED {method} N={N}: {status}", file=sys.stderr)
    print(f"wrote {out / 'errors.csv'} and {out / 'orders.csv'}")
    return 1 if failed else 0


def cmd_show_config(cfg: RunConfig) -> int:
    sys.stdout.write(dump_config(cfg))
    return 0


COMMANDS = {
    "price": cmd_price,
    "converge": cmd_converge,
    "reference": cmd_reference,
    "show-config": cmd_show_config,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
    except (InvalidParameterError, ValueError, OSError) as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](cfg)
    except Exception as exc:
        log.debug("solver failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

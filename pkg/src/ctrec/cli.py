"""Command-line interface.

Subcommands: ``check`` (validate structures), ``reconcile`` (reconcile a
base-forecast file), ``evaluate`` (rank approaches from an accuracy table),
``experiment`` (rolling-origin study), ``synth`` (generate a synthetic
panel).  Exit codes: 0 success, 1 user error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from . import __version__
from .approaches import apply_approach, parse_approach
from .covariance import ResidualPanel
from .errors import (
    ConfigError,
    CtrecError,
    MissingCell,
    NumericalError,
    SchemaError,
)
from .evaluate import (
    gross_discrepancies,
    mcb_nemenyi,
    read_accuracy_csv,
    write_accuracy_csv,
    write_mcb_csv,
)
from .experiment import (
    SeriesPanel,
    config_from_mapping,
    ingest_base_forecasts,
    parse_config_text,
    run_experiment,
    synth_pv_panel,
    write_base_forecasts,
    write_discrepancy_csv,
    write_negativity_csv,
)
from .hierarchy import (
    build_cross_temporal,
    build_temporal,
    read_hierarchy_file,
    write_hierarchy_file,
)

__all__ = ["main"]


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit with code 1."""

    def error(self, message):
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_temporal_flags(p):
    p.add_argument("--m", type=int, help="largest temporal order")
    p.add_argument("--orders", help="comma-separated aggregation orders")
    p.add_argument("--config", help="flat key=value configuration file")


def build_parser() -> _Parser:
    parser = _Parser(prog="ctrec",
                     description="cross-temporal forecast reconciliation")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", parents=[], help="validate a hierarchy and "
                       "temporal specification")
    p.add_argument("--hierarchy", required=True)
    _add_temporal_flags(p)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("reconcile", help="reconcile a base-forecast file")
    p.add_argument("--hierarchy", required=True)
    _add_temporal_flags(p)
    p.add_argument("--base", required=True, help="base-forecast CSV")
    p.add_argument("--approach", required=True)
    p.add_argument("--sntz", action="store_true",
                   help="clamp bottom forecasts at zero and re-aggregate")
    p.add_argument("--residuals", help="residual CSV for data-driven kinds")
    p.add_argument("--form", choices=["projection", "structural"],
                   default="projection")
    p.add_argument("--delta", type=float)
    p.add_argument("--norm", choices=["l1", "linf"], default="linf")
    p.add_argument("--jitter", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reconcile)

    p = sub.add_parser("evaluate", help="MCB ranking from an accuracy CSV")
    p.add_argument("--accuracy", required=True)
    p.add_argument("--k", type=int, default=1, help="temporal order to rank")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", help="rolling-origin experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--panel", help="panel CSV (series,timestamp,value)")
    p.add_argument("--hierarchy", help="hierarchy file for --panel")
    p.add_argument("--base-forecasts", help="ingest base forecasts from CSV")
    p.add_argument("--synth", action="store_true",
                   help="use a synthetic panel instead of files")
    p.add_argument("--plants", type=int, help="synthetic bottom series")
    p.add_argument("--zones", help="synthetic zone sizes, e.g. 3,5")
    p.add_argument("--days", type=int, help="synthetic panel length in "
                   "low-frequency periods")
    p.add_argument("--cloud", type=float, default=0.25)
    p.add_argument("--seed", type=int)
    p.add_argument("--delta", type=float)
    p.add_argument("--norm", choices=["l1", "linf"])
    p.add_argument("--alpha", type=float)
    p.add_argument("--jitter", type=float)
    p.add_argument("--jobs", type=int)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("synth", help="write a synthetic panel to CSV")
    p.add_argument("--plants", type=int, required=True)
    p.add_argument("--zones", required=True)
    p.add_argument("--days", type=int, required=True)
    p.add_argument("--m", type=int, default=24)
    p.add_argument("--cloud", type=float, default=0.25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--hierarchy-out", help="also write the hierarchy file")
    p.set_defaults(func=cmd_synth)
    return parser


def _load_temporal(args):
    """Temporal structure from --m/--orders or the config file."""
    m, orders = args.m, args.orders
    if getattr(args, "config", None):
        raw = parse_config_text(_read(args.config))
        if m is None and "m" in raw:
            m = int(raw["m"])
        if orders is None and "orders" in raw:
            orders = raw["orders"]
    if m is None:
        raise ConfigError("temporal order m required (flag --m or config)")
    parsed = None
    if orders:
        parsed = [int(tok) for tok in str(orders).split(",") if tok.strip()]
    return build_temporal(m, parsed)


def _read(path) -> str:
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read()


def cmd_check(args) -> int:
    cs = read_hierarchy_file(args.hierarchy)
    te = _load_temporal(args)
    ct = build_cross_temporal(cs, te)
    cs_gap = np.abs((cs.constraints @ cs.summing).toarray()).max(initial=0.0)
    te_gap = np.abs((te.constraints @ te.summing).toarray()).max(initial=0.0) \
        if te.k_star else 0.0
    ct_prod = ct.constraints @ ct.summing
    ct_gap = np.abs(ct_prod.data).max() if ct_prod.nnz else 0.0
    print(f"n_a={cs.n_a} n_b={cs.n_b} n={cs.n}")
    print(f"m={te.m} orders={','.join(str(k) for k in te.orders)} "
          f"k_star={te.k_star} width={te.width}")
    print(f"dim={ct.dim} constraints={ct.n_constraints}")
    print(f"kernel_cs={cs_gap:g} kernel_te={te_gap:g} kernel_ct={ct_gap:g}")
    return 0


def cmd_reconcile(args) -> int:
    cs = read_hierarchy_file(args.hierarchy)
    te = _load_temporal(args)
    ct = build_cross_temporal(cs, te)
    spec = parse_approach(args.approach + ("+sntz" if args.sntz else ""))
    panel = None
    if args.residuals:
        panel = _read_residual_csv(args.residuals, ct)
    sets = ingest_base_forecasts(args.base, ct)
    outputs = []
    for rep, fs in enumerate(sets, start=1):
        out = apply_approach(spec, fs, ct, panel, delta=args.delta,
                             norm=args.norm, jitter=args.jitter)
        disc = gross_discrepancies(out, ct)
        print(f"rep={rep} approach={spec.name} d_cs={disc.d_cs:.6g} "
              f"d_te={disc.d_te:.6g} min={out.values.min():.6g}")
        outputs.append(out)
    write_base_forecasts(args.out, outputs, ct,
                         replications=range(1, len(outputs) + 1))
    return 0


def _read_residual_csv(path, ct) -> ResidualPanel:
    """Read a `series,k,period,step,value` residual file."""
    te, labels = ct.te, ct.cs.labels
    index_of = {lb: i for i, lb in enumerate(labels)}
    index_of.update({str(i + 1): i for i in range(len(labels))})
    rows: dict = {}
    max_period = 0
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = ["series", "k", "period", "step", "value"]
        if header is None or [h.strip().lower() for h in header] != expected:
            raise SchemaError(f"{path}: expected header "
                              f"'{','.join(expected)}'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise SchemaError(f"{path}:{lineno}: expected 5 fields")
            series = row[0].strip()
            if series not in index_of:
                raise SchemaError(f"{path}:{lineno}: unknown series "
                                  f"{series!r}")
            try:
                k, period, step = int(row[1]), int(row[2]), int(row[3])
                value = float(row[4])
            except ValueError:
                raise SchemaError(f"{path}:{lineno}: bad numeric field")
            if k not in te.orders:
                raise SchemaError(f"{path}:{lineno}: order {k} not in "
                                  f"{te.orders}")
            if not 1 <= step <= te.m // k:
                raise SchemaError(f"{path}:{lineno}: step {step} outside "
                                  f"1..{te.m // k}")
            key = (index_of[series], k, period, step)
            if key in rows:
                raise SchemaError(f"{path}:{lineno}: duplicate cell")
            rows[key] = value
            max_period = max(max_period, period)
    if max_period == 0:
        raise SchemaError(f"{path}: no data rows")
    values = np.empty((ct.cs.n, te.width, max_period))
    for i, lb in enumerate(labels):
        for k in te.orders:
            cols = te.block_slice(k)
            for period in range(1, max_period + 1):
                for step in range(1, te.m // k + 1):
                    key = (i, k, period, step)
                    if key not in rows:
                        raise MissingCell(f"{path}: missing series={lb} "
                                          f"k={k} period={period} "
                                          f"step={step}")
                    values[i, cols.start + step - 1, period - 1] = rows[key]
    return ResidualPanel(values)


def cmd_evaluate(args) -> int:
    labels, orders, approaches, cells = read_accuracy_csv(args.accuracy)
    if args.k not in orders:
        raise ConfigError(f"order {args.k} not present in {args.accuracy} "
                          f"(has {orders})")
    table = np.column_stack([cells[(a, args.k)] for a in approaches])
    report = mcb_nemenyi(table, args.alpha, approaches)
    write_mcb_csv(args.out, report)
    print(f"k={args.k} alpha={report.alpha} n_series={report.n_series} "
          f"best={report.best} half_width={report.half_width:.6g}")
    return 0


def cmd_experiment(args) -> int:
    raw = parse_config_text(_read(args.config))
    config = config_from_mapping(
        raw, seed=args.seed, delta=args.delta, norm=args.norm,
        alpha=args.alpha, jitter=args.jitter, jobs=args.jobs)
    if args.synth:
        if args.plants is None or args.zones is None or args.days is None:
            raise ConfigError("--synth requires --plants, --zones, --days")
        zones = [int(z) for z in args.zones.split(",")]
        panel, cs = synth_pv_panel(args.plants, zones, args.days,
                                   config.seed, config.m, args.cloud)
    else:
        if not args.panel or not args.hierarchy:
            raise ConfigError("either --synth or both --panel and "
                              "--hierarchy are required")
        cs = read_hierarchy_file(args.hierarchy)
        panel = SeriesPanel.from_csv(args.panel, cs)
    te = build_temporal(config.m, config.orders)
    ct = build_cross_temporal(cs, te)
    base_sets = None
    if args.base_forecasts:
        base_sets = ingest_base_forecasts(args.base_forecasts, ct)
    result = run_experiment(config, panel, ct, base_sets)

    os.makedirs(args.out_dir, exist_ok=True)
    write_accuracy_csv(os.path.join(args.out_dir, "accuracy.csv"),
                       result.accuracy)
    write_discrepancy_csv(os.path.join(args.out_dir, "discrepancies.csv"),
                          result.discrepancies)
    write_negativity_csv(os.path.join(args.out_dir, "negativity.csv"),
                         result.negativity)
    if result.mcb is not None:
        write_mcb_csv(os.path.join(args.out_dir, "mcb.csv"), result.mcb)
        print(f"mcb_best={result.mcb.best}")
    print(f"replications={config.replications} "
          f"approaches={len(result.accuracy.approaches)} "
          f"out_dir={args.out_dir}")
    return 0


def cmd_synth(args) -> int:
    zones = [int(z) for z in args.zones.split(",")]
    panel, cs = synth_pv_panel(args.plants, zones, args.days, args.seed,
                               args.m, args.cloud)
    panel.to_csv(args.out)
    if args.hierarchy_out:
        write_hierarchy_file(args.hierarchy_out, cs)
    print(f"n={panel.n} length={panel.length} out={args.out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    try:
        return args.func(args) or 0
    except NumericalError as exc:
        print(f"ctrec: numerical failure: {exc}", file=sys.stderr)
        return 2
    except CtrecError as exc:
        print(f"ctrec: error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"ctrec: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

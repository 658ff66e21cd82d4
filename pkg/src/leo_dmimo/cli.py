"""Command-line entry point."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .harness import (
    ConfigError,
    _unique_cluster_rows,
    group_summary,
    load_config,
    load_result,
    output_directory,
    run,
    summarize_cdf,
    table_csv,
    write_result,
)


def _table(rows, columns) -> str:
    def fmt(v):
        return f"{v:.4g}" if isinstance(v, float) else str(v)

    cells = [[fmt(r[c]) for c in columns] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) if cells else len(c)
              for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    print(json.dumps(cfg.echo(), indent=2, sort_keys=True))
    print(f"{args.config}: valid", file=sys.stderr)
    return 0


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.monte_carlo.seed = args.seed
    if args.drops is not None:
        cfg.monte_carlo.num_drops = args.drops
    result = run(cfg, workers=args.workers)
    out = output_directory(cfg, args.output)
    files = write_result(result, out)
    rows = group_summary(result.records)
    if rows:
        print(_table(rows, ["policy", "criterion", "mode", "samples", "mean_se",
                            "median_se", "mean_cluster_size", "imprecise"]))
    if result.problems:
        print(f"{len(result.problems)} cluster constraint violations", file=sys.stderr)
    for f in files:
        print(f"wrote {f}", file=sys.stderr)
    return 1 if result.problems else 0


METRIC_KEYS = {
    "se": ("records", ("policy", "criterion", "mode")),
    "cluster_size": ("records", ("policy", "criterion")),
    "coverage_time": ("coverage", ("criterion",)),
}


def _samples(result, metric):
    source, keys = METRIC_KEYS[metric]
    rows = getattr(result, source)
    if metric == "cluster_size":
        rows = _unique_cluster_rows(rows)
    groups: dict[tuple, list] = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r[metric])
    return keys, groups


def cmd_summarize(args) -> int:
    result = load_result(args.result)
    keys, groups = _samples(result, args.metric)
    if not groups:
        print(f"{args.result}: no {args.metric} samples", file=sys.stderr)
        return 1
    rows = []
    for key, vals in sorted(groups.items()):
        x, F = summarize_cdf(vals, args.grid)
        for xi, Fi in zip(x, F):
            rows.append({**dict(zip(keys, key)), args.metric: float(xi), "cdf": float(Fi)})
    out = Path(args.output) if args.output else Path(args.result) / f"cdf_{args.metric}.csv"
    out.write_text(table_csv(rows))
    for key, vals in sorted(groups.items()):
        x, F = summarize_cdf(vals, args.grid)
        label = " / ".join(map(str, key))
        print(f"{label}  (n={len(vals)}, median={np.median(vals):.4g})")
        pts = np.unique(np.linspace(0, len(x) - 1, min(len(x), 11)).astype(int))
        print(_table([{args.metric: float(x[i]), "cdf": float(F[i])} for i in pts],
                     [args.metric, "cdf"]))
        print()
    print(f"wrote {out}", file=sys.stderr)
    return 0


def _median(vals):
    return float(np.median(vals)) if vals else float("nan")


def compare_records(records, paired=False) -> list[dict]:
    """Per-policy SE medians per (criterion, mode) with ordering checks."""
    groups: dict[tuple, dict] = {}
    for r in records:
        g = groups.setdefault((r["criterion"], r["mode"]), {})
        g.setdefault(r["policy"], []).append(r)
    rows = []
    for (crit, mode), pols in sorted(groups.items()):
        row = {"criterion": crit, "mode": mode}
        for p in ("uc", "fc", "nct"):
            row[f"median_{p}"] = _median([r["se"] for r in pols.get(p, [])])
        if "uc" in pols and "fc" in pols:
            row["uc_le_fc"] = "pass" if row["median_uc"] <= row["median_fc"] else "FAIL"
        if "uc" in pols and "nct" in pols:
            row["nct_lt_uc"] = "pass" if row["median_nct"] < row["median_uc"] else "FAIL"
        if paired:
            by_drop = {}
            for p, rs in pols.items():
                for r in rs:
                    by_drop.setdefault(r["drop"], {}).setdefault(p, []).append(r["se"])
            for a, b in (("uc", "fc"), ("uc", "nct")):
                d = [np.mean(v[a]) - np.mean(v[b]) for v in by_drop.values() if a in v and b in v]
                if d:
                    d = np.array(d)
                    se = float(d.std(ddof=1) / np.sqrt(d.size)) if d.size > 1 else float("nan")
                    row[f"paired_{a}_minus_{b}"] = float(d.mean())
                    row[f"paired_{a}_minus_{b}_stderr"] = se
        rows.append(row)
    return rows


def cmd_compare(args) -> int:
    records = []
    for k, path in enumerate(args.results):
        for r in load_result(path).records:
            # drops from different result sets are distinct pairing units
            records.append({**r, "drop": (k, r["drop"])})
    rows = compare_records(records, args.paired)
    if not rows:
        print("no SE records to compare", file=sys.stderr)
        return 1
    cols = list(dict.fromkeys(c for r in rows for c in r))
    rows = [{c: r.get(c, "") for c in cols} for r in rows]
    print(_table(rows, cols))
    out = Path(args.output) if args.output else Path(args.results[0]) / "compare.json"
    out.write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    print(f"wrote {out}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="leo-dmimo", description=__doc__)
    sub = ap.add_subparsers(dest="command")

    p = sub.add_parser("run", help="run an experiment")
    p.add_argument("config")
    p.add_argument("--output", help="result directory (overrides config and environment)")
    p.add_argument("--workers", type=int, default=1, help="parallel drop workers")
    p.add_argument("--seed", type=int)
    p.add_argument("--drops", type=int, help="override monte_carlo.num_drops")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("summarize", help="empirical CDF of a metric")
    p.add_argument("result")
    p.add_argument("--metric", choices=sorted(METRIC_KEYS), default="se")
    p.add_argument("--grid", type=int, default=50)
    p.add_argument("--output")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("compare", help="per-policy SE medians and ordering checks")
    p.add_argument("results", nargs="+")
    p.add_argument("--paired", action="store_true", help="per-drop paired differences")
    p.add_argument("--output")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("validate", help="check a config file")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.command is None:
        ap.print_usage(sys.stderr)
        return 2
    try:
        return args.func(args)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

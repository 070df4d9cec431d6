#!/usr/bin/env python3
"""Plot voltgp run CSVs and sweep summaries.

    python scripts/plot.py out/tc1.csv out/tc1_eta.csv -o mismatch.png
    python scripts/plot.py --x cum_updates --y mismatch_l2 out/*.csv
    python scripts/plot.py --summary out/summary.csv -o trend.png
"""
import argparse
import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def read_columns(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    cols = {}
    for key in rows[0] if rows else []:
        cols[key] = [float(r[key]) if r[key] != "" else float("nan") for r in rows]
    return cols


def plot_runs(paths, x, y, band, ax):
    for path in paths:
        cols = read_columns(path)
        ax.plot(cols[x], cols[y], label=Path(path).stem)
        std = {"mismatch_l2": "mismatch_std", "tracking_err_weighted": "tracking_std"}.get(y)
        if band and std in cols:
            lo = [m - s for m, s in zip(cols[y], cols[std])]
            hi = [m + s for m, s in zip(cols[y], cols[std])]
            ax.fill_between(cols[x], lo, hi, alpha=0.2)
        if y == "tracking_err_weighted" and any(b == b for b in cols["bound"]):
            ax.plot(cols[x], cols["bound"], "--", label=f"{Path(path).stem} bound")
    ax.set_xlabel(x)
    ax.set_ylabel(y)


def plot_summary(path, ax):
    with open(path, newline="") as fh:
        rows = [r for r in csv.DictReader(fh) if r["steady_state_tracking"]]
    values = [float(r["param_value"]) for r in rows]
    ax.plot(values, [float(r["steady_state_tracking"]) for r in rows], "o-", label="steady tracking")
    ax.plot(values, [float(r["steady_state_mismatch"]) for r in rows], "s-", label="steady mismatch")
    ax.set_xscale("log")
    ax.set_xlabel("parameter value")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("csv", nargs="*", help="run CSVs")
    ap.add_argument("--summary", help="sweep summary.csv")
    ap.add_argument("--x", default="step")
    ap.add_argument("--y", default="mismatch_l2")
    ap.add_argument("--band", action="store_true", help="shade one std around the mean")
    ap.add_argument("--logy", action="store_true")
    ap.add_argument("-o", "--output", default="plot.png")
    args = ap.parse_args()

    fig, ax = plt.subplots(figsize=(7, 4.5))
    if args.summary:
        plot_summary(args.summary, ax)
    else:
        plot_runs(args.csv, args.x, args.y, args.band, ax)
    if args.logy:
        ax.set_yscale("log")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(args.output, dpi=150)
    print(args.output)


if __name__ == "__main__":
    main()

"""Crash table (FC 1..7, "attacker-involved/total") from baseline and attack runs.

    python scripts/reproduce_table.py runs/baseline runs/attack --extended
"""

import argparse
from pathlib import Path

from advhighway.report import load_histogram, render_table


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("runs", nargs="+", help="run directories holding hist_*.json")
    ap.add_argument("--extended", action="store_true", help="also show FC 0")
    ap.add_argument("--out")
    args = ap.parse_args()

    files = sorted(p for run in args.runs for p in Path(run).glob("hist_*.json"))
    if not files:
        ap.error("no hist_*.json files found")
    text = render_table([load_histogram(p) for p in files], extended=args.extended)
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")


if __name__ == "__main__":
    main()

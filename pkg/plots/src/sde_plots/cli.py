"""Command-line wrapper: render benchmark CSVs into figure files."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

from .figures import FigureInputError, FigureSpec, render


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sde-plots",
        description="Render bounded-sde benchmark CSV outputs as figures.",
    )
    parser.add_argument("inputs", nargs="+", type=Path, help="input CSV files, one per series")
    parser.add_argument("--kind", choices=("convergence", "paths", "maxtrace"),
                        default="convergence")
    parser.add_argument("--out", type=Path, required=True, help="output image path (default SVG)")
    parser.add_argument("--guides", type=str, default="0.5,1",
                        help="comma-separated reference slopes for convergence figures")
    parser.add_argument("--labels", type=str, default=None,
                        help="comma-separated series labels (default: sidecar scheme names)")
    parser.add_argument("--title", type=str, default=None)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        guides = tuple(float(tok) for tok in args.guides.split(",") if tok.strip())
        labels = tuple(tok.strip() for tok in args.labels.split(",")) if args.labels else None
        spec = FigureSpec(
            inputs=tuple(args.inputs),
            out=args.out,
            kind=args.kind,
            slope_guides=guides,
            labels=labels,
            title=args.title,
        )
        out = render(spec)
    except (FigureInputError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Command line: one figure id, one input CSV, one output image."""

from __future__ import annotations

import argparse
import json
import sys

from .render import FigureSpec, SchemaError, render


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mfcce-plots", description="Render mfcce figure CSVs into images"
    )
    parser.add_argument("--figure", type=int, required=True, choices=[1, 2, 3, 4, 5])
    parser.add_argument("--input", required=True, help="figure CSV produced by the solver CLI")
    parser.add_argument("--output", required=True, help="image path (png, pdf, svg, ...)")
    parser.add_argument("--config", default=None, help="optional JSON with dpi/figsize/title")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    options = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            options = json.load(fh)
    if "figsize" in options:
        options["figsize"] = tuple(options["figsize"])
    spec = FigureSpec(which=args.figure, input_csv=args.input, output=args.output, **options)
    try:
        result = render(spec)
    except (SchemaError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {result['output']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

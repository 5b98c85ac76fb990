"""Command line entry points for the figure recipes."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .csvio import FigureDataError
from .recipes import RECIPES, render_all


def _parse_role_paths(recipe, csv_args):
    known = {role for role, _ in recipe.inputs}
    paths = {}
    for item in csv_args:
        role, sep, path = item.partition("=")
        if not sep or not path:
            raise ValueError(f"--csv expects role=path, got {item!r}")
        if role not in known:
            raise ValueError(
                f"unknown role {role!r} for {recipe.name}; "
                f"expected {', '.join(sorted(known))}"
            )
        paths[role] = Path(path)
    return paths


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="roughfig", description="render figures from simulation CSVs"
    )
    subs = parser.add_subparsers(dest="command", required=True)

    subs.add_parser("list", help="list recipes and their default inputs")

    p_render = subs.add_parser("render", help="render one recipe")
    p_render.add_argument("recipe")
    p_render.add_argument(
        "--csv", action="append", default=[], metavar="ROLE=PATH",
        help="input CSV for one role; repeat per role",
    )
    p_render.add_argument("--out", required=True, help="output image path")

    p_all = subs.add_parser("all", help="render every recipe from a data dir")
    p_all.add_argument("--data", required=True, help="directory of CSVs")
    p_all.add_argument("--out", required=True, help="output directory")

    args = parser.parse_args(argv)

    if args.command == "list":
        for recipe in RECIPES.values():
            print(f"{recipe.name}: {recipe.description}")
            for role, fname in recipe.inputs:
                print(f"  {role} = {fname}")
        return 0

    try:
        if args.command == "render":
            recipe = RECIPES.get(args.recipe)
            if recipe is None:
                raise ValueError(
                    f"unknown recipe {args.recipe!r}; see 'roughfig list'"
                )
            paths = _parse_role_paths(recipe, args.csv)
            made = [recipe.render(paths, Path(args.out))]
        else:
            made = render_all(Path(args.data), Path(args.out))
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except FigureDataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for path in made:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())

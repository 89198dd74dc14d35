"""Run every experiment of a recipe in order, then verify the outputs.

    python3 scripts/run_recipe.py scripts/recipes/desk.ini [--workers 8] [--scale 0.5]

Any extra flags are passed to each subcommand.
"""
import sys

from mlp01.harness.cli import main

STEPS = ("train", "noise-sweep", "min-distortion", "blackbox", "batch-size-study")


def run(recipe, extra, steps=STEPS):
    for step in steps:
        code = main([step, "--config", recipe, *extra])
        if code:
            sys.exit(code)
    out = [a for i, a in enumerate(extra) if i and extra[i - 1] == "--out"]
    sys.exit(main(["verify", "--config", recipe, *(["--out", out[0]] if out else [])]))


if __name__ == "__main__":
    if len(sys.argv) < 2:
        sys.exit(__doc__)
    run(sys.argv[1], sys.argv[2:])

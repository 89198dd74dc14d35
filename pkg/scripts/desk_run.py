"""Desk-scale CIFAR-10 run: train, noise sweep, HopSkipJump L2 and the
substitute black-box attack on the airplane/automobile pair.

    CIFAR10_DIR=/data/cifar-10-batches-bin python3 scripts/desk_run.py [--workers 8]

Roughly two hours on an 8-core desktop. Results land in runs/desk/.
"""
import sys
from pathlib import Path

from run_recipe import run

if __name__ == "__main__":
    recipe = str(Path(__file__).parent / "recipes" / "desk.ini")
    run(recipe, sys.argv[1:], ("train", "noise-sweep", "min-distortion", "blackbox"))

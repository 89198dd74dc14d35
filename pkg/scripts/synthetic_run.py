"""Every command on synthetic image-like data, in a few minutes.

This is a plumbing check. The data is not CIFAR-10 and none of the numbers
it produces back any robustness claim.

    python3 scripts/synthetic_run.py [--workers 4]
"""
import sys
from pathlib import Path

from run_recipe import run

if __name__ == "__main__":
    run(str(Path(__file__).parent / "recipes" / "smoke.ini"), sys.argv[1:])

"""Print a markdown table of sweep results: final and curve-average reward per setting."""

import sys
from pathlib import Path

import numpy as np

from urlbmdp.harness.output import bands, read_csv


def main(paths):
    print("| setting | final mean | final std | curve average |")
    print("|---|---|---|---|")
    for path in sorted(paths):
        points = bands(read_csv(path))
        final = points[-1]
        area = float(np.mean([b.mean for b in points]))
        print(f"| {Path(path).stem} | {final.mean:.3f} | {final.std:.3f} | {area:.3f} |")


if __name__ == "__main__":
    main(sys.argv[1:])

"""Print the mean of every metric, grouped by experiment, baseline and iteration.

Usage: python scripts/summarize.py results/*.csv
"""

import sys
from collections import defaultdict
from statistics import fmean

from gradvar.records import read_csv


def main(paths):
    for path in paths:
        groups = defaultdict(list)
        labels = defaultdict(lambda: defaultdict(int))
        last = {}
        for r in read_csv(path):
            key = (r.experiment, r.baseline, r.metric_name)
            if isinstance(r.value, str):
                labels[key][r.value] += 1
                continue
            last[key] = max(last.get(key, -1), r.iteration)
            groups[(key, r.iteration)].append(r.value)
        print(f"== {path}")
        for key, it in sorted(last.items()):
            vals = groups[(key, it)]
            print(f"{' / '.join(key):60s} iter {it:6d}  mean {fmean(vals):.6g}  (n={len(vals)})")
        for key, counts in sorted(labels.items()):
            print(f"{' / '.join(key):60s} {dict(counts)}")


if __name__ == "__main__":
    main(sys.argv[1:])

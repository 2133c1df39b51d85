"""Run the SC-vs-scratch ordering experiment on an MNIST directory in IDX layout.

    python3 scripts/ordering.py DIR [n_unlabeled] [n_labeled] [--normalize]
"""

import sys

from spatialcontrast.experiment import ordering_experiment


def main(argv):
    flags = {a for a in argv if a.startswith("--")}
    pos = [a for a in argv if not a.startswith("--")]
    directory = pos[0]
    n_unlabeled = int(pos[1]) if len(pos) > 1 else 10000
    n_labeled = int(pos[2]) if len(pos) > 2 else 1000
    result = ordering_experiment(directory, n_unlabeled=n_unlabeled, n_labeled=n_labeled, normalize="--normalize" in flags, log=print)
    print(result.summary())
    print("ordering holds" if result.holds else "ordering does NOT hold")


if __name__ == "__main__":
    main(sys.argv[1:])

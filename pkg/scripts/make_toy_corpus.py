"""Write the synthetic three-language corpus as WALS-style inputs for the CLI."""

import argparse

from wals_typology.toy import write_toy_inputs

if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("out", help="directory to write catalog, languages, corpus files and split manifest")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-train", type=int, default=200)
    p.add_argument("--n-dev", type=int, default=60)
    a = p.parse_args()
    paths = write_toy_inputs(a.out, a.seed, a.n_train, a.n_dev)
    for k, v in paths.items():
        print(k, *(v if isinstance(v, list) else [v]))

"""Finite-difference gradient report for every layer and a tiny end-to-end model.

Shows per-array max relative error and the fraction of probes excluded
because they crossed a ReLU or max-pool switch.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

from helpers import loss_fn, tiny_batch, tiny_config, tiny_space  # noqa: E402

from wals_typology.nn.gradcheck import check_model  # noqa: E402
from wals_typology.nn.model import FLAT, MULTITASK, Model  # noqa: E402

MODES = [("byte_ngram", FLAT), ("byte_ngram", MULTITASK), ("byte_unigram", FLAT), ("char_ngram", MULTITASK)]

if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--max-coords", type=int, default=None, help="probes per array (default: all)")
    a = p.parse_args()
    _, space, counts = tiny_space(unobserved=[("1A", 1)])
    for emb, out in MODES:
        for seed in range(a.seeds):
            cfg = tiny_config(emb, out, dropout=a.dropout)
            batch = tiny_batch(cfg, np.random.default_rng(seed), space=space)
            res = check_model(Model(cfg, seed=seed), batch, loss_fn(cfg, space, counts),
                              max_coords=a.max_coords, coord_seed=seed)
            print(f"# {emb}/{out} seed {seed}: max {res.max_error:.2e}, kinked {res.kinked_fraction:.3f}")
            for name, err in res.errors.items():
                print(f"{emb}\t{out}\t{seed}\t{name}\t{err:.3e}\t{res.kinked[name]}/{res.checked[name]}")

"""Train the byte 7-gram CNN-LSTM and the no-conv byte-unigram baseline on the toy corpus.

Prints the dev accuracy trace of each run and writes checkpoints and loss
logs under --out.
"""

import argparse
import time
from pathlib import Path

from threadpoolctl import threadpool_limits

from wals_typology.toy import TOY_TRAIN, run_toy

RUNS = {"byte7_cnn_lstm": ("byte_ngram", True), "unigram_no_conv": ("byte_unigram", False)}

if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/toy")
    p.add_argument("--steps", type=int, default=TOY_TRAIN["max_steps"])
    p.add_argument("--lr", type=float, default=TOY_TRAIN["lr"])
    p.add_argument("--positive-only", action="store_true", help="use the positive-only flat loss")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--runs", nargs="+", choices=list(RUNS), default=list(RUNS))
    a = p.parse_args()
    with threadpool_limits(1):
        for name in a.runs:
            emb, conv = RUNS[name]
            t0 = time.perf_counter()
            res = run_toy(emb, conv, out_dir=Path(a.out) / name, seed=a.seed, max_steps=a.steps,
                          lr=a.lr, two_sided=not a.positive_only)
            dt = time.perf_counter() - t0
            print(f"# {name}: {res.state.step} steps in {dt:.0f}s, best dev A {res.state.best_accuracy:.4f} "
                  f"at step {res.state.best_step}")
            for step, lr, loss, acc in res.log:
                print(f"{name}\t{step}\t{loss:.4f}\t{acc:.4f}")

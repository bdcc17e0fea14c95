"""A synthetic three-language corpus with disjoint byte alphabets, for smoke and convergence runs."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .corpus import Example
from .wals_schema import FeatureCatalog, LanguageRecord, WalsFeature, format_catalog, format_languages

ALPHABETS = {"tla": "abcdefgh", "tlb": "ijklmnop", "tlc": "qrstuvwx"}
CHAPTER_TYPES = ("Phonology", "Morphology", "Word Order", "Lexicon", "Nominal Syntax", "Simple Clauses")


def toy_catalog(n_features: int = 6, n_values: int = 3) -> FeatureCatalog:
    return FeatureCatalog(tuple(
        WalsFeature(f"{j + 1}A", f"Toy feature {j + 1}", str(j + 1), CHAPTER_TYPES[j % len(CHAPTER_TYPES)],
                    tuple(f"value {k + 1}" for k in range(n_values)))
        for j in range(n_features)
    ))


def toy_records(catalog: FeatureCatalog) -> list[LanguageRecord]:
    out = []
    for k, code in enumerate(ALPHABETS):
        assignments = {f.id: (k + j) % len(f.values) for j, f in enumerate(catalog.features)}
        out.append(LanguageRecord(f"w{code}", code, f"Toy {code}", f"Family {'AB'[k % 2]}",
                                  f"Genus {k}", ("Eurasia", "Africa", "Eurasia")[k], assignments))
    return out


def toy_texts(n: int, seed: int, min_len: int = 12, max_len: int = 40) -> list[tuple[str, str]]:
    rng = np.random.default_rng(seed)
    codes = list(ALPHABETS)
    out = []
    for i in range(n):
        code = codes[i % len(codes)]
        alpha = ALPHABETS[code]
        length = int(rng.integers(min_len, max_len + 1))
        out.append((code, "".join(alpha[j] for j in rng.integers(0, len(alpha), length))))
    order = rng.permutation(n)
    return [out[i] for i in order]


def toy_corpus(seed: int = 0, n_train: int = 200, n_dev: int = 60):
    catalog = toy_catalog()
    records = toy_records(catalog)
    splits = {
        "train": [Example(t, c, "train") for c, t in toy_texts(n_train, seed)],
        "dev": [Example(t, c, "dev") for c, t in toy_texts(n_dev, seed + 1000)],
    }
    return catalog, records, splits


def write_toy_inputs(out_dir, seed: int = 0, n_train: int = 200, n_dev: int = 60) -> dict:
    """Write catalog, languages table, corpus files and split manifest; returns their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    catalog, records, splits = toy_corpus(seed, n_train, n_dev)
    paths = {"catalog": out / "catalog.tsv", "languages": out / "languages.csv",
             "manifest": out / "splits.tsv"}
    paths["catalog"].write_bytes(format_catalog(catalog))
    paths["languages"].write_bytes(format_languages(records, catalog))
    corpus = []
    for split, exs in splits.items():
        p = out / f"toy_{split}.tsv"
        p.write_text("".join(f"{e.language}\t{e.text}\n" for e in exs), encoding="utf-8")
        corpus.append(p)
    paths["corpus"] = corpus
    paths["manifest"].write_text("".join(f"{p.name}\t{p.stem[4:]}\n" for p in corpus))
    return paths


TOY_TRAIN = dict(lr=1.0, two_sided=True, eval_interval=100, max_steps=2000)


def run_toy(embedding: str = "byte_ngram", conv: bool = True, out_dir=None, seed: int = 0,
            corpus_seed: int = 0, stop_at: int | None = None, resume=None, **train_kw):
    """Train on the toy corpus with full-sized layers; returns the ``TrainResult``.

    Differences from the published defaults in ``TOY_TRAIN`` are needed for a
    2000-step run to move at all; ``train_kw`` overrides them.
    """
    from .dataset import build_dataset
    from .losses import build_weights
    from .nn.model import Model, ModelConfig
    from .trainer import TrainConfig, restore, space_meta, train
    from .wals_schema import build_label_space, class_counts, records_by_iso

    catalog, records, splits = toy_corpus(corpus_seed)
    index = records_by_iso(records)
    counts = class_counts(index[e.language] for e in splits["train"])
    space = build_label_space(catalog, counts)
    kw = {} if conv else dict(conv_filters=(), conv_widths=())
    if embedding == "byte_unigram":
        kw["ngram"] = 1
    mcfg = ModelConfig.for_mode(embedding, tuple(space.sizes), dtype="float64", **kw)
    tcfg = TrainConfig(seed=seed, **{**TOY_TRAIN, **train_kw})
    train_set = build_dataset(splits["train"], index, space, mcfg)
    dev_set = build_dataset(splits["dev"], index, space, mcfg)
    weights = build_weights(counts, space, len(train_set))
    if resume is not None:
        model, opt, state, _ = restore(resume, mcfg)
    else:
        model, opt, state = Model(mcfg, seed=tcfg.seeds[1]), None, None
    meta = space_meta(space, format_catalog(catalog).decode("utf-8"))
    return train(model, train_set, dev_set, space, weights, tcfg, out_dir=out_dir, opt=opt, state=state,
                 extra_meta=meta, stop_at=stop_at)

"""Small shared builders for tests."""

import numpy as np

from wals_typology.losses import build_weights, flat_loss, multitask_loss
from wals_typology.nn.model import FLAT, Model, ModelConfig, make_batch
from wals_typology.wals_schema import FeatureCatalog, WalsFeature, build_label_space

SIZES = (3, 2, 4)


def tiny_space(sizes=SIZES, unobserved=()):
    catalog = FeatureCatalog(tuple(
        WalsFeature(f"{j + 1}A", f"feature {j}", str(j + 1), "Phonology", tuple(f"v{k}" for k in range(m)))
        for j, m in enumerate(sizes)))
    counts = {(f.id, v): 1 + (3 * j + v) % 4 for j, f in enumerate(catalog.features) for v in range(len(f.values))}
    for key in unobserved:
        counts[key] = 0
    return catalog, build_label_space(catalog, counts), counts


def tiny_config(embedding="byte_ngram", output=FLAT, sizes=SIZES, conv=True, **kw):
    base = dict(embed_dim=4, ngram=3 if embedding != "byte_unigram" else 1, conv_filters=(2, 3, 4),
                conv_widths=(5, 5, 3), lstm_units=4, dropout=0.5, dtype="float64")
    if embedding == "char_ngram":
        base["vocab"] = 64
    if not conv:
        base.update(conv_filters=(), conv_widths=())
    base.update(kw)
    return ModelConfig(embedding=embedding, output=output, feature_sizes=sizes, **base)


def random_texts(rng, n, lo=40, hi=70, alphabet="abcdefgh éü"):
    return ["".join(rng.choice(list(alphabet), size=rng.integers(lo, hi))) for _ in range(n)]


def tiny_batch(config, rng, n=3, space=None):
    fz = config.featurizer()
    inputs = [fz(t) for t in random_texts(rng, n)]
    sizes = config.feature_sizes
    targets = np.array([[rng.integers(-1, m) for m in sizes] for _ in range(n)])
    if space is not None:
        # never ask for an unobserved gold class
        for j, fid in enumerate(space.feature_ids):
            sl = space.feature_slice[fid]
            obs = np.flatnonzero(space.observed[sl.start:sl.stop])
            targets[:, j] = np.where(targets[:, j] >= 0, obs[targets[:, j] % len(obs)] if len(obs) else -1, -1)
    return make_batch(inputs, fz.pad_id, targets)


def tiny_model(config, seed):
    return Model(config, seed=seed)


def loss_fn(config, space, counts, two_sided=True):
    w = build_weights(counts, space, 10)
    if config.output == FLAT:
        return lambda z, t: flat_loss(z, t, space, w, two_sided=two_sided)
    return lambda z, t: multitask_loss(z, t, space, w, task_scale=True)


def random_problem(seed, B=4):
    rng = np.random.default_rng(seed)
    sizes = tuple(int(s) for s in rng.integers(1, 5, size=rng.integers(1, 5)))
    _, space, counts = tiny_space(sizes)
    mask = rng.random(space.C) < 0.3
    # keep at least one observed value per feature half of the time to exercise both paths
    counts = {k: (0 if mask[space.class_of[k]] else v) for k, v in counts.items()}
    _, space, _ = tiny_space(sizes, unobserved=[k for k, v in counts.items() if v == 0])
    w = build_weights(counts, space, 20)
    t = np.full((B, len(sizes)), -1)
    for j, fid in enumerate(space.feature_ids):
        sl = space.feature_slice[fid]
        obs = np.flatnonzero(space.observed[sl.start:sl.stop])
        for b in range(B):
            if len(obs) and rng.random() < 0.8:
                t[b, j] = rng.choice(obs)
    return rng.normal(scale=3, size=(B, space.C)), t, space, w

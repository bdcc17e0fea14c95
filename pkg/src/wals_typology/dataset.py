"""Featurized examples with gold targets, and seeded length-bucketed batching."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import Example
from .featurizer import Featurizer
from .nn.model import Batch, ModelConfig, make_batch
from .nn.layers import SequenceTooShort
from .wals_schema import LabelSpace, LanguageRecord, records_by_iso

log = logging.getLogger(__name__)

BUCKET_WIDTH = 50


@dataclass
class Dataset:
    texts: list[str]
    languages: list[str]
    inputs: list[np.ndarray]
    targets: np.ndarray          # (N, F)
    n_too_short: int = 0

    def __len__(self):
        return len(self.texts)

    def gold(self, space: LabelSpace) -> list[dict]:
        return [{fid: int(t[j]) for j, fid in enumerate(space.feature_ids) if t[j] >= 0}
                for t in self.targets]

    def batch(self, idx: Sequence[int], pad_id: int) -> Batch:
        idx = np.asarray(idx)
        return make_batch([self.inputs[i] for i in idx], pad_id, self.targets[idx], idx)


def build_dataset(examples: Iterable[Example], records: Iterable[LanguageRecord] | Mapping,
                  space: LabelSpace, config: ModelConfig) -> Dataset:
    """Featurize examples and attach their language's gold targets.

    Examples too short to survive the convolution stack are dropped and
    counted in ``n_too_short``.
    """
    index = records if isinstance(records, Mapping) else records_by_iso(records)
    fz: Featurizer = config.featurizer()
    texts, langs, inputs, targets = [], [], [], []
    too_short = 0
    for ex in examples:
        x = fz(ex.text)
        try:
            config.output_length(len(x))
        except SequenceTooShort:
            too_short += 1
            continue
        texts.append(ex.text)
        langs.append(ex.language)
        inputs.append(x)
        targets.append(space.targets(index[ex.language]))
    if too_short:
        log.warning("dropped %d examples too short for the convolution stack", too_short)
    tg = np.array(targets, dtype=np.int64).reshape(len(targets), space.n_features)
    return Dataset(texts, langs, inputs, tg, too_short)


def epoch_batches(dataset: Dataset, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """One epoch of index batches: shuffled, grouped into length buckets, then batch order shuffled."""
    rng = np.random.default_rng([seed, epoch])
    perm = rng.permutation(len(dataset))
    buckets: dict[int, list[int]] = {}
    for i in perm:
        buckets.setdefault(len(dataset.texts[i]) // BUCKET_WIDTH, []).append(int(i))
    batches = []
    for key in sorted(buckets):
        items = buckets[key]
        batches += [np.array(items[k:k + batch_size]) for k in range(0, len(items), batch_size)]
    order = rng.permutation(len(batches))
    return [batches[i] for i in order]


def iter_batches(dataset: Dataset, batch_size: int, seed: int, start_step: int = 0):
    """Endless stream of index batches, positioned so that the first yielded is step ``start_step``."""
    if len(dataset) == 0:
        raise ValueError("empty training set")
    epoch, step = 0, 0
    while True:
        batches = epoch_batches(dataset, batch_size, seed, epoch)
        for b in batches:
            if step >= start_step:
                yield b
            step += 1
        epoch += 1


def eval_batches(dataset: Dataset, batch_size: int = 64) -> list[np.ndarray]:
    """Length-sorted fixed batches for inference."""
    order = sorted(range(len(dataset)), key=lambda i: (len(dataset.inputs[i]), i))
    return [np.array(order[k:k + batch_size]) for k in range(0, len(order), batch_size)]

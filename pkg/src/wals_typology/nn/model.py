"""CNN-biLSTM multi-label classifier with a hand-written backward pass."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .. import featurizer as fz
from . import layers as L

FLAT = "flat"
MULTITASK = "multitask"


@dataclass(frozen=True)
class ModelConfig:
    embedding: str = fz.BYTE_NGRAM
    ngram: int = 7
    embed_dim: int = 32
    vocab: int = fz.BYTE_VOCAB
    conv_filters: tuple[int, ...] = (20, 40, 60)
    conv_widths: tuple[int, ...] = (5, 5, 3)
    pool: int = 2
    lstm_units: int = 128
    lstm_layers: int = 2
    residual: bool = True
    dropout: float = 0.5
    output: str = FLAT
    # per-feature value counts, catalog order; their sum is the output width
    feature_sizes: tuple[int, ...] = ()
    forget_bias: float = 1.0
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "conv_filters", tuple(self.conv_filters))
        object.__setattr__(self, "conv_widths", tuple(self.conv_widths))
        object.__setattr__(self, "feature_sizes", tuple(int(s) for s in self.feature_sizes))
        if self.embedding not in fz.MODES:
            raise ValueError(f"unknown embedding mode {self.embedding!r}")
        if self.output not in (FLAT, MULTITASK):
            raise ValueError(f"unknown output mode {self.output!r}")
        if len(self.conv_filters) != len(self.conv_widths):
            raise ValueError("conv_filters and conv_widths differ in length")
        ints = (self.ngram, self.embed_dim, self.vocab, self.pool, self.lstm_units, self.lstm_layers)
        if min(ints + self.conv_filters + self.conv_widths + (self.feature_sizes or (1,))) < 1:
            raise ValueError("model sizes must be positive")
        if not self.feature_sizes:
            raise ValueError("feature_sizes must name at least one feature")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"unsupported dtype {self.dtype!r}")

    @classmethod
    def for_mode(cls, embedding: str, feature_sizes, **kw) -> "ModelConfig":
        """Default published sizes for an embedding mode."""
        n, vocab, d = fz.MODE_DEFAULTS[embedding]
        kw.setdefault("ngram", n)
        kw.setdefault("vocab", vocab)
        kw.setdefault("embed_dim", d)
        return cls(embedding=embedding, feature_sizes=tuple(feature_sizes), **kw)

    @property
    def n_classes(self) -> int:
        return sum(self.feature_sizes)

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("conv_filters", "conv_widths", "feature_sizes"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    def featurizer(self) -> fz.Featurizer:
        return fz.Featurizer(self.embedding, self.ngram, buckets=self.vocab)

    def output_length(self, length: int) -> int:
        """Sequence length entering the LSTM; raises SequenceTooShort if a stage cannot run."""
        for r in self.conv_widths:
            if length < r:
                raise L.SequenceTooShort(f"length {length} shorter than receptive field {r}")
            length = length - r + 1
            if length < self.pool:
                raise L.SequenceTooShort(f"length {length} shorter than pool size {self.pool}")
            length //= self.pool
        if length < 1:
            raise L.SequenceTooShort("empty sequence")
        return length

    def min_length(self) -> int:
        n = 1
        while True:
            try:
                self.output_length(n)
                return n
            except L.SequenceTooShort:
                n += 1


def _glorot(rng, shape, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def init_params(config: ModelConfig, seed: int):
    """Trainable parameters and batchnorm running statistics, both as ordered name -> array dicts."""
    rng = np.random.default_rng(seed)
    dt = config.np_dtype
    params, buffers = {}, {}
    params["embed/W"] = fz.init_embedding(
        config.embedding, int(rng.integers(2 ** 63)), config.embed_dim, config.vocab, dt).W
    width = config.embed_dim
    for j, (F, r) in enumerate(zip(config.conv_filters, config.conv_widths)):
        params[f"conv{j}/W"] = _glorot(rng, (r, width, F), r * width, r * F, dt)
        params[f"conv{j}/gamma"] = np.ones(F, dt)
        params[f"conv{j}/beta"] = np.zeros(F, dt)
        buffers[f"conv{j}/running_mean"] = np.zeros(F, dt)
        buffers[f"conv{j}/running_var"] = np.ones(F, dt)
        width = F
    H = config.lstm_units
    for layer in range(config.lstm_layers):
        for d in ("fw", "bw"):
            p = f"lstm{layer}/{d}"
            params[f"{p}/W"] = _glorot(rng, (width, 4 * H), width, 4 * H, dt)
            params[f"{p}/U"] = _glorot(rng, (H, 4 * H), H, 4 * H, dt)
            b = np.zeros(4 * H, dt)
            b[H:2 * H] = config.forget_bias
            params[f"{p}/b"] = b
        width = 2 * H
    if config.output == FLAT:
        C = config.n_classes
        params["head/W"] = _glorot(rng, (width, C), width, C, dt)
        params["head/b"] = np.zeros(C, dt)
    else:
        for k, M in enumerate(config.feature_sizes):
            params[f"head{k}/W"] = _glorot(rng, (width, M), width, M, dt)
            params[f"head{k}/b"] = np.zeros(M, dt)
    return params, buffers


def recurrent_weight_names(params) -> list[str]:
    """Hidden-to-hidden LSTM matrices, the targets of the L2 penalty."""
    return [k for k in params if k.startswith("lstm") and k.endswith("/U")]


@dataclass
class Batch:
    ids: np.ndarray          # (B, L, width)
    lengths: np.ndarray      # (B,)
    targets: np.ndarray | None = None  # (B, F) gold value index, -1 where unattested
    index: np.ndarray | None = None    # positions in the source dataset


def make_batch(inputs, pad_id: int, targets=None, index=None) -> Batch:
    lengths = np.array([len(x) for x in inputs], dtype=np.int64)
    width = inputs[0].shape[1]
    ids = np.full((len(inputs), lengths.max(), width), pad_id, dtype=np.int64)
    for b, x in enumerate(inputs):
        ids[b, :len(x)] = x
    tg = None if targets is None else np.asarray(targets, dtype=np.int64)
    return Batch(ids, lengths, tg, None if index is None else np.asarray(index))


@dataclass
class ForwardCache:
    steps: list = field(default_factory=list)
    lengths: np.ndarray | None = None
    T: int = 0
    width: int = 0
    head: list = field(default_factory=list)


class Model:
    """Parameters plus forward/backward over :class:`Batch` objects."""

    def __init__(self, config: ModelConfig, params=None, buffers=None, seed: int = 0):
        self.config = config
        if params is None:
            params, buffers = init_params(config, seed)
        self.params = params
        self.buffers = buffers
        self.pad_id = config.featurizer().pad_id

    def forward(self, batch: Batch, train: bool = False, rng: np.random.Generator | None = None,
                update_stats: bool = True):
        """Logits ``(B, C)`` and a cache for :meth:`backward`.

        In flat mode the columns are classes; in multi-task mode they are the
        per-feature blocks laid end to end.
        """
        cfg, P = self.config, self.params
        if train and cfg.dropout > 0 and rng is None:
            raise ValueError("train mode with dropout needs an rng")
        for n in np.unique(batch.lengths):
            cfg.output_length(int(n))
        cache = ForwardCache()
        steps = cache.steps
        x, c = fz.embedding_forward(P["embed/W"], batch.ids, self.pad_id)
        steps.append(("embed", c))
        x, c = L.dropout_forward(x, cfg.dropout, train, rng)
        steps.append(("dropout", c))
        lengths = batch.lengths
        for j in range(len(cfg.conv_filters)):
            # no conv bias: the batchnorm shift that follows absorbs it
            x, lengths, c = L.conv1d_forward(x, P[f"conv{j}/W"], 0.0, lengths)
            steps.append(("conv", j, c))
            rm, rv = self.buffers[f"conv{j}/running_mean"], self.buffers[f"conv{j}/running_var"]
            x, c, (rm, rv) = L.batchnorm_forward(x, P[f"conv{j}/gamma"], P[f"conv{j}/beta"],
                                                 lengths, rm, rv, train)
            if train and update_stats:
                self.buffers[f"conv{j}/running_mean"], self.buffers[f"conv{j}/running_var"] = rm, rv
            steps.append(("bn", j, c))
            x, c = L.relu_forward(x)
            steps.append(("relu", c))
            x, lengths, c = L.maxpool_forward(x, lengths, cfg.pool)
            steps.append(("pool", c))
        if cfg.conv_filters:
            x, c = L.dropout_forward(x, cfg.dropout, train, rng)
            steps.append(("dropout", c))
        for layer in range(cfg.lstm_layers):
            fw = tuple(P[f"lstm{layer}/fw/{k}"] for k in "WUb")
            bw = tuple(P[f"lstm{layer}/bw/{k}"] for k in "WUb")
            y, c = L.bilstm_forward(x, lengths, fw, bw)
            residual = cfg.residual and layer > 0 and y.shape[2] == x.shape[2]
            steps.append(("lstm", layer, c, residual))
            if residual:
                y = y + x
            x, c = L.dropout_forward(y, cfg.dropout, train, rng)
            steps.append(("dropout", c))
        H = cfg.lstm_units
        rows = np.arange(x.shape[0])
        last = np.concatenate([x[rows, lengths - 1, :H], x[rows, 0, H:]], axis=1)
        cache.lengths, cache.T = lengths, x.shape[1]
        cache.width = x.shape[2]
        if cfg.output == FLAT:
            logits, c = L.dense_forward(last, P["head/W"], P["head/b"])
            cache.head.append(c)
        else:
            blocks = []
            for k in range(len(cfg.feature_sizes)):
                z, c = L.dense_forward(last, P[f"head{k}/W"], P[f"head{k}/b"])
                blocks.append(z)
                cache.head.append(c)
            logits = np.concatenate(blocks, axis=1)
        return logits, cache

    @staticmethod
    def decision_signature(cache: ForwardCache) -> bytes:
        """The discrete choices of a forward pass (ReLU gates, max-pool winners).

        Finite differences are only meaningful when this is unchanged.
        """
        parts = []
        for step in cache.steps:
            if step[0] == "relu":
                parts.append(np.packbits(step[1]).tobytes())
            elif step[0] == "pool":
                parts.append(step[1][0].astype(np.int8).tobytes())
        return b"".join(parts)

    def backward(self, dlogits, cache: ForwardCache) -> dict:
        cfg = self.config
        grads = {}
        H = cfg.lstm_units
        if cfg.output == FLAT:
            dlast, grads["head/W"], grads["head/b"] = L.dense_backward(dlogits, cache.head[0])
        else:
            dlast = 0.0
            off = 0
            for k, M in enumerate(cfg.feature_sizes):
                d, grads[f"head{k}/W"], grads[f"head{k}/b"] = L.dense_backward(
                    dlogits[:, off:off + M], cache.head[k])
                dlast = dlast + d
                off += M
        B = dlogits.shape[0]
        rows = np.arange(B)
        dx = np.zeros((B, cache.T, cache.width), dtype=dlogits.dtype)
        np.add.at(dx, (rows, cache.lengths - 1, slice(0, H)), dlast[:, :H])
        np.add.at(dx, (rows, 0, slice(H, 2 * H)), dlast[:, H:])
        for step in reversed(cache.steps):
            kind = step[0]
            if kind == "dropout":
                dx = L.dropout_backward(dx, step[1])
            elif kind == "lstm":
                _, layer, c, residual = step
                dy = dx
                dx, g_f, g_b = L.bilstm_backward(dy, c)
                if residual:
                    dx = dx + dy
                for d, g in (("fw", g_f), ("bw", g_b)):
                    for name, arr in zip(("W", "U", "b"), g):
                        grads[f"lstm{layer}/{d}/{name}"] = arr
            elif kind == "pool":
                dx = L.maxpool_backward(dx, step[1])
            elif kind == "relu":
                dx = L.relu_backward(dx, step[1])
            elif kind == "bn":
                dx, grads[f"conv{step[1]}/gamma"], grads[f"conv{step[1]}/beta"] = L.batchnorm_backward(dx, step[2])
            elif kind == "conv":
                dx, grads[f"conv{step[1]}/W"], _ = L.conv1d_backward(dx, step[2])
            elif kind == "embed":
                grads["embed/W"] = fz.embedding_backward(dx, step[1])
        return {k: grads[k] for k in self.params}

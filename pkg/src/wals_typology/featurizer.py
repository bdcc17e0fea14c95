"""Text to model input: byte ids, byte n-gram windows, hashed character n-grams.

All three modes produce the same shape of input: an integer matrix with one
row per token and one column per constituent id. A token's embedding is the
mean of the embedding rows of its constituents, so byte unigrams are
windows of width one and hashed character n-grams are single-id tokens.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

N_BYTES = 256
EOS = 256
PAD = 257
BYTE_VOCAB = 258

BYTE_UNIGRAM = "byte_unigram"
BYTE_NGRAM = "byte_ngram"
CHAR_NGRAM = "char_ngram"
MODES = (BYTE_UNIGRAM, BYTE_NGRAM, CHAR_NGRAM)

# mode -> (max n-gram length, vocabulary size, embedding dim)
MODE_DEFAULTS = {
    BYTE_UNIGRAM: (1, BYTE_VOCAB, 8),
    BYTE_NGRAM: (7, BYTE_VOCAB, 32),
    CHAR_NGRAM: (5, 2 ** 14, 256),
}

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def encode_bytes(text: str) -> np.ndarray:
    """UTF-8 bytes of ``text`` as ids, followed by a single EOS."""
    raw = np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.int64)
    return np.append(raw, EOS)


@dataclass(frozen=True)
class NgramToken:
    start: int
    byte_ids: tuple[int, ...]

    @property
    def len(self) -> int:
        return len(self.byte_ids)


def _windows(T: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Start positions and lengths of every window of length <= n, ordered by start then length."""
    if n < 1:
        raise ValueError(f"n-gram length must be >= 1, got {n}")
    counts = np.minimum(n, T - np.arange(T))
    starts = np.repeat(np.arange(T), counts)
    offsets = np.arange(len(starts)) - np.repeat(np.cumsum(counts) - counts, counts)
    return starts, offsets + 1


def _split_eos(ids):
    ids = np.asarray(ids, dtype=np.int64)
    if len(ids) and ids[-1] == EOS:
        return ids[:-1], True
    return ids, False


def expand_ngrams(ids, n: int) -> list[NgramToken]:
    """All byte windows of length 1..n at every start position.

    A trailing EOS is never part of a wider window; it is emitted last as its
    own unigram.
    """
    content, has_eos = _split_eos(ids)
    starts, lens = _windows(len(content), n)
    tokens = [NgramToken(int(s), tuple(int(b) for b in content[s:s + k])) for s, k in zip(starts, lens)]
    if has_eos:
        tokens.append(NgramToken(len(content), (EOS,)))
    return tokens


def ngram_matrix(ids, n: int) -> np.ndarray:
    """Vectorized :func:`expand_ngrams`: an ``(L, n)`` id matrix, PAD beyond each window."""
    content, has_eos = _split_eos(ids)
    starts, lens = _windows(len(content), n)
    cols = starts[:, None] + np.arange(n)[None, :]
    inside = np.arange(n)[None, :] < lens[:, None]
    padded = np.append(content, PAD)
    out = np.where(inside, padded[np.minimum(cols, len(content))], PAD)
    if has_eos:
        eos = np.full((1, n), PAD, dtype=np.int64)
        eos[0, 0] = EOS
        out = np.vstack([out, eos])
    return out.astype(np.int64)


def fnv1a_64(data: bytes) -> int:
    h = FNV64_OFFSET
    for b in data:
        h = ((h ^ b) * FNV64_PRIME) & _MASK64
    return h


@lru_cache(maxsize=1 << 16)
def _bucket(s: str, buckets: int) -> int:
    return fnv1a_64(s.encode("utf-8")) % buckets


def char_ngrams_hashed(text: str, n: int = 5, buckets: int = 2 ** 14) -> np.ndarray:
    """Bucket id of every character window of length 1..n, same order as :func:`expand_ngrams`."""
    starts, lens = _windows(len(text), n)
    return np.array([_bucket(text[s:s + k], buckets) for s, k in zip(starts, lens)], dtype=np.int64)


@dataclass
class EmbeddingTable:
    W: np.ndarray
    mode: str

    @property
    def dim(self) -> int:
        return self.W.shape[1]


def init_embedding(mode: str, seed: int, dim: int | None = None, vocab: int | None = None,
                   dtype=np.float64) -> EmbeddingTable:
    """Normal(0, 1/sqrt(d)) initialization."""
    if mode not in MODES:
        raise ValueError(f"unknown embedding mode {mode!r}")
    _, default_vocab, default_dim = MODE_DEFAULTS[mode]
    d = dim or default_dim
    V = vocab or default_vocab
    rng = np.random.default_rng(seed)
    return EmbeddingTable(rng.normal(0.0, 1.0 / np.sqrt(d), size=(V, d)).astype(dtype), mode)


def embed_ngram(token: NgramToken, table: EmbeddingTable) -> np.ndarray:
    return table.W[list(token.byte_ids)].mean(axis=0)


class Featurizer:
    """Turns text into the ``(L, width)`` id matrix the embedding layer consumes.

    ``width`` is the n-gram length for byte modes and 1 for hashed character
    n-grams. Missing constituents are PAD (byte modes) or -1 (character mode)
    and are ignored by the embedding mean.
    """

    def __init__(self, mode: str = BYTE_NGRAM, n: int | None = None, buckets: int = 2 ** 14):
        if mode not in MODES:
            raise ValueError(f"unknown embedding mode {mode!r}")
        self.mode = mode
        self.n = n or MODE_DEFAULTS[mode][0]
        self.buckets = buckets

    @property
    def width(self) -> int:
        return 1 if self.mode == CHAR_NGRAM else self.n

    @property
    def vocab(self) -> int:
        return self.buckets if self.mode == CHAR_NGRAM else BYTE_VOCAB

    @property
    def pad_id(self) -> int:
        return -1 if self.mode == CHAR_NGRAM else PAD

    def __call__(self, text: str) -> np.ndarray:
        if self.mode == CHAR_NGRAM:
            return char_ngrams_hashed(text, self.n, self.buckets)[:, None]
        ids = encode_bytes(text)
        if self.mode == BYTE_UNIGRAM and self.n == 1:
            return ids[:, None]
        return ngram_matrix(ids, self.n)


def embedding_forward(W: np.ndarray, ids: np.ndarray, pad_id: int):
    """Mean of constituent rows per token.

    ``ids`` is ``(B, L, width)``; constituents equal to ``pad_id`` are
    skipped, and fully padded tokens embed to zero.
    """
    valid = ids != pad_id
    k = valid.sum(-1)
    scale = np.where(k > 0, 1.0 / np.maximum(k, 1), 0.0).astype(W.dtype)
    safe = np.where(valid, ids, 0)
    rows = W[safe] * valid[..., None]
    out = rows.sum(axis=2) * scale[..., None]
    return out, (safe, valid, scale, W.shape)


def embedding_backward(dout: np.ndarray, cache) -> np.ndarray:
    safe, valid, scale, shape = cache
    dW = np.zeros(shape, dtype=dout.dtype)
    g = dout * scale[..., None]
    idx = safe[valid]
    contrib = np.broadcast_to(g[:, :, None, :], valid.shape + (shape[1],))[valid]
    np.add.at(dW, idx, contrib)
    return dW

"""Corpus ingestion: ISO code conversion, WALS join, length filtering, splits and statistics."""

from __future__ import annotations

import math
import os
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Iterable, Iterator, Mapping

from .wals_schema import LanguageRecord, records_by_iso

SPLITS = ("train", "dev", "test")
MIN_CHARS = 5
MAX_CHARS = 600


class CorpusError(ValueError):
    pass


@lru_cache(maxsize=1)
def _iso_table() -> dict[str, str]:
    text = resources.files("wals_typology").joinpath("data/iso639_1.tsv").read_text("utf-8")
    table = {}
    for line in text.splitlines():
        if line and not line.startswith("#"):
            a2, a3, _ = line.split("\t", 2)
            table[a2] = a3
    return table


def iso1_to_iso3(code: str) -> str:
    """Map a two-letter ISO 639-1 code to its ISO 639-3 equivalent."""
    try:
        return _iso_table()[code]
    except KeyError:
        raise KeyError(f"unknown ISO 639-1 code {code!r}") from None


@dataclass(frozen=True)
class Example:
    text: str
    language: str
    split: str = "train"

    @property
    def bytes(self) -> bytes:
        return self.text.encode("utf-8")


@dataclass
class JoinReport:
    kept: Counter = field(default_factory=Counter)
    dropped_languages: Counter = field(default_factory=Counter)

    def merge(self, other: "JoinReport") -> "JoinReport":
        return JoinReport(self.kept + other.kept, self.dropped_languages + other.dropped_languages)

    def format(self) -> str:
        lines = [
            f"kept_languages\t{len(self.kept)}",
            f"kept_examples\t{sum(self.kept.values())}",
            f"dropped_languages\t{len(self.dropped_languages)}",
            f"dropped_examples\t{sum(self.dropped_languages.values())}",
        ]
        lines += [f"dropped\t{code}\t{n}" for code, n in sorted(self.dropped_languages.items())]
        return "\n".join(lines) + "\n"


def read_corpus(lines: Iterable[str]) -> Iterator[tuple[str, str]]:
    """Parse ``code TAB text`` lines. Blank lines are skipped."""
    for lineno, line in enumerate(lines, 1):
        line = line.rstrip("\n")
        if not line:
            continue
        code, sep, text = line.partition("\t")
        if not sep or not code:
            raise CorpusError(f"line {lineno}: expected 'code<TAB>text'")
        yield code, text


def read_corpus_file(path) -> list[tuple[str, str]]:
    with open(path, encoding="utf-8", newline="\n") as fh:
        try:
            return list(read_corpus(fh))
        except CorpusError as e:
            raise CorpusError(f"{path}: {e}") from None


def normalize_code(code: str) -> str | None:
    if len(code) == 2:
        try:
            return iso1_to_iso3(code)
        except KeyError:
            return None
    return code


def join_corpus(
    raw: Iterable[tuple[str, str]],
    records: Iterable[LanguageRecord],
    split: str = "train",
) -> tuple[list[Example], JoinReport]:
    """Attach each corpus line to a WALS record through its ISO 639-3 code.

    Lines whose code cannot be matched are dropped and tallied, by their
    original code, in the report.
    """
    index = records_by_iso(records)
    report = JoinReport()
    out = []
    for code, text in raw:
        iso3 = normalize_code(code)
        if iso3 is None or iso3 not in index:
            report.dropped_languages[code] += 1
            continue
        report.kept[iso3] += 1
        out.append(Example(text, iso3, split))
    return out, report


def filter_by_length(text: str, min_chars: int = MIN_CHARS, max_chars: int = MAX_CHARS) -> bool:
    return min_chars <= len(text) <= max_chars


# -- splits -----------------------------------------------------------------

def parse_split_manifest(lines: Iterable[str]) -> dict[str, str]:
    manifest = {}
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2 or parts[1] not in SPLITS:
            raise CorpusError(f"manifest line {lineno}: expected 'filename<TAB>train|dev|test'")
        name, split = parts
        if name in manifest:
            raise CorpusError(f"manifest line {lineno}: duplicate assignment for {name!r}")
        manifest[name] = split
    return manifest


def make_splits(
    sources: Mapping[str, Iterable[tuple[str, str]]],
    manifest: Mapping[str, str],
) -> dict[str, list[tuple[str, str]]]:
    """Route each source file's lines to the split named for it in the manifest.

    Files are matched by base name.
    """
    out = {s: [] for s in SPLITS}
    for name, lines in sources.items():
        key = os.path.basename(name)
        if key not in manifest:
            raise CorpusError(f"file {key!r} is not assigned to a split")
        out[manifest[key]].extend(lines)
    return out


# -- statistics -------------------------------------------------------------

@dataclass
class _Moments:
    n: int = 0
    total: int = 0
    sumsq: int = 0
    max: int = 0

    def add(self, x: int):
        self.n += 1
        self.total += x
        self.sumsq += x * x
        self.max = max(self.max, x)

    def merge(self, other: "_Moments") -> "_Moments":
        return _Moments(self.n + other.n, self.total + other.total,
                        self.sumsq + other.sumsq, max(self.max, other.max))

    @property
    def mean(self) -> float:
        return self.total / self.n if self.n else 0.0

    @property
    def std(self) -> float:
        # population std from exact integer moments
        if not self.n:
            return 0.0
        return math.sqrt(self.n * self.sumsq - self.total * self.total) / self.n


@dataclass(frozen=True)
class SplitStats:
    n_languages: int
    n: int
    s_max_bytes: int
    n_bytes: int
    mean_bytes: float
    std_bytes: float
    n_chars: int
    mean_chars: float
    std_chars: float


@dataclass
class StatsAccumulator:
    """Mergeable length statistics; shards may be accumulated separately and merged exactly."""

    languages: set = field(default_factory=set)
    byte_len: _Moments = field(default_factory=_Moments)
    char_len: _Moments = field(default_factory=_Moments)

    def add(self, ex: Example):
        self.languages.add(ex.language)
        self.byte_len.add(len(ex.bytes))
        self.char_len.add(len(ex.text))

    def merge(self, other: "StatsAccumulator") -> "StatsAccumulator":
        return StatsAccumulator(self.languages | other.languages,
                                self.byte_len.merge(other.byte_len),
                                self.char_len.merge(other.char_len))

    def result(self) -> SplitStats:
        b, c = self.byte_len, self.char_len
        return SplitStats(len(self.languages), b.n, b.max, b.total, b.mean, b.std,
                          c.total, c.mean, c.std)


def split_stats(examples: Iterable[Example]) -> SplitStats:
    acc = StatsAccumulator()
    for ex in examples:
        acc.add(ex)
    return acc.result()


def corpus_stats(examples: Iterable[Example]) -> dict[str, SplitStats]:
    """Per-split statistics. Every split in ``SPLITS`` gets a row, zero if empty."""
    accs = {s: StatsAccumulator() for s in SPLITS}
    for ex in examples:
        accs.setdefault(ex.split, StatsAccumulator()).add(ex)
    return {s: a.result() for s, a in accs.items()}


STATS_COLUMNS = ("split", "N_L", "N", "S_max_B", "N_B", "mean_B", "std_B", "N_C", "mean_C", "std_C")


def _stats_cells(split: str, s: SplitStats) -> list[str]:
    return [split, str(s.n_languages), str(s.n), str(s.s_max_bytes), str(s.n_bytes),
            f"{s.mean_bytes:.1f}", f"{s.std_bytes:.1f}", str(s.n_chars),
            f"{s.mean_chars:.1f}", f"{s.std_chars:.1f}"]


def format_stats(stats: Mapping[str, SplitStats], fmt: str = "text") -> str:
    rows = [_stats_cells(k, v) for k, v in stats.items()]
    if fmt == "delimited":
        return "\n".join(",".join(r) for r in [list(STATS_COLUMNS)] + rows) + "\n"
    if fmt != "text":
        raise ValueError(f"unknown format {fmt!r}")
    table = [list(STATS_COLUMNS)] + rows
    widths = [max(len(r[i]) for r in table) for i in range(len(STATS_COLUMNS))]
    lines = [
        "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
        for r in table
    ]
    return "\n".join(lines) + "\n"

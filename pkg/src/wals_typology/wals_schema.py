"""WALS feature catalog, language records, and the global label space.

Two on-disk formats are understood:

* the native catalog (``feature_id TAB chapter_type TAB name TAB v1 | v2 ...``)
  plus a comma-separated languages table whose cells hold value names;
* the public WALS ``language.csv`` export, whose feature columns are headed
  ``"<id> <name>"`` and whose cells read ``"<k> <value name>"``.

Everything here is immutable after construction.
"""

from __future__ import annotations

import csv
import io
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

CHAPTER_TYPES = (
    "Phonology",
    "Morphology",
    "Nominal Categories",
    "Nominal Syntax",
    "Verbal Categories",
    "Word Order",
    "Simple Clauses",
    "Complex Sentences",
    "Lexicon",
    "Sign Languages",
    "Other",
)

LANGUAGE_COLUMNS = ("wals_code", "iso_code", "name", "genus", "family", "macroarea")

_ISO3 = re.compile(r"^[a-z]{3}$")
_FEATURE_ID = re.compile(r"^(\d+)([A-Z])$")


class WalsParseError(ValueError):
    """Malformed WALS input. ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class WalsFeature:
    id: str
    name: str
    chapter: str
    chapter_type: str
    values: tuple[str, ...]

    def __post_init__(self):
        if not self.values:
            raise ValueError(f"feature {self.id} has no values")
        if len(set(self.values)) != len(self.values):
            raise ValueError(f"feature {self.id} has duplicate value names")
        if self.chapter_type not in CHAPTER_TYPES:
            raise ValueError(f"feature {self.id}: unknown chapter type {self.chapter_type!r}")

    def value_index(self, value: str) -> int:
        try:
            return self.values.index(value)
        except ValueError:
            raise KeyError(f"feature {self.id} has no value {value!r}") from None


@dataclass(frozen=True)
class FeatureCatalog:
    features: tuple[WalsFeature, ...]
    _by_id: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        by_id = {}
        for f in self.features:
            if f.id in by_id:
                raise ValueError(f"duplicate feature id {f.id}")
            by_id[f.id] = f
        object.__setattr__(self, "_by_id", by_id)

    @property
    def n_features(self) -> int:
        return len(self.features)

    def __len__(self):
        return len(self.features)

    def __contains__(self, fid):
        return fid in self._by_id

    def __getitem__(self, fid: str) -> WalsFeature:
        return self._by_id[fid]

    @property
    def ids(self) -> list[str]:
        return [f.id for f in self.features]


@dataclass(frozen=True)
class LanguageRecord:
    wals_code: str
    iso639_3: str | None
    name: str
    family: str
    genus: str
    macro_area: str
    assignments: Mapping[str, int]


def chapter_of(feature_id: str) -> str:
    """``"81A"`` -> ``"81"``; ids not of the WALS shape are their own chapter."""
    m = _FEATURE_ID.match(feature_id)
    return m.group(1) if m else feature_id


def _text(data: bytes | str) -> str:
    if isinstance(data, bytes):
        return data.decode("utf-8")
    return data


# -- native catalog ---------------------------------------------------------

def parse_catalog(catalog_bytes: bytes | str) -> FeatureCatalog:
    features = []
    seen = set()
    for lineno, line in enumerate(_text(catalog_bytes).split("\n"), 1):
        line = line.rstrip("\r")
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise WalsParseError(f"expected 4 tab-separated fields, got {len(parts)}", lineno)
        fid, ctype, name, values = (p.strip() for p in parts)
        if fid in seen:
            raise WalsParseError(f"duplicate feature id {fid}", lineno)
        seen.add(fid)
        vals = tuple(v.strip() for v in values.split("|"))
        try:
            features.append(WalsFeature(fid, name, chapter_of(fid), ctype, vals))
        except ValueError as e:
            raise WalsParseError(str(e), lineno) from None
    return FeatureCatalog(tuple(features))


def format_catalog(catalog: FeatureCatalog) -> bytes:
    lines = [
        f"{f.id}\t{f.chapter_type}\t{f.name}\t{' | '.join(f.values)}"
        for f in catalog.features
    ]
    return ("\n".join(lines) + "\n").encode("utf-8")


# -- native languages table -------------------------------------------------

def _read_rows(data: bytes | str):
    reader = csv.reader(io.StringIO(_text(data), newline=""))
    for row in reader:
        yield reader.line_num, row


def parse_languages(languages_bytes: bytes | str, catalog: FeatureCatalog) -> list[LanguageRecord]:
    rows = _read_rows(languages_bytes)
    try:
        _, header = next(rows)
    except StopIteration:
        raise WalsParseError("empty languages table", 1) from None
    header = [h.strip() for h in header]
    if tuple(header[: len(LANGUAGE_COLUMNS)]) != LANGUAGE_COLUMNS:
        raise WalsParseError(f"header must start with {', '.join(LANGUAGE_COLUMNS)}", 1)
    fids = header[len(LANGUAGE_COLUMNS):]
    for fid in fids:
        if fid not in catalog:
            raise WalsParseError(f"unknown feature id {fid!r} in header", 1)

    records = []
    seen = set()
    for lineno, row in rows:
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise WalsParseError(f"expected {len(header)} columns, got {len(row)}", lineno)
        wals_code, iso, name, genus, family, macro = (c.strip() for c in row[:6])
        if wals_code in seen:
            raise WalsParseError(f"duplicate language code {wals_code!r}", lineno)
        seen.add(wals_code)
        assignments = {}
        for fid, cell in zip(fids, row[6:]):
            cell = cell.strip()
            if not cell:
                continue
            try:
                assignments[fid] = catalog[fid].value_index(cell)
            except KeyError as e:
                raise WalsParseError(e.args[0], lineno) from None
        records.append(_record(wals_code, iso, name, family, genus, macro, assignments, lineno))
    return records


def _record(wals_code, iso, name, family, genus, macro, assignments, lineno):
    iso = iso or None
    if iso is not None and not _ISO3.match(iso):
        raise WalsParseError(f"malformed ISO 639-3 code {iso!r}", lineno)
    return LanguageRecord(wals_code, iso, name, family, genus, macro, assignments)


def parse_wals(catalog_bytes, languages_bytes) -> tuple[FeatureCatalog, list[LanguageRecord]]:
    """Parse a native catalog file and languages table."""
    catalog = parse_catalog(catalog_bytes)
    return catalog, parse_languages(languages_bytes, catalog)


def format_languages(records: Iterable[LanguageRecord], catalog: FeatureCatalog) -> bytes:
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(LANGUAGE_COLUMNS) + catalog.ids)
    for r in records:
        cells = [
            catalog[fid].values[r.assignments[fid]] if fid in r.assignments else ""
            for fid in catalog.ids
        ]
        w.writerow([r.wals_code, r.iso639_3 or "", r.name, r.genus, r.family, r.macro_area] + cells)
    return buf.getvalue().encode("utf-8")


# -- public WALS export -----------------------------------------------------

_EXPORT_CELL = re.compile(r"^(\d+)\s+(.*)$")


def _export_columns(header):
    lower = [h.strip().lower() for h in header]

    def col(*names):
        for n in names:
            if n in lower:
                return lower.index(n)
        raise WalsParseError(f"WALS export lacks a {names[0]!r} column", 1)

    meta = {
        "wals_code": col("wals_code", "wals code"),
        "iso_code": col("iso_code", "iso code", "iso639p3code"),
        "name": col("name"),
        "genus": col("genus"),
        "family": col("family"),
        "macroarea": col("macroarea", "macro_area"),
    }
    features = {}
    for i, h in enumerate(header):
        fid, _, fname = h.strip().partition(" ")
        if _FEATURE_ID.match(fid):
            features[i] = (fid, fname.strip())
    return meta, features


def catalog_from_export(data: bytes | str, chapter_types: Mapping[str, str] | None = None) -> FeatureCatalog:
    """Derive a catalog from a WALS ``language.csv`` export.

    Value order follows the export's own ``k`` numbering. ``chapter_types``
    maps chapter numbers (``"81"``) to chapter types; unmapped chapters
    become ``"Other"``.
    """
    rows = _read_rows(data)
    _, header = next(rows)
    _, fcols = _export_columns(header)
    values: dict[int, dict[int, str]] = {i: {} for i in fcols}
    for lineno, row in rows:
        for i in fcols:
            cell = row[i].strip() if i < len(row) else ""
            if not cell:
                continue
            m = _EXPORT_CELL.match(cell)
            if not m:
                raise WalsParseError(f"cell {cell!r} is not of the form '<k> <value>'", lineno)
            values[i].setdefault(int(m.group(1)), m.group(2).strip())
    chapter_types = chapter_types or {}
    features = []
    for i, (fid, fname) in fcols.items():
        if not values[i]:
            continue
        ordered = tuple(values[i][k] for k in sorted(values[i]))
        ch = chapter_of(fid)
        features.append(WalsFeature(fid, fname, ch, chapter_types.get(ch, "Other"), ordered))
    return FeatureCatalog(tuple(features))


def parse_wals_export(data: bytes | str, catalog: FeatureCatalog) -> list[LanguageRecord]:
    """Load language records from a WALS export, resolving cells by value name."""
    rows = _read_rows(data)
    _, header = next(rows)
    meta, fcols = _export_columns(header)
    records = []
    seen = set()
    for lineno, row in rows:
        if not row:
            continue
        get = lambda k: row[meta[k]].strip()  # noqa: E731
        code = get("wals_code")
        if code in seen:
            raise WalsParseError(f"duplicate language code {code!r}", lineno)
        seen.add(code)
        assignments = {}
        for i, (fid, _) in fcols.items():
            cell = row[i].strip() if i < len(row) else ""
            if not cell:
                continue
            if fid not in catalog:
                raise WalsParseError(f"unknown feature id {fid!r}", lineno)
            m = _EXPORT_CELL.match(cell)
            if not m:
                raise WalsParseError(f"cell {cell!r} is not of the form '<k> <value>'", lineno)
            try:
                assignments[fid] = catalog[fid].value_index(m.group(2).strip())
            except KeyError as e:
                raise WalsParseError(e.args[0], lineno) from None
        records.append(
            _record(code, get("iso_code"), get("name"), get("family"), get("genus"),
                    get("macroarea"), assignments, lineno)
        )
    return records


# -- pruning and label space ------------------------------------------------

def prune_languages(records: Iterable[LanguageRecord]) -> list[LanguageRecord]:
    """Drop languages without an ISO 639-3 code or without any attested feature."""
    return [r for r in records if r.iso639_3 is not None and r.assignments]


def records_by_iso(records: Iterable[LanguageRecord]) -> dict[str, LanguageRecord]:
    """Index records by ISO 639-3 code; the first record wins on a shared code."""
    out = {}
    for r in records:
        if r.iso639_3 is not None:
            out.setdefault(r.iso639_3, r)
    return out


def class_counts(records: Iterable[LanguageRecord]) -> Counter:
    """Count (feature, value) occurrences, one per record in the iterable.

    Pass one record per training example to count per example, or each
    distinct language once to count per language.
    """
    counts = Counter()
    for r in records:
        counts.update(r.assignments.items())
    return counts


@dataclass(frozen=True)
class LabelSpace:
    feature_ids: tuple[str, ...]
    classes: tuple[tuple[str, int], ...]
    feature_slice: Mapping[str, range]
    observed: np.ndarray
    class_of: Mapping[tuple[str, int], int] = field(repr=False)

    @property
    def C(self) -> int:
        return len(self.classes)

    @property
    def n_features(self) -> int:
        return len(self.feature_ids)

    def targets(self, record: LanguageRecord) -> np.ndarray:
        """Gold value index per feature (catalog order), ``-1`` where unattested."""
        out = np.full(len(self.feature_ids), -1, dtype=np.int64)
        for j, fid in enumerate(self.feature_ids):
            v = record.assignments.get(fid)
            if v is not None:
                out[j] = v
        return out

    @property
    def offsets(self) -> np.ndarray:
        return np.array([self.feature_slice[f].start for f in self.feature_ids], dtype=np.int64)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(self.feature_slice[f]) for f in self.feature_ids], dtype=np.int64)


def label_space_from_mask(catalog: FeatureCatalog, observed) -> LabelSpace:
    classes, slices, class_of = [], {}, {}
    for f in catalog.features:
        start = len(classes)
        for v in range(len(f.values)):
            class_of[(f.id, v)] = len(classes)
            classes.append((f.id, v))
        slices[f.id] = range(start, len(classes))
    observed = np.asarray(observed, dtype=bool).copy()
    if observed.shape != (len(classes),):
        raise ValueError(f"observed mask has shape {observed.shape}, expected ({len(classes)},)")
    observed.setflags(write=False)
    return LabelSpace(tuple(catalog.ids), tuple(classes), slices, observed, class_of)


def build_label_space(catalog: FeatureCatalog, observed_counts: Mapping[tuple[str, int], int]) -> LabelSpace:
    """Enumerate every (feature, value) class; a class is observed iff its count is positive.

    Features with no observed value keep their (fully masked) classes so that
    class indices do not depend on the training split.
    """
    C = sum(len(f.values) for f in catalog.features)
    space = label_space_from_mask(catalog, np.zeros(C, dtype=bool))
    observed = np.zeros(C, dtype=bool)
    for key, count in observed_counts.items():
        if key not in space.class_of:
            raise KeyError(f"count for unknown class {key!r}")
        observed[space.class_of[key]] = count > 0
    return label_space_from_mask(catalog, observed)

"""Decoding with abstention, confusion counting, and grouped metric reports.

Accounting conventions, stated in every text report:

* a prediction that names the wrong value is both a false positive and a
  false negative; an abstention on a gold-defined feature is a false
  negative; features the gold record leaves undefined are never scored;
* ``A = TP / (TP + FP + FN)``, with precision, recall and F1 as usual;
* counts are pooled (micro-averaged) within each group before rates are taken.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .losses import masked_softmax_probs
from .nn.layers import sigmoid
from .nn.model import FLAT
from .wals_schema import FeatureCatalog, LabelSpace, LanguageRecord

TAU = 0.5
GROUPINGS = ("chapter_type", "macro_area", "family", "feature", "overall")
RANKED = ("family", "feature")
REPORT_COLUMNS = ("group", "N", "TP", "FP", "FN", "A", "P", "R", "F1", "rank")
FOOTER = ("# A=TP/(TP+FP+FN); wrong value counts as FP and FN; abstention counts as FN; "
          "undefined gold features ignored; counts pooled per group")


def decode(logits, space: LabelSpace, mode: str = FLAT, tau: float = TAU) -> list[dict]:
    """Per example, ``{feature_id: (value_index, confidence)}`` for every emitted feature.

    The candidate is the best observed value of each feature (lowest index on
    ties); it is emitted only if its probability reaches ``tau``.
    """
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    probs = sigmoid(logits) if mode == FLAT else masked_softmax_probs(logits, space)
    out = [dict() for _ in range(logits.shape[0])]
    rows = np.arange(logits.shape[0])
    for fid in space.feature_ids:
        sl = space.feature_slice[fid]
        obs = space.observed[sl.start:sl.stop]
        if not obs.any():
            continue
        # rank on logits: sigmoid saturates to exact ties long before logits do
        z = np.where(obs, logits[:, sl.start:sl.stop], -np.inf)
        best = z.argmax(axis=1)
        conf = probs[rows, sl.start + best]
        for b in np.flatnonzero(conf >= tau):
            out[b][fid] = (int(best[b]), float(conf[b]))
    return out


@dataclass
class Counts:
    """Confusion counts per (example, feature); rows follow ``languages``."""

    feature_ids: tuple[str, ...]
    languages: tuple[str, ...]
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray

    def merge(self, other: "Counts") -> "Counts":
        if other.feature_ids != self.feature_ids:
            raise ValueError("cannot merge counts over different features")
        return Counts(self.feature_ids, self.languages + other.languages,
                      np.vstack([self.tp, other.tp]), np.vstack([self.fp, other.fp]),
                      np.vstack([self.fn, other.fn]))


def score(predictions: Sequence[Mapping], gold: Sequence[Mapping[str, int]],
          feature_ids: Sequence[str], languages: Sequence[str]) -> Counts:
    """Score predictions against gold ``{feature_id: value_index}`` assignments."""
    F = len(feature_ids)
    tp = np.zeros((len(gold), F), dtype=np.int64)
    fp = np.zeros_like(tp)
    fn = np.zeros_like(tp)
    for n, (pred, g) in enumerate(zip(predictions, gold)):
        for j, fid in enumerate(feature_ids):
            if fid not in g:
                continue
            p = pred.get(fid)
            if p is None:
                fn[n, j] = 1
            elif p[0] == g[fid]:
                tp[n, j] = 1
            else:
                fp[n, j] = fn[n, j] = 1
    return Counts(tuple(feature_ids), tuple(languages), tp, fp, fn)


@dataclass(frozen=True)
class MetricsRow:
    group: str
    N: int
    TP: int
    FP: int
    FN: int
    A: float
    P: float
    R: float
    F1: float
    rank: int | None = None


@dataclass(frozen=True)
class MetricsReport:
    grouping: str
    rows: tuple[MetricsRow, ...]

    def row(self, group: str) -> MetricsRow:
        for r in self.rows:
            if r.group == group:
                return r
        raise KeyError(group)


def _ratio(a, b):
    return a / b if b else 0.0


def metrics_row(group: str, tp: int, fp: int, fn: int, rank=None) -> MetricsRow:
    N = tp + fp + fn
    P, R = _ratio(tp, tp + fp), _ratio(tp, tp + fn)
    F1 = _ratio(2 * P * R, P + R)
    return MetricsRow(group, N, tp, fp, fn, _ratio(tp, N), P, R, F1, rank)


def aggregate(counts: Counts, grouping: str, catalog: FeatureCatalog | None = None,
              languages: Mapping[str, LanguageRecord] | None = None) -> MetricsReport:
    """Pool counts by group. ``languages`` maps the codes in ``counts.languages`` to records."""
    if grouping not in GROUPINGS:
        raise ValueError(f"unknown grouping {grouping!r}")
    if grouping in ("chapter_type", "macro_area", "family") and (catalog if grouping == "chapter_type" else languages) is None:
        raise ValueError(f"grouping {grouping!r} needs {'a catalog' if grouping == 'chapter_type' else 'language records'}")
    tp, fp, fn = counts.tp, counts.fp, counts.fn
    sums: dict[str, list[int]] = {}

    def add(key, t, p, n):
        acc = sums.setdefault(key, [0, 0, 0])
        acc[0] += int(t)
        acc[1] += int(p)
        acc[2] += int(n)

    if grouping == "overall":
        add("overall", tp.sum(), fp.sum(), fn.sum())
    elif grouping in ("feature", "chapter_type"):
        for j, fid in enumerate(counts.feature_ids):
            key = fid if grouping == "feature" else catalog[fid].chapter_type
            add(key, tp[:, j].sum(), fp[:, j].sum(), fn[:, j].sum())
    else:
        attr = "macro_area" if grouping == "macro_area" else "family"
        for n, code in enumerate(counts.languages):
            add(getattr(languages[code], attr), tp[n].sum(), fp[n].sum(), fn[n].sum())

    rows = [metrics_row(k, *v) for k, v in sums.items() if sum(v) > 0]
    if grouping in RANKED:
        rows.sort(key=lambda r: (-r.A, r.group))
        rows = [metrics_row(r.group, r.TP, r.FP, r.FN, rank=i) for i, r in enumerate(rows, 1)]
    else:
        rows.sort(key=lambda r: r.group)
    return MetricsReport(grouping, tuple(rows))


def _cells(r: MetricsRow) -> list[str]:
    return [r.group, str(r.N), str(r.TP), str(r.FP), str(r.FN), f"{r.A:.4f}", f"{r.P:.4f}",
            f"{r.R:.4f}", f"{r.F1:.4f}", "" if r.rank is None else str(r.rank)]


def render_report(report: MetricsReport, fmt: str = "text") -> bytes:
    rows = [_cells(r) for r in report.rows]
    buf = io.StringIO()
    if fmt == "delimited":
        for r in [list(REPORT_COLUMNS)] + rows:
            buf.write(",".join(c.replace(",", ";") for c in r) + "\n")
    elif fmt == "text":
        table = [list(REPORT_COLUMNS)] + rows
        widths = [max(len(r[i]) for r in table) for i in range(len(REPORT_COLUMNS))]
        for r in table:
            buf.write("  ".join(c.ljust(w) if i == 0 else c.rjust(w)
                                for i, (c, w) in enumerate(zip(r, widths))).rstrip() + "\n")
        if rows:
            buf.write(FOOTER + "\n")
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return buf.getvalue().encode("utf-8")


def accuracy(counts: Counts) -> float:
    return aggregate(counts, "overall").rows[0].A if counts.tp.size and (
        counts.tp.sum() + counts.fn.sum()) else 0.0

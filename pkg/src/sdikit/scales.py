"""Scoring, severity banding and label construction for Likert sub-scales."""
from __future__ import annotations

import csv
import enum
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class ValidationError(ValueError):
    """Malformed input data. ``row``/``column`` locate the offending cell when known."""

    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        super().__init__(f"{message} ({', '.join(loc)})" if loc else message)
        self.row = row
        self.column = column


class SeverityBand(enum.IntEnum):
    NORMAL = 0
    MILD = 1
    MODERATE = 2
    SEVERE = 3
    EXTREMELY_SEVERE = 4


@dataclass(frozen=True)
class ScaleSpec:
    name: str
    factor: str
    item_count: int
    cutoffs: tuple
    likert_min: int = 0
    likert_max: int = 3
    score_multiplier: int = 2

    def __post_init__(self):
        object.__setattr__(self, "cutoffs", tuple(int(c) for c in self.cutoffs))
        if self.item_count < 1:
            raise ValueError("item_count must be positive")
        if self.likert_min >= self.likert_max:
            raise ValueError("likert_min must be below likert_max")
        if self.score_multiplier < 1:
            raise ValueError("score_multiplier must be positive")
        c = self.cutoffs
        if len(c) != 4 or any(b <= a for a, b in zip(c, c[1:])):
            raise ValueError(f"cutoffs must be four strictly ascending integers, got {c}")
        if c[3] > self.max_score:
            raise ValueError(f"cutoff {c[3]} exceeds maximum score {self.max_score}")

    @property
    def levels(self) -> int:
        return self.likert_max - self.likert_min + 1

    @property
    def max_raw(self) -> int:
        return self.item_count * self.likert_max

    @property
    def max_score(self) -> int:
        return self.max_raw * self.score_multiplier

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "factor": self.factor,
            "item_count": self.item_count,
            "likert_min": self.likert_min,
            "likert_max": self.likert_max,
            "score_multiplier": self.score_multiplier,
            "cutoffs": list(self.cutoffs),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScaleSpec":
        known = {"name", "factor", "item_count", "likert_min", "likert_max",
                 "score_multiplier", "cutoffs"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown ScaleSpec fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ScaleSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


DASS21 = {
    "depression": ScaleSpec("DASS-21 depression", "depression", 7, (10, 14, 21, 28)),
    "anxiety": ScaleSpec("DASS-21 anxiety", "anxiety", 7, (8, 10, 15, 20)),
    "stress": ScaleSpec("DASS-21 stress", "stress", 7, (15, 19, 26, 34)),
}
FACTORS = ("depression", "anxiety", "stress")


@dataclass(frozen=True, eq=False)
class ResponseMatrix:
    subject_ids: tuple
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        ids = tuple(str(s) for s in self.subject_ids)
        values = np.array(self.values, dtype=np.int64)
        if values.ndim != 2:
            raise ValidationError(f"response values must be 2-D, got shape {values.shape}")
        if len(ids) != values.shape[0]:
            raise ValidationError(
                f"{len(ids)} subject ids for {values.shape[0]} response rows")
        if len(ids) < 1:
            raise ValidationError("response matrix needs at least one subject")
        seen = set()
        for i, s in enumerate(ids):
            if s in seen:
                raise ValidationError(f"duplicate subject_id {s!r}", row=i + 1)
            seen.add(s)
        values.setflags(write=False)
        object.__setattr__(self, "subject_ids", ids)
        object.__setattr__(self, "values", values)

    @property
    def n_subjects(self) -> int:
        return self.values.shape[0]

    @property
    def n_items(self) -> int:
        return self.values.shape[1]

    def subset(self, rows) -> "ResponseMatrix":
        rows = np.asarray(rows, dtype=np.intp)
        return ResponseMatrix(tuple(self.subject_ids[i] for i in rows), self.values[rows])

    def __eq__(self, other):
        if not isinstance(other, ResponseMatrix):
            return NotImplemented
        return (self.subject_ids == other.subject_ids
                and self.values.shape == other.values.shape
                and bool(np.all(self.values == other.values)))

    __hash__ = None


def check_conforms(r: ResponseMatrix, spec: ScaleSpec) -> None:
    if r.n_items != spec.item_count:
        raise ValidationError(
            f"response matrix has {r.n_items} items but scale {spec.name!r} "
            f"expects {spec.item_count}")
    bad = np.argwhere((r.values < spec.likert_min) | (r.values > spec.likert_max))
    if len(bad):
        i, j = bad[0]
        raise ValidationError(
            f"value {r.values[i, j]} outside [{spec.likert_min}, {spec.likert_max}]",
            row=int(i) + 1, column=f"item_{j + 1}")


def raw_totals(r: ResponseMatrix, spec: ScaleSpec) -> np.ndarray:
    check_conforms(r, spec)
    return r.values.sum(axis=1)


def total_scores(r: ResponseMatrix, spec: ScaleSpec) -> np.ndarray:
    """Multiplied sub-scale totals, one per subject."""
    return raw_totals(r, spec) * spec.score_multiplier


def band_of(score: int, spec: ScaleSpec) -> SeverityBand:
    if not 0 <= score <= spec.max_score:
        raise ValueError(f"score {score} outside [0, {spec.max_score}]")
    return SeverityBand(int(np.searchsorted(spec.cutoffs, score, side="right")))


def bands_of(scores, spec: ScaleSpec) -> np.ndarray:
    """Vectorized ``band_of``; returns an int array of band codes."""
    scores = np.asarray(scores)
    if scores.size and (scores.min() < 0 or scores.max() > spec.max_score):
        raise ValueError(f"scores outside [0, {spec.max_score}]")
    return np.searchsorted(spec.cutoffs, scores, side="right")


class Scheme(str, enum.Enum):
    BC = "BC"
    RBC = "RBC"
    CLUSTER2 = "Cluster2"
    CLUSTER3_BINARY = "Cluster3Binary"


@dataclass(frozen=True, eq=False)
class LabelSet:
    scheme: Scheme
    labels: np.ndarray
    retained: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        retained = np.asarray(self.retained, dtype=bool)
        if labels.shape != retained.shape:
            raise ValueError("labels and retained must have equal length")
        # Dropped subjects carry -1 so they cannot be mistaken for a class.
        labels = np.where(retained, labels, -1)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "retained", retained)

    def __len__(self):
        return len(self.labels)


def binarize(bands, scheme) -> LabelSet:
    bands = np.asarray(bands, dtype=np.int64)
    scheme = Scheme(scheme)
    if scheme is Scheme.BC:
        return LabelSet(scheme, (bands != SeverityBand.NORMAL).astype(int),
                        np.ones(len(bands), dtype=bool))
    if scheme is Scheme.RBC:
        return LabelSet(scheme, (bands >= SeverityBand.MODERATE).astype(int),
                        bands != SeverityBand.MILD)
    raise ValueError(f"binarize handles BC and RBC only, got {scheme.value}")


HEADER_PREFIX = "item_"


def _parse_csv(text: str, spec: ScaleSpec) -> ResponseMatrix:
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise ValidationError("empty file: missing header") from None
    expected = ["subject_id"] + [f"{HEADER_PREFIX}{i + 1}" for i in range(spec.item_count)]
    if [h.strip() for h in header] != expected:
        missing = [c for c in expected if c not in header]
        detail = f"missing column(s) {missing}" if missing else "columns out of order"
        raise ValidationError(f"bad header {header}: {detail}; expected {expected}", row=0)
    ids, rows, seen = [], [], {}
    for rownum, rec in enumerate(reader, start=1):
        if len(rec) != len(expected):
            raise ValidationError(f"expected {len(expected)} fields, got {len(rec)}", row=rownum)
        sid = rec[0].strip()
        if sid in seen:
            raise ValidationError(f"duplicate subject_id {sid!r} (first at row {seen[sid]})",
                                  row=rownum, column="subject_id")
        seen[sid] = rownum
        row = []
        for col, cell in zip(expected[1:], rec[1:]):
            cell = cell.strip()
            # int() accepts unicode digits and underscores; restrict to ASCII decimal.
            if not (cell.isascii() and cell.lstrip("+-").isdigit()):
                raise ValidationError(f"non-integer cell {cell!r}", row=rownum, column=col)
            v = int(cell)
            if not spec.likert_min <= v <= spec.likert_max:
                raise ValidationError(
                    f"value {v} outside [{spec.likert_min}, {spec.likert_max}]",
                    row=rownum, column=col)
            row.append(v)
        ids.append(sid)
        rows.append(row)
    if not rows:
        raise ValidationError("no data rows")
    return ResponseMatrix(tuple(ids), np.array(rows, dtype=np.int64))


def load_responses(path, spec: ScaleSpec) -> ResponseMatrix:
    """Read a ``subject_id,item_1..item_m`` CSV. Lines starting with ``#`` are skipped."""
    with open(path, encoding="utf-8", newline="") as fh:
        return _parse_csv(fh.read(), spec)


def format_responses(r: ResponseMatrix, comment: str | None = None) -> str:
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["subject_id"] + [f"{HEADER_PREFIX}{i + 1}" for i in range(r.n_items)])
    for sid, row in zip(r.subject_ids, r.values.tolist()):
        w.writerow([sid, *row])
    return buf.getvalue()


def save_responses(r: ResponseMatrix, path, comment: str | None = None) -> None:
    Path(path).write_text(format_responses(r, comment), encoding="utf-8")

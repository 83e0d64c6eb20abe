"""Domain types, unit-norm embedding math, cross-modal scoring and dataset I/O."""
import csv
import json
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from . import kernels
from .errors import DimensionError, EmptyInputError, NormalizationError, ParseError

UNIT_TOL = 1e-6
BINARY_MAGIC = b"XMV1"
CSV_FIXED_COLUMNS = ("subject_id", "modality", "gender", "age_doc", "age_selfie",
                     "card_format", "dim")


class Modality(str, Enum):
    DOCUMENT = "document"
    SELFIE = "selfie"


class Gender(str, Enum):
    MALE = "male"
    FEMALE = "female"
    UNKNOWN = "unknown"


class CardFormat(str, Enum):
    YELLOW = "yellow"
    BLUE = "blue"
    NOT_APPLICABLE = "na"


@dataclass(frozen=True)
class ImageRecord:
    subject_id: str
    modality: Modality
    gender: Gender
    age_at_capture: int
    card_format: CardFormat
    base_feature: np.ndarray

    def __post_init__(self):
        feat = np.asarray(self.base_feature, dtype=np.float64)
        if feat.ndim != 1 or not np.all(np.isfinite(feat)):
            raise ValueError("base_feature must be a finite 1-d vector")
        feat.setflags(write=False)
        object.__setattr__(self, "base_feature", feat)
        is_selfie = Modality(self.modality) is Modality.SELFIE
        if is_selfie != (CardFormat(self.card_format) is CardFormat.NOT_APPLICABLE):
            raise ValueError("card_format must be 'na' exactly for selfie records")


@dataclass(frozen=True)
class SubsetLabel:
    name: str
    doc_age: int
    selfie_age_range: tuple


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


class PairedDataset:
    """Subjects that each own exactly one document and one selfie feature.

    Row ``i`` of ``doc`` and ``selfie`` belongs to ``subject_ids[i]``. All
    arrays are read-only; ``card_format`` describes the document image.
    """

    def __init__(self, subject_ids, doc, selfie, gender, age_doc, age_selfie,
                 card_format):
        self.subject_ids = tuple(str(s) for s in subject_ids)
        self.doc = _frozen(doc, np.float64)
        self.selfie = _frozen(selfie, np.float64)
        n = len(self.subject_ids)
        if self.doc.ndim != 2 or self.doc.shape != self.selfie.shape or self.doc.shape[0] != n:
            raise DimensionError("doc/selfie must both be (n_subjects, d_in)")
        if len(set(self.subject_ids)) != n:
            raise ValueError("subject_ids must be unique")
        if not (np.all(np.isfinite(self.doc)) and np.all(np.isfinite(self.selfie))):
            raise ValueError("features must be finite")
        self.gender = tuple(Gender(g) for g in gender)
        self.card_format = tuple(CardFormat(c) for c in card_format)
        if any(c is CardFormat.NOT_APPLICABLE for c in self.card_format):
            raise ValueError("document card_format cannot be 'na'")
        self.age_doc = _frozen(age_doc, np.int64)
        self.age_selfie = _frozen(age_selfie, np.int64)
        for name in ("gender", "card_format", "age_doc", "age_selfie"):
            if len(getattr(self, name)) != n:
                raise DimensionError(f"{name} has wrong length")
        self._index = {s: i for i, s in enumerate(self.subject_ids)}

    @property
    def n_subjects(self):
        return len(self.subject_ids)

    @property
    def d_in(self):
        return self.doc.shape[1]

    def __len__(self):
        return self.n_subjects

    def __contains__(self, subject_id):
        return subject_id in self._index

    def index_of(self, subject_id):
        return self._index[subject_id]

    def take(self, indices):
        """New dataset restricted to ``indices`` (in the given order)."""
        idx = np.asarray(indices, dtype=np.int64)
        return PairedDataset(
            [self.subject_ids[i] for i in idx], self.doc[idx], self.selfie[idx],
            [self.gender[i] for i in idx], self.age_doc[idx], self.age_selfie[idx],
            [self.card_format[i] for i in idx])

    def records(self):
        for i, sid in enumerate(self.subject_ids):
            yield ImageRecord(sid, Modality.DOCUMENT, self.gender[i], int(self.age_doc[i]),
                              self.card_format[i], self.doc[i])
            yield ImageRecord(sid, Modality.SELFIE, self.gender[i], int(self.age_selfie[i]),
                              CardFormat.NOT_APPLICABLE, self.selfie[i])

    @classmethod
    def from_records(cls, records):
        """Group records by subject; each subject needs one per modality."""
        by_subject = {}
        for rec in records:
            slot = by_subject.setdefault(rec.subject_id, {})
            if rec.modality in slot:
                raise ValueError(f"duplicate {rec.modality.value} for {rec.subject_id}")
            slot[rec.modality] = rec
        ids, doc, selfie, gender, age_doc, age_selfie, card = [], [], [], [], [], [], []
        for sid, slot in by_subject.items():
            if len(slot) != 2:
                raise ValueError(f"subject {sid} needs one document and one selfie")
            d, s = slot[Modality.DOCUMENT], slot[Modality.SELFIE]
            ids.append(sid)
            doc.append(d.base_feature)
            selfie.append(s.base_feature)
            gender.append(d.gender)
            age_doc.append(d.age_at_capture)
            age_selfie.append(s.age_at_capture)
            card.append(d.card_format)
        if not ids:
            raise EmptyInputError("no records")
        return cls(ids, doc, selfie, gender, age_doc, age_selfie, card)

    def __eq__(self, other):
        if not isinstance(other, PairedDataset):
            return NotImplemented
        return (self.subject_ids == other.subject_ids and self.gender == other.gender
                and self.card_format == other.card_format
                and np.array_equal(self.age_doc, other.age_doc)
                and np.array_equal(self.age_selfie, other.age_selfie)
                and np.array_equal(self.doc, other.doc)
                and np.array_equal(self.selfie, other.selfie))

    __hash__ = None

    def __repr__(self):
        return f"PairedDataset(n_subjects={self.n_subjects}, d_in={self.d_in})"


# --------------------------------------------------------------------------
# embedding math

def l2_normalize(v):
    """Scale ``v`` to unit Euclidean length."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise DimensionError("expected a non-empty 1-d vector")
    if not np.all(np.isfinite(v)):
        raise NormalizationError("vector has non-finite entries")
    scale = np.max(np.abs(v))
    if scale == 0.0:
        raise NormalizationError("cannot normalize a zero vector")
    # pre-scale so tiny vectors do not underflow when squared
    v = v / scale
    return v / np.linalg.norm(v)


def l2_normalize_rows(x):
    """Row-wise version of :func:`l2_normalize` for an (n, d) array."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NormalizationError("matrix has non-finite entries")
    scale = np.max(np.abs(x), axis=1, keepdims=True) if x.size else np.ones((len(x), 1))
    if np.any(scale == 0.0):
        raise NormalizationError("cannot normalize a zero row")
    x = x / scale
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def check_vector_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def cosine_similarity(a, b):
    a, b = check_vector_pair(a, b)
    return float(min(1.0, max(-1.0, np.dot(a, b))))


def squared_distance(a, b):
    a, b = check_vector_pair(a, b)
    diff = a - b
    return float(np.dot(diff, diff))


def _as_matrix(vectors, name):
    m = np.asarray(vectors, dtype=np.float64)
    if m.size == 0:
        raise EmptyInputError(f"no {name} embeddings")
    if m.ndim != 2:
        raise DimensionError(f"{name} must be a list of equal-length vectors")
    return m


def cross_modal_scores(docs, selfies):
    """Cosine score matrix with ``M[i, j] = cos(selfies[i], docs[j])``.

    Only selfie-vs-document pairs are produced. Both inputs must already be
    unit length. The result does not depend on the number of worker threads.
    """
    d = _as_matrix(docs, "document")
    s = _as_matrix(selfies, "selfie")
    if d.shape[1] != s.shape[1]:
        raise DimensionError(f"dimension mismatch: {s.shape[1]} vs {d.shape[1]}")
    return kernels.cosine_matrix(s, d)


# --------------------------------------------------------------------------
# dataset I/O

def _parse_int(text, what, row):
    try:
        return int(text)
    except ValueError:
        raise ParseError(f"bad {what} {text!r}", row) from None


def _parse_enum(enum, text, what, row):
    try:
        return enum(text)
    except ValueError:
        raise ParseError(f"bad {what} {text!r}", row) from None


def load_dataset(path):
    """Read a dataset from the embeddings CSV or the ``XMV1`` binary format."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == BINARY_MAGIC:
        return _load_binary(path)
    return _load_csv(path)


def _load_csv(path):
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError("no records")
        if tuple(header[:7]) != CSV_FIXED_COLUMNS:
            raise ParseError("unexpected header", 1)
        n_feat_cols = len(header) - 7
        if header[7:] != [f"f{k}" for k in range(n_feat_cols)]:
            raise ParseError("feature columns must be f0..f{dim-1}", 1)
        dim = None
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < 7:
                raise ParseError("too few fields", row_no)
            row_dim = _parse_int(row[6], "dim", row_no)
            if dim is None:
                dim = row_dim
            if row_dim != dim or row_dim != n_feat_cols:
                raise ParseError(f"inconsistent dimension {row_dim}", row_no)
            if len(row) != 7 + row_dim:
                raise ParseError(f"expected {7 + row_dim} fields, got {len(row)}", row_no)
            try:
                feat = np.array(row[7:], dtype=np.float64)
            except ValueError:
                raise ParseError("non-numeric feature value", row_no) from None
            rows.append((row_no, row[0], row[1], row[2], row[3], row[4], row[5], feat))
    if not rows:
        raise ParseError("no records")
    return _assemble(rows)


def _assemble(rows):
    """Turn parsed rows into a dataset, raising ParseError on the first bad row."""
    grouped = {}
    for row_no, sid, modality, gender, age_doc, age_selfie, card, feat in rows:
        if not sid:
            raise ParseError("empty subject_id", row_no)
        mod = _parse_enum(Modality, modality, "modality", row_no)
        gen = _parse_enum(Gender, gender, "gender", row_no)
        cf = _parse_enum(CardFormat, card, "card_format", row_no)
        ad = _parse_int(age_doc, "age_doc", row_no)
        as_ = _parse_int(age_selfie, "age_selfie", row_no)
        if (mod is Modality.SELFIE) != (cf is CardFormat.NOT_APPLICABLE):
            raise ParseError("card_format must be 'na' exactly for selfie rows", row_no)
        if not np.all(np.isfinite(feat)):
            raise ParseError("non-finite feature value", row_no)
        slot = grouped.setdefault(sid, {})
        if mod in slot:
            raise ParseError(f"duplicate {mod.value} record for subject {sid!r}", row_no)
        if slot:
            first = next(iter(slot.values()))
            if (first[1], first[2], first[3]) != (gen, ad, as_):
                raise ParseError(f"metadata disagrees with earlier row for {sid!r}", row_no)
        slot[mod] = (row_no, gen, ad, as_, cf, feat)
    ids, doc, selfie, gender, age_doc, age_selfie, card = [], [], [], [], [], [], []
    for sid, slot in grouped.items():
        if len(slot) != 2:
            first_row = next(iter(slot.values()))[0]
            raise ParseError(f"subject {sid!r} has {len(slot)} record(s), expected 2", first_row)
        d, s = slot[Modality.DOCUMENT], slot[Modality.SELFIE]
        ids.append(sid)
        doc.append(d[5])
        selfie.append(s[5])
        gender.append(d[1])
        age_doc.append(d[2])
        age_selfie.append(d[3])
        card.append(d[4])
    return PairedDataset(ids, np.vstack(doc), np.vstack(selfie), gender, age_doc,
                         age_selfie, card)


def _row_meta(ds):
    for i, sid in enumerate(ds.subject_ids):
        common = (ds.gender[i].value, int(ds.age_doc[i]), int(ds.age_selfie[i]))
        yield (sid, Modality.DOCUMENT.value) + common + (ds.card_format[i].value,), ds.doc[i]
        yield (sid, Modality.SELFIE.value) + common + (CardFormat.NOT_APPLICABLE.value,), ds.selfie[i]


def write_dataset(ds, path, fmt="csv"):
    """Write ``ds`` as embeddings CSV (``fmt="csv"``) or ``XMV1`` binary."""
    if fmt == "binary":
        return _write_binary(ds, path)
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    dim = ds.d_in
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(CSV_FIXED_COLUMNS + tuple(f"f{k}" for k in range(dim))) + "\n")
        for meta, feat in _row_meta(ds):
            fields = [str(m) for m in meta] + [str(dim)]
            fields.extend(f"{x:.9g}" for x in feat.tolist())
            fh.write(",".join(fields) + "\n")


# XMV1 layout, little-endian:
#   b"XMV1" | u32 count | u32 dim | u32 meta_len | meta JSON (utf-8) | f32[count*dim]
# meta JSON is a list of [subject_id, modality, gender, age_doc, age_selfie, card_format]
# in record order, matching the CSV row order.

def _write_binary(ds, path):
    metas, feats = [], []
    for meta, feat in _row_meta(ds):
        metas.append(list(meta))
        feats.append(feat)
    meta_bytes = json.dumps(metas, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(struct.pack("<III", len(metas), ds.d_in, len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(np.asarray(feats, dtype="<f4").tobytes())


def _load_binary(path):
    data = Path(path).read_bytes()
    if len(data) < 16:
        raise ParseError("truncated XMV1 header")
    count, dim, meta_len = struct.unpack_from("<III", data, 4)
    if count == 0:
        raise ParseError("no records")
    start = 16 + meta_len
    if len(data) != start + 4 * count * dim:
        raise ParseError("XMV1 payload size does not match header")
    try:
        metas = json.loads(data[16:start].decode("utf-8"))
    except ValueError as exc:
        raise ParseError(f"bad XMV1 metadata: {exc}") from None
    if len(metas) != count:
        raise ParseError("XMV1 metadata count does not match header")
    feats = np.frombuffer(data, dtype="<f4", offset=start).reshape(count, dim).astype(np.float64)
    rows = []
    for k, (meta, feat) in enumerate(zip(metas, feats)):
        if len(meta) != 6:
            raise ParseError("metadata entry needs 6 fields", k + 1)
        rows.append((k + 1, str(meta[0]), meta[1], meta[2], str(meta[3]), str(meta[4]),
                     meta[5], feat))
    return _assemble(rows)

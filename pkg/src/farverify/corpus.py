"""Core data model and file formats.

Embeddings, utterance metadata, trial pairs and score records, together
with the plain-text formats used to exchange them:

* embedding file: one ``utt_id v1 v2 ... vd`` line per utterance;
* manifest: CSV with header
  ``utt_id,speaker_id,gender,channel,distance,visit,text_id,domain``;
* trial list: ``enroll_id test_id [target|nontarget] [tag,tag,...]``;
* score list: ``enroll_id test_id score``.

All types are immutable after construction and safe to share across
threads. Files are UTF-8; LF and CRLF are both accepted on input and
LF is written on output. Reals are serialized with ``repr`` so a
write/parse round trip is exact.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Mapping, NamedTuple, Sequence, TextIO, Union

import numpy as np

from .errors import (
    ArityError,
    BadEnumValue,
    BadHeader,
    BadLabel,
    DimensionMismatch,
    DuplicateId,
    EmptyInput,
    NonFiniteScore,
    NonFiniteValue,
    UnknownId,
    ZeroVector,
)

TARGET = "target"
NONTARGET = "nontarget"

TextSource = Union[str, TextIO, Iterable[str]]


class Gender(Enum):
    MALE = "male"
    FEMALE = "female"


class Channel(Enum):
    CLOSE_TALK = "close_talk"
    TABLET = "tablet"
    TELEPHONE = "telephone"


class Distance(Enum):
    NEG1_5M = "-1.5M"
    M1 = "1M"
    M3 = "3M"
    M5 = "5M"
    NA = "NA"


class Domain(Enum):
    CLOSE = "close"
    FAR = "far"


def _parse_enum(enum_cls, raw: str, where: str):
    lowered = raw.strip().lower()
    for member in enum_cls:
        if member.value.lower() == lowered:
            return member
    allowed = ", ".join(m.value for m in enum_cls)
    raise BadEnumValue(f"{where}: {raw!r} is not one of [{allowed}]")


def _lines(source: TextSource) -> Iterator[str]:
    """Iterate text lines from a string, an open file, or a line iterable."""
    if isinstance(source, str):
        return iter(source.splitlines())
    return iter(source)


def _fmt(x: float) -> str:
    return repr(float(x))


# --------------------------------------------------------------------------
# embeddings
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Embedding:
    """One utterance's speaker embedding."""

    utt_id: str
    vector: np.ndarray

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=np.float64)
        if vec.ndim != 1 or vec.size < 1:
            raise DimensionMismatch(f"{self.utt_id}: embedding must be a 1-d vector")
        if not np.all(np.isfinite(vec)):
            raise NonFiniteValue(f"{self.utt_id}: embedding has NaN/Inf coordinates")
        vec = vec.copy()
        vec.flags.writeable = False
        object.__setattr__(self, "vector", vec)

    @property
    def dim(self) -> int:
        return self.vector.shape[0]


class EmbeddingSet:
    """Ordered, immutable collection of same-dimension embeddings.

    Stores a contiguous (N, d) float64 matrix plus an id -> row index,
    which keeps batch scoring and clustering fast.
    """

    def __init__(self, ids: Sequence[str], matrix: np.ndarray):
        ids = tuple(str(u) for u in ids)
        mat = np.array(matrix, dtype=np.float64, copy=True)
        if len(ids) == 0:
            raise EmptyInput("embedding set is empty")
        if mat.ndim != 2 or mat.shape[0] != len(ids):
            raise DimensionMismatch(
                f"matrix shape {mat.shape} does not match {len(ids)} ids"
            )
        if mat.shape[1] < 1:
            raise DimensionMismatch("embedding dimension must be >= 1")
        if not np.all(np.isfinite(mat)):
            raise NonFiniteValue("embedding matrix has NaN/Inf entries")
        index: dict[str, int] = {}
        for i, utt in enumerate(ids):
            if utt in index:
                raise DuplicateId(f"duplicate utt_id {utt!r}")
            index[utt] = i
        mat.flags.writeable = False
        self._ids = ids
        self._matrix = mat
        self._index = index
        self._unit: np.ndarray | None = None

    @classmethod
    def from_items(cls, items: Iterable[tuple[str, Sequence[float]]]) -> "EmbeddingSet":
        pairs = list(items)
        if not pairs:
            raise EmptyInput("embedding set is empty")
        dims = {len(v) for _, v in pairs}
        if len(dims) != 1:
            raise DimensionMismatch(f"mixed embedding dimensions {sorted(dims)}")
        return cls([u for u, _ in pairs], np.array([v for _, v in pairs], dtype=np.float64))

    @property
    def ids(self) -> tuple[str, ...]:
        return self._ids

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix

    @property
    def dim(self) -> int:
        return self._matrix.shape[1]

    def __len__(self) -> int:
        return self._matrix.shape[0]

    def __contains__(self, utt_id: str) -> bool:
        return utt_id in self._index

    def index_of(self, utt_id: str) -> int:
        try:
            return self._index[utt_id]
        except KeyError:
            raise UnknownId(f"unknown utt_id {utt_id!r}") from None

    def vector(self, utt_id: str) -> np.ndarray:
        return self._matrix[self.index_of(utt_id)]

    def items(self) -> Iterator[Embedding]:
        for utt, row in zip(self._ids, self._matrix):
            yield Embedding(utt, row)

    def mean_vector(self) -> np.ndarray:
        return self._matrix.mean(axis=0)

    def unit_matrix(self) -> np.ndarray:
        """Row-normalized matrix, cached. Raises ZeroVector on a zero row."""
        if self._unit is None:
            norms = np.linalg.norm(self._matrix, axis=1)
            zero = np.flatnonzero(norms == 0.0)
            if zero.size:
                raise ZeroVector(f"zero-norm embedding {self._ids[zero[0]]!r}")
            unit = self._matrix / norms[:, None]
            unit.flags.writeable = False
            self._unit = unit
        return self._unit


def parse_embeddings(source: TextSource) -> EmbeddingSet:
    """Parse a whitespace-separated embedding file.

    Every non-empty line is ``utt_id v1 ... vd``; all lines must share d.
    """
    ids: list[str] = []
    rows: list[np.ndarray] = []
    dim: int | None = None
    seen: set[str] = set()
    for lineno, raw in enumerate(_lines(source), 1):
        line = raw.strip()
        if not line:
            continue
        tokens = line.split()
        if len(tokens) < 2:
            raise DimensionMismatch(f"line {lineno}: expected `utt_id v1 ... vd`")
        utt, values = tokens[0], tokens[1:]
        if dim is None:
            dim = len(values)
        elif len(values) != dim:
            raise DimensionMismatch(
                f"line {lineno}: got {len(values)} coordinates, expected {dim}"
            )
        if utt in seen:
            raise DuplicateId(f"line {lineno}: duplicate utt_id {utt!r}")
        seen.add(utt)
        try:
            vec = np.array([float(v) for v in values], dtype=np.float64)
        except ValueError as exc:
            raise NonFiniteValue(f"line {lineno}: {exc}") from None
        if not np.all(np.isfinite(vec)):
            raise NonFiniteValue(f"line {lineno}: non-finite coordinate")
        ids.append(utt)
        rows.append(vec)
    if not ids:
        raise EmptyInput("no embedding lines found")
    return EmbeddingSet(ids, np.vstack(rows))


def format_embeddings(embeddings: EmbeddingSet) -> str:
    out = []
    for utt, row in zip(embeddings.ids, embeddings.matrix):
        out.append(utt + " " + " ".join(_fmt(v) for v in row))
    return "\n".join(out) + "\n"


def load_embeddings(path) -> EmbeddingSet:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_embeddings(fh)


def save_embeddings(embeddings: EmbeddingSet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_embeddings(embeddings))


# --------------------------------------------------------------------------
# utterance metadata
# --------------------------------------------------------------------------

MANIFEST_COLUMNS = (
    "utt_id",
    "speaker_id",
    "gender",
    "channel",
    "distance",
    "visit",
    "text_id",
    "domain",
)


@dataclass(frozen=True)
class UtteranceMeta:
    """Recording-condition attributes of one utterance.

    ``speaker_id`` may be empty in semi-supervised settings. A distance
    of NA is only allowed for close-domain recordings.
    """

    utt_id: str
    speaker_id: str
    gender: Gender
    channel: Channel
    distance: Distance
    visit: int
    text_id: str
    domain: Domain

    def __post_init__(self):
        if self.visit not in (0, 1, 2):
            raise BadEnumValue(f"{self.utt_id}: visit must be 0, 1 or 2, got {self.visit}")
        if self.distance is Distance.NA and self.domain is not Domain.CLOSE:
            raise BadEnumValue(
                f"{self.utt_id}: distance NA is only permitted for close-domain utterances"
            )


class Manifest:
    """Immutable collection of UtteranceMeta keyed by utt_id."""

    def __init__(self, entries: Iterable[UtteranceMeta]):
        table: dict[str, UtteranceMeta] = {}
        for meta in entries:
            if meta.utt_id in table:
                raise DuplicateId(f"duplicate utt_id {meta.utt_id!r}")
            table[meta.utt_id] = meta
        self._table = table

    def __len__(self) -> int:
        return len(self._table)

    def __contains__(self, utt_id: str) -> bool:
        return utt_id in self._table

    def __iter__(self) -> Iterator[str]:
        return iter(self._table)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(self._table)

    def meta(self, utt_id: str) -> UtteranceMeta:
        try:
            return self._table[utt_id]
        except KeyError:
            raise UnknownId(f"unknown utt_id {utt_id!r}") from None

    def values(self) -> Iterator[UtteranceMeta]:
        return iter(self._table.values())


def parse_manifest(source: TextSource) -> Manifest:
    """Parse a manifest CSV. Unknown extra columns are ignored."""
    if isinstance(source, str):
        source = io.StringIO(source)
    reader = csv.reader(source)
    try:
        header = next(reader)
    except StopIteration:
        raise EmptyInput("manifest is empty") from None
    header = [h.strip() for h in header]
    if tuple(header[: len(MANIFEST_COLUMNS)]) != MANIFEST_COLUMNS:
        raise BadHeader(
            "manifest header must start with " + ",".join(MANIFEST_COLUMNS)
        )
    entries = []
    for lineno, row in enumerate(reader, 2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < len(MANIFEST_COLUMNS):
            raise ArityError(f"line {lineno}: expected {len(MANIFEST_COLUMNS)} columns")
        utt, spk, gender, channel, distance, visit, text, domain = (
            c.strip() for c in row[: len(MANIFEST_COLUMNS)]
        )
        try:
            visit_n = int(visit)
        except ValueError:
            raise BadEnumValue(f"line {lineno}: visit {visit!r} is not an integer") from None
        try:
            entries.append(
                UtteranceMeta(
                    utt_id=utt,
                    speaker_id=spk,
                    gender=_parse_enum(Gender, gender, "gender"),
                    channel=_parse_enum(Channel, channel, "channel"),
                    distance=_parse_enum(Distance, distance, "distance"),
                    visit=visit_n,
                    text_id=text,
                    domain=_parse_enum(Domain, domain, "domain"),
                )
            )
        except BadEnumValue as exc:
            raise BadEnumValue(f"line {lineno}: {exc}") from None
    if not entries:
        raise EmptyInput("manifest has no data rows")
    return Manifest(entries)


def format_manifest(manifest: Manifest) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_COLUMNS)
    for meta in manifest.values():
        writer.writerow(
            [
                meta.utt_id,
                meta.speaker_id,
                meta.gender.value,
                meta.channel.value,
                meta.distance.value,
                meta.visit,
                meta.text_id,
                meta.domain.value,
            ]
        )
    return buf.getvalue()


def load_manifest(path) -> Manifest:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return parse_manifest(fh)


def save_manifest(manifest: Manifest, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_manifest(manifest))


# --------------------------------------------------------------------------
# trials and scores
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TrialPair:
    """Enrollment/test pair with optional ground-truth label and tags."""

    enroll_id: str
    test_id: str
    label: str | None = None
    tags: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        if self.label is not None and self.label not in (TARGET, NONTARGET):
            raise BadLabel(f"label must be 'target' or 'nontarget', got {self.label!r}")
        object.__setattr__(self, "tags", frozenset(self.tags))


class ScoreRecord(NamedTuple):
    """Scored pair; higher score means more likely same speaker."""

    enroll_id: str
    test_id: str
    score: float


def parse_trials(source: TextSource) -> list[TrialPair]:
    """Parse ``enroll test [label] [tag,tag,...]`` lines."""
    pairs: list[TrialPair] = []
    for lineno, raw in enumerate(_lines(source), 1):
        line = raw.strip()
        if not line:
            continue
        tokens = line.split()
        if len(tokens) < 2 or len(tokens) > 4:
            raise ArityError(f"line {lineno}: expected 2-4 fields, got {len(tokens)}")
        label = None
        tags: frozenset[str] = frozenset()
        if len(tokens) >= 3:
            if tokens[2] not in (TARGET, NONTARGET):
                raise BadLabel(f"line {lineno}: bad label {tokens[2]!r}")
            label = tokens[2]
        if len(tokens) == 4:
            tags = frozenset(t for t in tokens[3].split(",") if t)
        pairs.append(TrialPair(tokens[0], tokens[1], label, tags))
    return pairs


def format_trials(pairs: Sequence[TrialPair], include_tags: bool = True) -> str:
    out = []
    for p in pairs:
        cols = [p.enroll_id, p.test_id]
        if p.label is not None:
            cols.append(p.label)
            if include_tags and p.tags:
                cols.append(",".join(sorted(p.tags)))
        out.append(" ".join(cols))
    return "\n".join(out) + ("\n" if out else "")


def parse_scores(source: TextSource) -> list[ScoreRecord]:
    """Parse ``enroll test score`` lines; scores must be finite."""
    records: list[ScoreRecord] = []
    for lineno, raw in enumerate(_lines(source), 1):
        line = raw.strip()
        if not line:
            continue
        tokens = line.split()
        if len(tokens) != 3:
            raise ArityError(f"line {lineno}: expected 3 fields, got {len(tokens)}")
        try:
            score = float(tokens[2])
        except ValueError:
            raise NonFiniteScore(f"line {lineno}: {tokens[2]!r} is not a number") from None
        if not math.isfinite(score):
            raise NonFiniteScore(f"line {lineno}: score {tokens[2]!r} is not finite")
        records.append(ScoreRecord(tokens[0], tokens[1], score))
    return records


def format_scores(records: Sequence[ScoreRecord]) -> str:
    out = [f"{r.enroll_id} {r.test_id} {_fmt(r.score)}" for r in records]
    return "\n".join(out) + ("\n" if out else "")


def load_trials(path) -> list[TrialPair]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_trials(fh)


def save_trials(pairs: Sequence[TrialPair], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_trials(pairs))


def load_scores(path) -> list[ScoreRecord]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_scores(fh)


def save_scores(records: Sequence[ScoreRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_scores(records))


# --------------------------------------------------------------------------
# condition tags
# --------------------------------------------------------------------------

TAG_TD = "TD"
TAG_TI = "TI"
TAG_CROSS_GENDER = "cross_gender"
TAG_CROSS_CHANNEL = "cross_channel"
TAG_CROSS_DOMAIN = "cross_domain"


def visit_gap_tag(gap: int) -> str:
    return f"visit_gap_{gap}"


def distance_tag(distance: Distance) -> str:
    return f"dist_{distance.value}"


def derive_tags(enroll: UtteranceMeta, test: UtteranceMeta) -> frozenset[str]:
    """Condition tags of a trial, recomputed from the two metadata rows.

    Text-dependence compares text ids, visit gap is the absolute visit
    difference, and the distance stratum is taken from the test side.
    """
    tags = {
        TAG_TD if enroll.text_id == test.text_id else TAG_TI,
        visit_gap_tag(abs(enroll.visit - test.visit)),
        distance_tag(test.distance),
    }
    if enroll.gender is not test.gender:
        tags.add(TAG_CROSS_GENDER)
    if enroll.channel is not test.channel:
        tags.add(TAG_CROSS_CHANNEL)
    if enroll.domain is not test.domain:
        tags.add(TAG_CROSS_DOMAIN)
    return frozenset(tags)


# --------------------------------------------------------------------------
# elementary vector operations
# --------------------------------------------------------------------------

def _as_vector(x) -> np.ndarray:
    if isinstance(x, Embedding):
        return x.vector
    return np.asarray(x, dtype=np.float64)


def l2_normalize(x):
    """Scale a vector to unit L2 norm. Accepts arrays or Embeddings."""
    if isinstance(x, Embedding):
        return Embedding(x.utt_id, l2_normalize(x.vector))
    vec = _as_vector(x)
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise ZeroVector("cannot normalize a zero vector")
    return vec / norm


def cosine(a, b) -> float:
    """Cosine similarity, clamped to [-1, 1] against rounding."""
    va, vb = _as_vector(a), _as_vector(b)
    if va.shape != vb.shape:
        raise DimensionMismatch(f"dims differ: {va.shape} vs {vb.shape}")
    na, nb = float(np.linalg.norm(va)), float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine of a zero vector is undefined")
    value = float(np.dot(va, vb)) / (na * nb)
    return min(1.0, max(-1.0, value))

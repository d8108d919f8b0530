"""Tag schema and per-client information vectors.

The state of what is known about a client is a pair of aligned slot arrays:
``V`` holds one symbolic value per schema label and ``W`` holds one presence
bit per label.  The feature the learners consume is the concatenation of the
two, refreshed into a new snapshot every time a tag lands.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    EmptyCorpusError,
    MalformedVectorError,
    NotEnoughCategoriesError,
)

#: Slot value meaning "nothing was ever tagged under this label".
NO_VALUE = "-"
#: Slot value meaning "something was tagged, but the word is not in the vocabulary".
UNKNOWN_VALUE = "unknown"

RESERVED_VALUES = frozenset({NO_VALUE, UNKNOWN_VALUE})

SCHEMA_FORMAT_VERSION = 1


def _collation_key(category: str) -> tuple[str, str]:
    # case-insensitive ordering with a deterministic casing tiebreak
    return (category.casefold(), category)


@dataclass(frozen=True)
class TagEvent:
    """One operator or automatic tagging act inside a session."""

    session_id: str
    category: str
    value: str
    message_index: int
    timestamp_ms: int
    source: str = "manual"

    def __post_init__(self) -> None:
        object.__setattr__(self, "category", self.category.strip())
        if not self.category:
            raise ValueError("tag category is empty after trimming")
        if self.message_index < 0:
            raise ValueError("message_index must be non-negative")
        if self.source not in ("manual", "auto"):
            raise ValueError(f"unknown tag source {self.source!r}")


@dataclass(frozen=True)
class LabelList:
    """The schema labels, unique and alphabetically ordered; fixes vector layout."""

    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.labels:
            raise ValueError("label list is empty")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("labels must be unique")
        if list(self.labels) != sorted(self.labels, key=_collation_key):
            raise ValueError("labels must be sorted case-insensitively")
        object.__setattr__(self, "_index", {c: i for i, c in enumerate(self.labels)})

    @property
    def n(self) -> int:
        return len(self.labels)

    def index_of(self, category: str) -> int | None:
        """Position of ``category`` in the layout, or None if outside the schema."""
        return self._index.get(category.strip())  # type: ignore[attr-defined]

    def __contains__(self, category: str) -> bool:
        return self.index_of(category) is not None

    def __iter__(self):
        return iter(self.labels)


class KnownWordTable:
    """Per-label vocabulary of values seen during training ingestion.

    Vocabularies grow append-only in first-seen order and never contain the
    reserved sentinel values.  The table also owns the label order, so it is
    all an encoder needs to lay out numeric features.
    """

    def __init__(self, labels: LabelList,
                 values: Mapping[str, Sequence[str]] | None = None):
        self.labels = labels
        self._values: dict[str, list[str]] = {label: [] for label in labels}
        if values:
            for label, words in values.items():
                for word in words:
                    self.add(label, word)

    def add(self, label: str, value: str) -> bool:
        """Record ``value`` under ``label``; returns True if it was new.

        Reserved sentinels and out-of-schema labels are ignored.
        """
        if value in RESERVED_VALUES or label not in self._values:
            return False
        if value in self._values[label]:
            return False
        self._values[label].append(value)
        return True

    def values_for(self, label: str) -> tuple[str, ...]:
        return tuple(self._values.get(label, ()))

    def __contains__(self, pair: tuple[str, str]) -> bool:
        label, value = pair
        return value in self._values.get(label, ())

    @classmethod
    def from_events(cls, events: Iterable[TagEvent], labels: LabelList) -> "KnownWordTable":
        table = cls(labels)
        for event in events:
            table.add(event.category, event.value)
        return table


@dataclass(frozen=True)
class InformationVector:
    """Snapshot of what is known about one client.

    ``t`` counts how many in-schema tag events produced this snapshot; it is
    bookkeeping only and takes no part in equality, because the learned
    feature is definitionally just the concatenation of ``V`` and ``W``.
    """

    V: tuple[str, ...]
    W: tuple[int, ...]
    t: int = field(default=0, compare=False)

    @classmethod
    def blank(cls, labels: LabelList) -> "InformationVector":
        return cls(V=(NO_VALUE,) * labels.n, W=(0,) * labels.n, t=0)

    def check(self, labels: LabelList) -> None:
        if len(self.V) != labels.n or len(self.W) != labels.n:
            raise MalformedVectorError(
                f"vector has {len(self.V)}/{len(self.W)} slots, schema has {labels.n}"
            )
        for value, bit in zip(self.V, self.W):
            if bit not in (0, 1):
                raise MalformedVectorError(f"presence bit {bit!r} is not 0/1")
            if (value != NO_VALUE) != (bit == 1):
                raise MalformedVectorError(
                    f"slot value {value!r} inconsistent with presence bit {bit}"
                )


def build_label_list(events: Sequence[TagEvent], n: int) -> LabelList:
    """Select the ``n`` most frequently tagged categories as the schema.

    Frequency ties at the cut are broken lexicographically ascending; the
    selected labels are then returned in alphabetical (case-insensitive) order.
    """
    if not events:
        raise EmptyCorpusError("no tag events to build a label list from")
    if n <= 0:
        raise ValueError("n must be positive")
    counts: dict[str, int] = {}
    for event in events:
        counts[event.category] = counts.get(event.category, 0) + 1
    if n > len(counts):
        raise NotEnoughCategoriesError(requested=n, distinct=len(counts))
    ranked = sorted(counts, key=lambda c: (-counts[c],) + _collation_key(c))
    chosen = sorted(ranked[:n], key=_collation_key)
    return LabelList(labels=tuple(chosen))


def apply_tag(x: InformationVector, event: TagEvent, labels: LabelList,
              vocab: KnownWordTable) -> InformationVector:
    """Fold one tag event into a snapshot, returning a new vector.

    Tags on categories outside the schema leave the vector (including ``t``)
    untouched.  Known words land verbatim; anything else lands as the
    unknown-word sentinel.  The input vector is never mutated.
    """
    x.check(labels)
    index = labels.index_of(event.category)
    if index is None:
        return x
    word = event.value if (event.category, event.value) in vocab else UNKNOWN_VALUE
    V = x.V[:index] + (word,) + x.V[index + 1:]
    W = x.W[:index] + (1,) + x.W[index + 1:]
    return replace(x, V=V, W=W, t=x.t + 1)


def snapshot_stream(tags: Sequence[TagEvent], labels: LabelList,
                    vocab: KnownWordTable) -> list[InformationVector]:
    """All successive snapshots of a tag stream, starting from the blank vector.

    Out-of-schema tags are skipped and produce no snapshot, so the result has
    exactly ``1 + number of in-schema tags`` entries.
    """
    current = InformationVector.blank(labels)
    snapshots = [current]
    for event in tags:
        updated = apply_tag(current, event, labels, vocab)
        if updated is not current:
            snapshots.append(updated)
            current = updated
    return snapshots


# --- numeric encoding ------------------------------------------------------


def _block_words(vocab: KnownWordTable, label: str) -> list[str]:
    return [NO_VALUE, UNKNOWN_VALUE, *vocab.values_for(label)]


def encoded_length(vocab: KnownWordTable) -> int:
    n = vocab.labels.n
    return n + sum(2 + len(vocab.values_for(label)) for label in vocab.labels)


def encode(x: InformationVector, vocab: KnownWordTable) -> np.ndarray:
    """Densify a snapshot: one one-hot block per label, then the presence bits.

    The layout depends only on the vocabulary, so identical vocab gives
    identical encodings across runs.
    """
    labels = vocab.labels
    x.check(labels)
    parts: list[float] = []
    for i, label in enumerate(labels):
        words = _block_words(vocab, label)
        block = [0.0] * len(words)
        try:
            block[words.index(x.V[i])] = 1.0
        except ValueError:
            raise MalformedVectorError(
                f"value {x.V[i]!r} for label {label!r} is not in the vocabulary"
            ) from None
        parts.extend(block)
    parts.extend(float(bit) for bit in x.W)
    return np.asarray(parts, dtype=np.float64)


def decode(encoded: np.ndarray, vocab: KnownWordTable) -> InformationVector:
    """Invert :func:`encode` back to the symbolic snapshot.

    ``t`` is not part of the numeric layout; it is reconstructed as the number
    of set presence bits.
    """
    labels = vocab.labels
    encoded = np.asarray(encoded, dtype=np.float64)
    if encoded.shape != (encoded_length(vocab),):
        raise MalformedVectorError(
            f"encoded vector has shape {encoded.shape}, expected ({encoded_length(vocab)},)"
        )
    V: list[str] = []
    offset = 0
    for label in labels:
        words = _block_words(vocab, label)
        block = encoded[offset:offset + len(words)]
        hot = np.flatnonzero(block == 1.0)
        if hot.size != 1:
            raise MalformedVectorError(f"label {label!r} block is not one-hot")
        V.append(words[int(hot[0])])
        offset += len(words)
    W = tuple(int(b) for b in encoded[offset:])
    x = InformationVector(V=tuple(V), W=W, t=sum(W))
    x.check(labels)
    return x


def encode_many(xs: Sequence[InformationVector], vocab: KnownWordTable) -> np.ndarray:
    if not xs:
        return np.zeros((0, encoded_length(vocab)), dtype=np.float64)
    return np.stack([encode(x, vocab) for x in xs])


# --- schema file -----------------------------------------------------------


def snapshot_record(x: InformationVector) -> dict:
    """Exchange form of one snapshot: ``{"t": ..., "V": [...], "W": [...]}``."""
    return {"t": x.t, "V": list(x.V), "W": list(x.W)}


def snapshot_from_record(record: Mapping) -> InformationVector:
    return InformationVector(
        V=tuple(record["V"]), W=tuple(int(b) for b in record["W"]), t=int(record["t"])
    )


def schema_to_dict(vocab: KnownWordTable) -> dict:
    return {
        "version": SCHEMA_FORMAT_VERSION,
        "n": vocab.labels.n,
        "labels": list(vocab.labels),
        "vocab": {label: list(vocab.values_for(label)) for label in vocab.labels},
    }


def schema_from_dict(payload: Mapping) -> KnownWordTable:
    if payload.get("version") != SCHEMA_FORMAT_VERSION:
        raise ValueError(f"unsupported schema version {payload.get('version')!r}")
    labels = LabelList(labels=tuple(payload["labels"]))
    if labels.n != payload["n"]:
        raise ValueError("schema n does not match its label count")
    return KnownWordTable(labels, values=payload["vocab"])


def save_schema(vocab: KnownWordTable, path: str | Path) -> None:
    Path(path).write_text(json.dumps(schema_to_dict(vocab), indent=2) + "\n",
                          encoding="utf-8")


def load_schema(path: str | Path) -> KnownWordTable:
    return schema_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

"""Sentence, segment and token index-set primitives.

All indices here are 1-based word positions within a single sentence.
Subword positions belong to :mod:`tradiff.dumps` and never appear in this
module. Index sets are plain frozensets so they compose with builtin set
algebra; the three context operations below are the only derived sets the
feature definitions need.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import DomainError

IndexSet = frozenset[int]

SOURCE = "source"
TARGET = "target"


@dataclass(frozen=True)
class SentencePair:
    """One aligned sentence pair as annotated in a process study.

    ``source_sentence_id`` is the key used for fold assignment: every
    observation of the same source sentence must share it.
    """

    pair_id: str
    source_tokens: tuple[str, ...]
    target_tokens: tuple[str, ...]
    source_sentence_id: str
    language_pair: str
    pos_tags: tuple[str, ...] | None = None

    def __post_init__(self):
        if not self.source_tokens or not self.target_tokens:
            raise DomainError(f"pair {self.pair_id!r}: token lists must be non-empty")
        if self.pos_tags is not None and len(self.pos_tags) != len(self.source_tokens):
            raise DomainError(
                f"pair {self.pair_id!r}: {len(self.pos_tags)} POS tags for "
                f"{len(self.source_tokens)} source tokens"
            )

    def tokens(self, side: str) -> tuple[str, ...]:
        return self.source_tokens if side == SOURCE else self.target_tokens


@dataclass(frozen=True)
class SegmentRef:
    """A (possibly non-contiguous) set of word positions on one side.

    ``indices`` is kept strictly increasing so segment identity is canonical.
    """

    side: str
    indices: tuple[int, ...]

    def __post_init__(self):
        if self.side not in (SOURCE, TARGET):
            raise DomainError(f"side must be 'source' or 'target', got {self.side!r}")
        if not self.indices:
            raise DomainError("segment must contain at least one index")
        if any(b <= a for a, b in zip(self.indices, self.indices[1:])):
            raise DomainError(f"segment indices must be strictly increasing: {self.indices}")
        if self.indices[0] < 1:
            raise DomainError(f"segment indices are 1-based: {self.indices}")

    @property
    def index_set(self) -> IndexSet:
        return frozenset(self.indices)

    def validate_against(self, pair: SentencePair) -> None:
        n = len(pair.tokens(self.side))
        if self.indices[-1] > n:
            raise DomainError(
                f"segment {self.indices} exceeds {self.side} length {n} of pair {pair.pair_id!r}"
            )


def complement_source(i: IndexSet, m: int) -> IndexSet:
    """Source context: all of ``{1..m}`` except the segment itself.

    Empty results are legal (whole-sentence segments).
    """
    i = frozenset(i)
    if i and (min(i) < 1 or max(i) > m):
        raise DomainError(f"indices {sorted(i)} out of range 1..{m}")
    return frozenset(range(1, m + 1)) - i


def preceding_context(j: IndexSet) -> IndexSet:
    """Target context: positions before the segment's rightmost token,
    excluding the segment. Decoder-side contexts never look ahead."""
    j = frozenset(j)
    if not j:
        raise DomainError("preceding_context of an empty segment is undefined")
    if min(j) < 1:
        raise DomainError(f"indices {sorted(j)} are 1-based")
    return frozenset(range(1, max(j) + 1)) - j


def prefix_through(j: IndexSet) -> IndexSet:
    """All positions up to and including the segment's rightmost token."""
    j = frozenset(j)
    if not j:
        raise DomainError("prefix_through of an empty segment is undefined")
    if min(j) < 1:
        raise DomainError(f"indices {sorted(j)} are 1-based")
    return frozenset(range(1, max(j) + 1))

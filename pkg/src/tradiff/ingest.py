"""Readers for translation-process study tables, duration filtering, folds.

Input is a directory of UTF-8 tab-separated tables with a header row:
one sentence inventory plus any number of word- and segment-level unit
tables. Column names vary across studies, so every reader takes a
:class:`TableSchema` mapping canonical field names to the study's columns.

Durations arrive in milliseconds; :func:`filter_and_scale` applies the
20 ms floor field-wise and replaces survivors with their natural log.
"""

from __future__ import annotations

import csv
import dataclasses
import glob
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError
from .segments import SOURCE, TARGET, SegmentRef, SentencePair

MIN_DURATION_MS = 20.0
MISSING_CELLS = {"", "---", "NA", "NaN", "nan", "None"}

WORD = "word"
SEGMENT = "segment"


@dataclass(frozen=True)
class TableSchema:
    """Column-name map for one study's tables.

    ``word_glob``/``segment_glob`` select the unit tables inside the data
    directory; ``columns`` maps canonical names to the study's header names.
    Canonical unit-table fields: study, participant, pair_id, side, indices,
    aligned (optional), trts, trtt, dur (each optional), pos (optional).
    Canonical sentence fields: pair_id, source_sentence_id, language_pair,
    source_text, target_text, source_tokens/target_tokens (optional),
    pos_tags (optional).
    """

    sentence_file: str = "sentences.tsv"
    word_glob: str = "*.words.tsv"
    segment_glob: str = "*.segments.tsv"
    columns: dict = field(default_factory=dict)

    def col(self, name: str) -> str:
        return self.columns.get(name, name)


@dataclass(frozen=True)
class BehavioralObservation:
    """One behavioral row: a unit on one side with optional durations.

    ``aligned`` is only set when the alignment stays inside this sentence
    pair; ``aligned_pair_ids`` keeps the raw sentence references so
    cross-sentence alignments can be dropped later. Duration fields hold
    milliseconds until :func:`filter_and_scale`, then natural logs
    (``scaled`` flips to True).
    """

    study_id: str
    participant_id: str
    language_pair: str
    level: str
    pair: SentencePair
    unit: SegmentRef
    aligned: SegmentRef | None = None
    aligned_pair_ids: tuple[str, ...] = ()
    trts: float | None = None
    trtt: float | None = None
    dur: float | None = None
    pos_tag: str | None = None
    scaled: bool = False

    def durations(self) -> dict:
        return {"trts": self.trts, "trtt": self.trtt, "dur": self.dur}


@dataclass(frozen=True)
class RejectedRow:
    file: str
    line: int
    reason: str


@dataclass
class IngestResult:
    sentences: dict
    observations: list
    rejects: list


# ---------------------------------------------------------------------------
# Table parsing


def _read_tsv(path: str) -> tuple[list[str], list[dict]]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        if reader.fieldnames is None:
            raise ConfigError(f"{path}: empty table (no header row)")
        return list(reader.fieldnames), list(reader)


def _require(header: list[str], schema: TableSchema, names: tuple[str, ...], path: str) -> None:
    missing = [schema.col(n) for n in names if schema.col(n) not in header]
    if missing:
        raise ConfigError(f"{path}: missing mandatory columns {missing}")


def _cell(row: dict, schema: TableSchema, name: str) -> str | None:
    raw = row.get(schema.col(name))
    if raw is None:
        return None
    raw = raw.strip()
    return None if raw in MISSING_CELLS else raw


def parse_sentences(path: str, schema: TableSchema) -> dict:
    """Read the sentence inventory into ``{pair_id: SentencePair}``."""
    header, rows = _read_tsv(path)
    _require(
        header,
        schema,
        ("pair_id", "source_sentence_id", "language_pair", "source_text", "target_text"),
        path,
    )
    sentences: dict[str, SentencePair] = {}
    for lineno, row in enumerate(rows, start=2):
        pair_id = _cell(row, schema, "pair_id")
        if pair_id is None:
            raise ConfigError(f"{path}:{lineno}: sentence row without pair_id")
        if pair_id in sentences:
            raise ConfigError(f"{path}:{lineno}: duplicate pair_id {pair_id!r}")
        src_text = _cell(row, schema, "source_text") or ""
        tgt_text = _cell(row, schema, "target_text") or ""
        src_tokens = _cell(row, schema, "source_tokens")
        tgt_tokens = _cell(row, schema, "target_tokens")
        tags = _cell(row, schema, "pos_tags")
        sentences[pair_id] = SentencePair(
            pair_id=pair_id,
            source_tokens=tuple((src_tokens or src_text).split()),
            target_tokens=tuple((tgt_tokens or tgt_text).split()),
            source_sentence_id=_cell(row, schema, "source_sentence_id") or pair_id,
            language_pair=_cell(row, schema, "language_pair") or "",
            pos_tags=tuple(tags.split()) if tags else None,
        )
    return sentences


def _parse_indices(cell: str) -> tuple[int, ...]:
    parts = [p for p in cell.replace(" ", "").split("+") if p]
    idx = tuple(sorted({int(p) for p in parts}))
    if not idx:
        raise ValueError("empty index list")
    return idx


def _parse_alignment(cell: str, own_pair: str) -> tuple[tuple[int, ...], tuple[str, ...]]:
    """Parse an alignment cell: ``3+4`` or sentence-qualified ``pair7:3+pair7:4``."""
    indices = []
    pairs = set()
    for part in cell.replace(" ", "").split("+"):
        if not part:
            continue
        if ":" in part:
            pid, _, num = part.rpartition(":")
        else:
            pid, num = own_pair, part
        pairs.add(pid)
        indices.append(int(num))
    if not indices:
        raise ValueError("empty alignment cell")
    return tuple(sorted(set(indices))), tuple(sorted(pairs))


def _parse_duration(cell: str | None) -> float | None:
    if cell is None:
        return None
    value = float(cell)
    return value if value > 0 else None


def parse_unit_table(
    path: str,
    level: str,
    sentences: dict,
    schema: TableSchema,
) -> tuple[list[BehavioralObservation], list[RejectedRow]]:
    header, rows = _read_tsv(path)
    _require(header, schema, ("participant", "pair_id", "side", "indices"), path)
    has = {
        name: schema.col(name) in header
        for name in ("study", "aligned", "trts", "trtt", "dur", "pos")
    }
    fname = os.path.basename(path)
    observations: list[BehavioralObservation] = []
    rejects: list[RejectedRow] = []
    for lineno, row in enumerate(rows, start=2):
        try:
            pair_id = _cell(row, schema, "pair_id")
            pair = sentences.get(pair_id or "")
            if pair is None:
                raise ValueError(f"unknown sentence pair {pair_id!r}")
            side = (_cell(row, schema, "side") or "").lower()
            if side not in (SOURCE, TARGET):
                raise ValueError(f"bad side {side!r}")
            idx_cell = _cell(row, schema, "indices")
            if idx_cell is None:
                raise ValueError("missing unit indices")
            unit = SegmentRef(side=side, indices=_parse_indices(idx_cell))
            unit.validate_against(pair)

            aligned = None
            aligned_pairs: tuple[str, ...] = ()
            align_cell = _cell(row, schema, "aligned") if has["aligned"] else None
            if align_cell is not None:
                a_idx, aligned_pairs = _parse_alignment(align_cell, pair.pair_id)
                if aligned_pairs == (pair.pair_id,):
                    aligned = SegmentRef(
                        side=TARGET if side == SOURCE else SOURCE, indices=a_idx
                    )
                    aligned.validate_against(pair)

            trts = _parse_duration(_cell(row, schema, "trts")) if has["trts"] else None
            trtt = _parse_duration(_cell(row, schema, "trtt")) if has["trtt"] else None
            dur = _parse_duration(_cell(row, schema, "dur")) if has["dur"] else None
            if trts is None and trtt is None and dur is None:
                raise ValueError("no positive duration values")

            pos = _cell(row, schema, "pos") if has["pos"] else None
            if pos is None and pair.pos_tags and side == SOURCE and len(unit.indices) == 1:
                pos = pair.pos_tags[unit.indices[0] - 1]

            observations.append(
                BehavioralObservation(
                    study_id=(_cell(row, schema, "study") if has["study"] else None) or "",
                    participant_id=_cell(row, schema, "participant") or "",
                    language_pair=pair.language_pair,
                    level=level,
                    pair=pair,
                    unit=unit,
                    aligned=aligned,
                    aligned_pair_ids=aligned_pairs,
                    trts=trts,
                    trtt=trtt,
                    dur=dur,
                    pos_tag=pos,
                )
            )
        except (ValueError, DomainError) as exc:
            rejects.append(RejectedRow(file=fname, line=lineno, reason=str(exc)))
    return observations, rejects


def parse_tables(directory: str | os.PathLike, schema: TableSchema) -> IngestResult:
    """Parse every configured table under a study directory.

    Malformed unit rows go to the rejects list; structural problems
    (missing files or columns) raise :class:`ConfigError`.
    """
    directory = os.fspath(directory)
    sent_path = os.path.join(directory, schema.sentence_file)
    if not os.path.exists(sent_path):
        raise ConfigError(f"missing sentence inventory {sent_path}")
    sentences = parse_sentences(sent_path, schema)

    observations: list[BehavioralObservation] = []
    rejects: list[RejectedRow] = []
    tables = [
        (path, WORD) for path in sorted(glob.glob(os.path.join(directory, schema.word_glob)))
    ] + [
        (path, SEGMENT)
        for path in sorted(glob.glob(os.path.join(directory, schema.segment_glob)))
    ]
    if not tables:
        raise ConfigError(f"no unit tables matching {schema.word_glob!r} or "
                          f"{schema.segment_glob!r} under {directory}")
    for path, level in tables:
        obs, rej = parse_unit_table(path, level, sentences, schema)
        observations.extend(obs)
        rejects.extend(rej)
    return IngestResult(sentences=sentences, observations=observations, rejects=rejects)


# ---------------------------------------------------------------------------
# Filters


def filter_and_scale(
    observations: list[BehavioralObservation],
) -> tuple[list[BehavioralObservation], dict]:
    """Apply the 20 ms floor field-wise, then natural-log the survivors.

    A row keeps its other measures when one falls below the floor; rows
    left with no measure at all are dropped. Returns (kept, stats).
    """
    kept = []
    stats = {"fields_floored": 0, "rows_dropped": 0}
    for obs in observations:
        if obs.scaled:
            raise DomainError("filter_and_scale applied twice")
        values = {}
        for name, value in obs.durations().items():
            if value is None:
                values[name] = None
            elif value < MIN_DURATION_MS:
                values[name] = None
                stats["fields_floored"] += 1
            else:
                values[name] = math.log(value)
        if all(v is None for v in values.values()):
            stats["rows_dropped"] += 1
            continue
        kept.append(dataclasses.replace(obs, scaled=True, **values))
    return kept, stats


def drop_cross_sentence_alignments(
    observations: list[BehavioralObservation],
) -> tuple[list[BehavioralObservation], int]:
    """Remove observations whose alignment references any other sentence."""
    kept = []
    dropped = 0
    for obs in observations:
        crossing = any(pid != obs.pair.pair_id for pid in obs.aligned_pair_ids)
        if crossing:
            dropped += 1
        else:
            kept.append(obs)
    return kept, dropped


# ---------------------------------------------------------------------------
# Fold assignment


@dataclass(frozen=True)
class FoldAssignment:
    """Sentence-level fold map: observations of one sentence share a fold."""

    mapping: dict
    k: int
    seed: int

    def fold_of(self, source_sentence_id: str) -> int:
        return self.mapping[source_sentence_id]

    def to_json(self) -> dict:
        return {"k": self.k, "seed": self.seed, "mapping": dict(sorted(self.mapping.items()))}

    @classmethod
    def from_json(cls, payload: dict) -> "FoldAssignment":
        return cls(mapping=dict(payload["mapping"]), k=int(payload["k"]), seed=int(payload["seed"]))


def assign_folds(sentence_ids, k: int = 10, seed: int = 0) -> FoldAssignment:
    """Deal shuffled sentences round-robin into ``k`` folds (sizes differ ≤ 1)."""
    ids = sorted(set(sentence_ids))
    if k < 2:
        raise ConfigError(f"need at least 2 folds, got {k}")
    if len(ids) < k:
        raise ConfigError(f"{len(ids)} sentences cannot fill {k} folds")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    mapping = {ids[j]: i % k for i, j in enumerate(order)}
    return FoldAssignment(mapping=mapping, k=k, seed=seed)


# ---------------------------------------------------------------------------
# Canonical serialization (one JSON record per line)


def _obs_record(obs: BehavioralObservation) -> dict:
    return {
        "study": obs.study_id,
        "participant": obs.participant_id,
        "language_pair": obs.language_pair,
        "level": obs.level,
        "pair_id": obs.pair.pair_id,
        "side": obs.unit.side,
        "indices": list(obs.unit.indices),
        "aligned": list(obs.aligned.indices) if obs.aligned else None,
        "aligned_pairs": list(obs.aligned_pair_ids),
        "trts": obs.trts,
        "trtt": obs.trtt,
        "dur": obs.dur,
        "pos": obs.pos_tag,
        "scaled": obs.scaled,
    }


def _obs_from_record(rec: dict, sentences: dict) -> BehavioralObservation:
    pair = sentences[rec["pair_id"]]
    side = rec["side"]
    aligned = None
    if rec["aligned"]:
        aligned = SegmentRef(
            side=TARGET if side == SOURCE else SOURCE, indices=tuple(rec["aligned"])
        )
    return BehavioralObservation(
        study_id=rec["study"],
        participant_id=rec["participant"],
        language_pair=rec["language_pair"],
        level=rec["level"],
        pair=pair,
        unit=SegmentRef(side=side, indices=tuple(rec["indices"])),
        aligned=aligned,
        aligned_pair_ids=tuple(rec["aligned_pairs"]),
        trts=rec["trts"],
        trtt=rec["trtt"],
        dur=rec["dur"],
        pos_tag=rec["pos"],
        scaled=rec["scaled"],
    )


def _sentence_record(pair: SentencePair) -> dict:
    return {
        "pair_id": pair.pair_id,
        "source_sentence_id": pair.source_sentence_id,
        "language_pair": pair.language_pair,
        "source_tokens": list(pair.source_tokens),
        "target_tokens": list(pair.target_tokens),
        "pos_tags": list(pair.pos_tags) if pair.pos_tags else None,
    }


def write_jsonl(records, path: str | os.PathLike) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False))
            fh.write("\n")
    os.replace(tmp, path)


def read_jsonl(path: str | os.PathLike) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def save_observations(result: IngestResult, directory: str | os.PathLike) -> None:
    directory = os.fspath(directory)
    os.makedirs(directory, exist_ok=True)
    pairs = sorted(result.sentences.values(), key=lambda p: p.pair_id)
    write_jsonl((_sentence_record(p) for p in pairs), os.path.join(directory, "sentences.jsonl"))
    write_jsonl(
        (_obs_record(o) for o in result.observations),
        os.path.join(directory, "observations.jsonl"),
    )
    write_jsonl(
        (dataclasses.asdict(r) for r in result.rejects), os.path.join(directory, "rejects.jsonl")
    )


def load_observations(directory: str | os.PathLike) -> IngestResult:
    directory = os.fspath(directory)
    sentences = {}
    for rec in read_jsonl(os.path.join(directory, "sentences.jsonl")):
        sentences[rec["pair_id"]] = SentencePair(
            pair_id=rec["pair_id"],
            source_tokens=tuple(rec["source_tokens"]),
            target_tokens=tuple(rec["target_tokens"]),
            source_sentence_id=rec["source_sentence_id"],
            language_pair=rec["language_pair"],
            pos_tags=tuple(rec["pos_tags"]) if rec.get("pos_tags") else None,
        )
    observations = [
        _obs_from_record(rec, sentences)
        for rec in read_jsonl(os.path.join(directory, "observations.jsonl"))
    ]
    rejects = [
        RejectedRow(**rec) for rec in read_jsonl(os.path.join(directory, "rejects.jsonl"))
    ]
    return IngestResult(sentences=sentences, observations=observations, rejects=rejects)

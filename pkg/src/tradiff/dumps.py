"""Reader/writer for the model-dump interchange format, plus subword mapping.

A dump directory holds one ``manifest.json`` and one ``<pair_id>.tdwb``
binary file per sentence pair. The byte layout is fixed and documented in
``docs/DUMP_FORMAT.md``; this module is the reference implementation. All
tensors are little-endian float32, row-major.

Word positions are 1-based (see :mod:`tradiff.segments`); subword positions
are 1-based over the *full* model sequence, special tokens included.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import CorruptDumpError, DomainError, FormatError, MappingError
from .segments import SegmentRef

MAGIC = b"TDWB"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHHHHHH")  # magic, version, L, H, S_full, T_full, reserved
_COUNT = struct.Struct("<I")

ROW_SUM_TOL = 1e-4

# Per-position role codes in a token track.
ROLE_CONTENT = 0
ROLE_BOS = 1  # decoder start / LM begin-of-sequence
ROLE_LANG = 2  # language tag inserted by the model
ROLE_EOS = 3


@dataclass(frozen=True)
class TokenTrack:
    """One tokenization of one side: subword strings, char spans, roles.

    ``offsets`` are [start, end) spans into the side's raw text; special
    positions carry the empty span (0, 0).
    """

    tokens: tuple[str, ...]
    offsets: tuple[tuple[int, int], ...]
    roles: tuple[int, ...]

    def __post_init__(self):
        if not (len(self.tokens) == len(self.offsets) == len(self.roles)):
            raise DomainError("token/offset/role lengths disagree")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def content_positions(self) -> tuple[int, ...]:
        """1-based positions of real (non-special) subwords."""
        return tuple(p for p, r in enumerate(self.roles, start=1) if r == ROLE_CONTENT)

    @property
    def eos_position(self) -> int | None:
        for p, r in enumerate(self.roles, start=1):
            if r == ROLE_EOS:
                return p
        return None

    def to_record(self) -> dict:
        return {
            "tokens": list(self.tokens),
            "offsets": [list(o) for o in self.offsets],
            "roles": list(self.roles),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "TokenTrack":
        return cls(
            tokens=tuple(rec["tokens"]),
            offsets=tuple((int(a), int(b)) for a, b in rec["offsets"]),
            roles=tuple(int(r) for r in rec["roles"]),
        )


@dataclass(frozen=True)
class TokenLogProbs:
    """Realized-token log-probabilities aligned to a token track.

    ``values[i]`` is the natural-log probability of the token at 1-based
    position ``i + 2``: every position except the first is conditioned on
    what precedes it, so there are ``len(track) - 1`` values.
    """

    track: TokenTrack
    values: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 1 or len(self.values) != len(self.track) - 1:
            raise DomainError(
                f"expected {len(self.track) - 1} logprobs for {len(self.track)} tokens, "
                f"got {len(self.values)}"
            )

    def logp(self, position: int) -> float:
        """Log-probability of the realized token at a 1-based full position."""
        if position < 2 or position > len(self.track):
            raise DomainError(f"position {position} has no conditional log-probability")
        return float(self.values[position - 2])


@dataclass(frozen=True)
class ModelDump:
    """In-memory view of one sentence pair's model quantities.

    Attention stacks have shape (layers, heads, rows, cols); rows are the
    attending positions. ``validation_warnings`` collects soft check
    failures found at read time (row sums, positive logprobs).
    """

    pair_id: str
    layers: int
    heads: int
    source_text: str
    target_text: str
    enc_attn: np.ndarray  # (L, H, S_full, S_full)
    cross_attn: np.ndarray  # (L, H, T_full, S_full)
    dec_attn: np.ndarray  # (L, H, T_full, T_full)
    mt_source: TokenTrack
    mt_target: TokenTrack
    lm_source: TokenLogProbs
    lm_target: TokenLogProbs
    mt_target_logprobs: np.ndarray  # (T_full - 1,), aligned like TokenLogProbs.values
    validation_warnings: tuple[str, ...] = ()

    @property
    def s_full(self) -> int:
        return len(self.mt_source)

    @property
    def t_full(self) -> int:
        return len(self.mt_target)

    @property
    def mt_target_probs(self) -> TokenLogProbs:
        return TokenLogProbs(track=self.mt_target, values=self.mt_target_logprobs)


def _check_shapes(dump: ModelDump) -> None:
    L, H, S, T = dump.layers, dump.heads, dump.s_full, dump.t_full
    expect = {
        "enc_attn": (L, H, S, S),
        "cross_attn": (L, H, T, S),
        "dec_attn": (L, H, T, T),
    }
    for name, shape in expect.items():
        got = getattr(dump, name).shape
        if got != shape:
            raise CorruptDumpError(f"{name}: expected shape {shape}, got {got}")
    if len(dump.mt_target_logprobs) != T - 1:
        raise CorruptDumpError(
            f"mt_target: expected {T - 1} logprobs for {T} decoder positions, "
            f"got {len(dump.mt_target_logprobs)}"
        )


def _soft_checks(dump: ModelDump) -> list[str]:
    warnings = []
    for name in ("enc_attn", "cross_attn", "dec_attn"):
        sums = getattr(dump, name).sum(axis=-1)
        worst = float(np.abs(sums - 1.0).max()) if sums.size else 0.0
        if worst > ROW_SUM_TOL:
            warnings.append(f"{name}: attention row sum off by {worst:.2e} (> {ROW_SUM_TOL})")
    for name, values in (
        ("lm_source", dump.lm_source.values),
        ("lm_target", dump.lm_target.values),
        ("mt_target", dump.mt_target_logprobs),
    ):
        if values.size and float(values.max()) > 1e-5:
            warnings.append(f"{name}: positive log-probabilities up to {float(values.max()):.2e}")
    return warnings


def write_dump(dump: ModelDump, path: str | os.PathLike) -> None:
    """Serialize a dump to one ``.tdwb`` file (atomic: temp + rename)."""
    _check_shapes(dump)
    trailer = {
        "pair_id": dump.pair_id,
        "source_text": dump.source_text,
        "target_text": dump.target_text,
        "mt_source": dump.mt_source.to_record(),
        "mt_target": dump.mt_target.to_record(),
        "lm_source": dump.lm_source.track.to_record(),
        "lm_target": dump.lm_target.track.to_record(),
    }
    blob = json.dumps(trailer, sort_keys=True, ensure_ascii=False, separators=(",", ":"))

    parts = [
        _HEADER.pack(MAGIC, FORMAT_VERSION, dump.layers, dump.heads, dump.s_full, dump.t_full, 0)
    ]
    for name in ("enc_attn", "cross_attn", "dec_attn"):
        parts.append(np.ascontiguousarray(getattr(dump, name), dtype="<f4").tobytes())
    for values in (dump.lm_source.values, dump.lm_target.values, dump.mt_target_logprobs):
        arr = np.ascontiguousarray(values, dtype="<f4")
        parts.append(_COUNT.pack(len(arr)))
        parts.append(arr.tobytes())
    parts.append(blob.encode("utf-8"))

    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(parts))
    os.replace(tmp, path)


def read_dump(path: str | os.PathLike) -> ModelDump:
    """Read and validate one ``.tdwb`` file.

    Hard inconsistencies (magic, shapes, truncation) raise; soft check
    failures are collected into ``validation_warnings``.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: file shorter than header")
    magic, version, L, H, S, T, _ = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")

    pos = _HEADER.size

    def take_tensor(name: str, shape: tuple[int, ...]) -> np.ndarray:
        nonlocal pos
        nbytes = int(np.prod(shape)) * 4
        if pos + nbytes > len(data):
            raise CorruptDumpError(f"{path}: truncated tensor {name} (need {nbytes} bytes)")
        arr = np.frombuffer(data, dtype="<f4", count=int(np.prod(shape)), offset=pos)
        pos += nbytes
        return arr.reshape(shape).copy()

    def take_vector(name: str) -> np.ndarray:
        nonlocal pos
        if pos + _COUNT.size > len(data):
            raise CorruptDumpError(f"{path}: truncated length prefix for {name}")
        (count,) = _COUNT.unpack_from(data, pos)
        pos += _COUNT.size
        if pos + count * 4 > len(data):
            raise CorruptDumpError(f"{path}: truncated tensor {name} (need {count * 4} bytes)")
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=pos).copy()
        pos += count * 4
        return arr

    enc = take_tensor("enc_attn", (L, H, S, S))
    cross = take_tensor("cross_attn", (L, H, T, S))
    dec = take_tensor("dec_attn", (L, H, T, T))
    lm_src_vals = take_vector("lm_source")
    lm_tgt_vals = take_vector("lm_target")
    mt_tgt_vals = take_vector("mt_target")

    try:
        trailer = json.loads(data[pos:].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptDumpError(f"{path}: unreadable token/offset trailer: {exc}") from exc
    try:
        mt_source = TokenTrack.from_record(trailer["mt_source"])
        mt_target = TokenTrack.from_record(trailer["mt_target"])
        lm_source = TokenLogProbs(TokenTrack.from_record(trailer["lm_source"]), lm_src_vals)
        lm_target = TokenLogProbs(TokenTrack.from_record(trailer["lm_target"]), lm_tgt_vals)
    except (KeyError, DomainError) as exc:
        raise CorruptDumpError(f"{path}: inconsistent trailer: {exc}") from exc
    if len(mt_source) != S or len(mt_target) != T:
        raise CorruptDumpError(
            f"{path}: header sizes ({S}, {T}) disagree with token records "
            f"({len(mt_source)}, {len(mt_target)})"
        )

    dump = ModelDump(
        pair_id=str(trailer["pair_id"]),
        layers=L,
        heads=H,
        source_text=trailer["source_text"],
        target_text=trailer["target_text"],
        enc_attn=enc,
        cross_attn=cross,
        dec_attn=dec,
        mt_source=mt_source,
        mt_target=mt_target,
        lm_source=lm_source,
        lm_target=lm_target,
        mt_target_logprobs=mt_tgt_vals,
    )
    _check_shapes(dump)
    return replace(dump, validation_warnings=tuple(_soft_checks(dump)))


# ---------------------------------------------------------------------------
# Dump directories


def dump_filename(pair_id: str) -> str:
    return f"{pair_id}.tdwb"


def write_manifest(directory: str | os.PathLike, manifest: dict) -> None:
    manifest = dict(manifest)
    manifest.setdefault("format", MAGIC.decode())
    manifest.setdefault("version", FORMAT_VERSION)
    path = os.path.join(directory, "manifest.json")
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, ensure_ascii=False, indent=2)
        fh.write("\n")
    os.replace(tmp, path)


def read_manifest(directory: str | os.PathLike) -> dict:
    path = os.path.join(directory, "manifest.json")
    try:
        with open(path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError as exc:
        raise FormatError(f"{directory}: missing manifest.json") from exc
    if manifest.get("format") != MAGIC.decode() or manifest.get("version") != FORMAT_VERSION:
        raise FormatError(f"{directory}: manifest is not a v{FORMAT_VERSION} dump inventory")
    return manifest


class DumpStore:
    """Read-only view of a dump directory keyed by pair_id."""

    def __init__(self, directory: str | os.PathLike):
        self.directory = os.fspath(directory)
        self.manifest = read_manifest(directory)
        self._files = {p["pair_id"]: p["file"] for p in self.manifest.get("pairs", [])}

    def pair_ids(self) -> list[str]:
        return sorted(self._files)

    def __contains__(self, pair_id: str) -> bool:
        return pair_id in self._files

    def load(self, pair_id: str) -> ModelDump:
        try:
            fname = self._files[pair_id]
        except KeyError as exc:
            raise FormatError(f"pair {pair_id!r} not in manifest of {self.directory}") from exc
        return read_dump(os.path.join(self.directory, fname))


# ---------------------------------------------------------------------------
# Word/subword reconciliation

SubwordMap = dict[int, tuple[int, ...]]


def word_spans(text: str, words: tuple[str, ...]) -> tuple[tuple[int, int], ...]:
    """Locate annotation words in the raw text, left to right.

    Words must appear in order; anything between them (whitespace,
    separators) is skipped.
    """
    spans = []
    cursor = 0
    for k, word in enumerate(words, start=1):
        start = text.find(word, cursor)
        if start < 0:
            raise MappingError(f"word {k} ({word!r}) not found in text after offset {cursor}")
        spans.append((start, start + len(word)))
        cursor = start + len(word)
    return tuple(spans)


def map_subwords(
    spans: tuple[tuple[int, int], ...], track: TokenTrack
) -> SubwordMap:
    """Map each word (by char-span overlap) to its subword positions.

    A subword whose span straddles a word boundary is assigned to every
    word it overlaps. Special positions are never mapped. Words without
    any subword, or content subwords claimed by no word, are reported
    together in one :class:`MappingError`.
    """
    mapping: SubwordMap = {}
    claimed = set()
    unmapped = []
    for w, (ws, we) in enumerate(spans, start=1):
        hits = []
        for p, ((ss, se), role) in enumerate(zip(track.offsets, track.roles), start=1):
            if role != ROLE_CONTENT:
                continue
            if ss < we and ws < se:
                hits.append(p)
        if not hits:
            unmapped.append(f"word {w} at chars [{ws},{we})")
        mapping[w] = tuple(hits)
        claimed.update(hits)
    orphans = [p for p in track.content_positions if p not in claimed]
    problems = []
    if unmapped:
        problems.append("words with no subwords: " + "; ".join(unmapped))
    if orphans:
        problems.append(f"subwords claimed by no word: {orphans}")
    if problems:
        raise MappingError("; ".join(problems))
    return mapping


def segment_subword_indices(seg: SegmentRef, mapping: SubwordMap) -> frozenset[int]:
    """Union of the subword positions of a segment's words."""
    out: set[int] = set()
    for w in seg.indices:
        try:
            out.update(mapping[w])
        except KeyError as exc:
            raise MappingError(f"word {w} missing from subword map") from exc
    return frozenset(out)

"""Writer for the TDWB v1 dump format.

Implements the byte layout documented in ``docs/DUMP_FORMAT.md`` at the
repository root; that document is the contract with the analysis side,
which carries its own independent reader.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"TDWB"
VERSION = 1
_HEADER = struct.Struct("<4sHHHHHH")
_COUNT = struct.Struct("<I")

ROLE_CONTENT = 0
ROLE_BOS = 1
ROLE_LANG = 2
ROLE_EOS = 3


@dataclass
class Track:
    """One tokenization: subword strings, char spans, role codes."""

    tokens: list
    offsets: list  # [start, end) into the side's raw text; (0, 0) for specials
    roles: list

    def __post_init__(self):
        if not (len(self.tokens) == len(self.offsets) == len(self.roles)):
            raise ValueError("track fields must have equal length")

    def __len__(self) -> int:
        return len(self.tokens)

    def record(self) -> dict:
        return {
            "tokens": list(self.tokens),
            "offsets": [list(map(int, o)) for o in self.offsets],
            "roles": [int(r) for r in self.roles],
        }


@dataclass
class PairDump:
    """Everything the analysis side needs for one sentence pair."""

    pair_id: str
    source_text: str
    target_text: str
    enc_attn: np.ndarray  # (L, H, S, S) float32
    cross_attn: np.ndarray  # (L, H, T, S)
    dec_attn: np.ndarray  # (L, H, T, T)
    mt_source: Track
    mt_target: Track
    lm_source: Track
    lm_target: Track
    lm_source_logprobs: np.ndarray
    lm_target_logprobs: np.ndarray
    mt_target_logprobs: np.ndarray

    def validate(self) -> None:
        L, H, S, _ = self.enc_attn.shape
        T = self.dec_attn.shape[2]
        expected = {
            "enc_attn": (L, H, S, S),
            "cross_attn": (L, H, T, S),
            "dec_attn": (L, H, T, T),
        }
        for name, shape in expected.items():
            got = getattr(self, name).shape
            if got != shape:
                raise ValueError(f"{name}: expected {shape}, got {got}")
        if len(self.mt_source) != S or len(self.mt_target) != T:
            raise ValueError("token tracks do not match attention sizes")
        for track, values in (
            (self.lm_source, self.lm_source_logprobs),
            (self.lm_target, self.lm_target_logprobs),
            (self.mt_target, self.mt_target_logprobs),
        ):
            if len(values) != len(track.tokens) - 1:
                raise ValueError(
                    f"{len(values)} logprobs for {len(track.tokens)} tokens"
                )

    @property
    def layers(self) -> int:
        return self.enc_attn.shape[0]

    @property
    def heads(self) -> int:
        return self.enc_attn.shape[1]


def write_pair(dump: PairDump, path: str | os.PathLike) -> None:
    """Serialize one pair atomically (temp file + rename)."""
    dump.validate()
    L, H = dump.layers, dump.heads
    S = dump.enc_attn.shape[2]
    T = dump.dec_attn.shape[2]
    trailer = {
        "pair_id": dump.pair_id,
        "source_text": dump.source_text,
        "target_text": dump.target_text,
        "mt_source": dump.mt_source.record(),
        "mt_target": dump.mt_target.record(),
        "lm_source": dump.lm_source.record(),
        "lm_target": dump.lm_target.record(),
    }
    parts = [_HEADER.pack(MAGIC, VERSION, L, H, S, T, 0)]
    for tensor in (dump.enc_attn, dump.cross_attn, dump.dec_attn):
        parts.append(np.ascontiguousarray(tensor, dtype="<f4").tobytes())
    for values in (
        dump.lm_source_logprobs,
        dump.lm_target_logprobs,
        dump.mt_target_logprobs,
    ):
        arr = np.ascontiguousarray(values, dtype="<f4")
        parts.append(_COUNT.pack(len(arr)))
        parts.append(arr.tobytes())
    parts.append(
        json.dumps(trailer, sort_keys=True, ensure_ascii=False,
                   separators=(",", ":")).encode("utf-8")
    )
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(parts))
    os.replace(tmp, path)


def write_manifest(directory: str | os.PathLike, manifest: dict) -> None:
    manifest = dict(manifest)
    manifest.setdefault("format", MAGIC.decode())
    manifest.setdefault("version", VERSION)
    path = os.path.join(directory, "manifest.json")
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, ensure_ascii=False, indent=2)
        fh.write("\n")
    os.replace(tmp, path)

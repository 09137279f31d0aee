"""Surprisal, attentional and control features for translation units.

Attentional raw values follow two primitives: total flow from one token
set to another, and the summed entropy of each attending row's
distribution restricted (and l1-renormalized) to the receiving set.
Both are computed per (layer, head), divided by their uniform-attention
dummy value, then arithmetic-averaged over all layer-head pairs.

Index sets are 1-based positions over the full model sequence; the
uniform dummy uses the full row length, specials included, because real
attention rows also spend mass on special tokens.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, TransformerMixin

from .dumps import DumpStore, ModelDump, TokenLogProbs, map_subwords, segment_subword_indices, word_spans
from .errors import ContractError, DomainError
from .ingest import BehavioralObservation
from .segments import SOURCE, TARGET, SegmentRef, SentencePair

SOURCE_ATTENTION_FEATURES = ("f_e_uu", "f_e_u_ctx", "f_e_u_eos", "f_e_ctx_u", "H_e_u_x", "f_c_y_u")
TARGET_ATTENTION_FEATURES = ("f_c_v_eos", "H_c_v_x", "f_d_vv", "f_d_v_ctx", "H_d_v_prefix")
SURPRISAL_FEATURES = ("s_lm", "s_mt")
CONTROL_COLUMNS = ("ctl_len", "ctl_freq", "ctl_pos")

ID_COLUMNS = (
    "study", "participant", "language_pair", "pair_id", "source_sentence_id",
    "level", "side", "unit", "pos_tag", "aligned_pos",
)
RESPONSE_COLUMNS = ("trts", "trtt", "dur", "dur_avg")
PREDICTOR_COLUMNS = SURPRISAL_FEATURES + SOURCE_ATTENTION_FEATURES + TARGET_ATTENTION_FEATURES
TABLE_COLUMNS = ID_COLUMNS + RESPONSE_COLUMNS + PREDICTOR_COLUMNS + CONTROL_COLUMNS


def _positions(index_set, n_rows: int, n_cols: int, axis: str) -> np.ndarray:
    pos = np.fromiter(sorted(index_set), dtype=np.intp)
    bound = n_rows if axis == "row" else n_cols
    if pos.size and (pos[0] < 1 or pos[-1] > bound):
        raise DomainError(f"{axis} indices {pos.tolist()} out of range 1..{bound}")
    return pos - 1


def flow(A: np.ndarray, frm, to):
    """Total attentional mass from positions ``frm`` onto positions ``to``.

    ``A`` may be a single (rows, cols) matrix or any stack of them; the
    sum runs over the trailing two axes. Empty sets give 0.
    """
    A = np.asarray(A, dtype=float)
    rows = _positions(frm, A.shape[-2], A.shape[-1], "row")
    cols = _positions(to, A.shape[-2], A.shape[-1], "col")
    if rows.size == 0 or cols.size == 0:
        out = np.zeros(A.shape[:-2])
    else:
        out = A[..., rows, :][..., :, cols].sum(axis=(-2, -1))
    return float(out) if out.ndim == 0 else out


def attn_entropy(A: np.ndarray, frm, to):
    """Summed entropy (nats) of each ``frm`` row renormalized over ``to``.

    Rows whose restricted vector has no mass contribute 0, as do empty
    index sets.
    """
    A = np.asarray(A, dtype=float)
    rows = _positions(frm, A.shape[-2], A.shape[-1], "row")
    cols = _positions(to, A.shape[-2], A.shape[-1], "col")
    if rows.size == 0 or cols.size == 0:
        out = np.zeros(A.shape[:-2])
        return float(out) if out.ndim == 0 else out
    sub = A[..., rows, :][..., :, cols]
    mass = sub.sum(axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(mass > 0, sub / np.where(mass > 0, mass, 1.0), 0.0)
        terms = np.where(p > 0, -p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    out = terms.sum(axis=(-2, -1))
    return float(out) if out.ndim == 0 else out


def flow_dummy(n_from: int, n_to: int, row_len: int) -> float:
    """Flow under uniform attention 1/row_len over the full row."""
    return n_from * n_to / row_len


def entropy_dummy(n_from: int, n_to: int) -> float:
    """Entropy under uniform attention: each restricted row is uniform."""
    return n_from * math.log(n_to) if n_to > 0 else 0.0


def normalize_feature(raw, dummy: float):
    """Raw-to-dummy ratio; 0 whenever the dummy is 0 (degenerate sets)."""
    if dummy == 0.0:
        return 0.0 if np.isscalar(raw) else np.zeros_like(np.asarray(raw, dtype=float))
    return raw / dummy


def _averaged(A: np.ndarray, frm, to, kind: str) -> float:
    """Normalize per (layer, head), then average over all layer-head pairs."""
    if kind == "flow":
        raw = flow(A, frm, to)
        dummy = flow_dummy(len(frm), len(to), A.shape[-1])
    else:
        raw = attn_entropy(A, frm, to)
        dummy = entropy_dummy(len(frm), len(to))
    return float(np.mean(normalize_feature(raw, dummy)))


# ---------------------------------------------------------------------------
# Surprisal


def surprisal_sum(logprobs: TokenLogProbs, seg_subwords) -> float:
    """Summed negative log-probability (nats) over segment subwords."""
    if not seg_subwords:
        raise DomainError("surprisal of an empty segment is undefined")
    return float(sum(-logprobs.logp(p) for p in sorted(seg_subwords)))


def lm_surprisal(logprobs: TokenLogProbs, seg_subwords) -> float:
    """Length-normalized monolingual surprisal, nats per subword."""
    return surprisal_sum(logprobs, seg_subwords) / len(seg_subwords)


def mt_surprisal(logprobs: TokenLogProbs, seg_subwords, side: str = TARGET) -> float:
    """Length-normalized translation surprisal, nats per subword.

    Defined only for target-side segments: the translation model encodes
    the whole source before producing any distribution.
    """
    if side != TARGET:
        raise DomainError("translation surprisal is undefined for source-side segments")
    return surprisal_sum(logprobs, seg_subwords) / len(seg_subwords)


# ---------------------------------------------------------------------------
# Control features


class FrequencyTable:
    """Word unigram frequencies with a positive floor for OOV lookups."""

    def __init__(self, freqs: dict, floor: float | None = None):
        if not freqs:
            raise DomainError("empty frequency table")
        self._freqs = dict(freqs)
        nonzero = [v for v in self._freqs.values() if v > 0]
        if not nonzero:
            raise DomainError("frequency table has no positive entries")
        self.floor = float(floor) if floor is not None else min(nonzero)
        if self.floor <= 0:
            raise DomainError("frequency floor must be positive")

    @classmethod
    def from_file(cls, path, floor: float | None = None) -> "FrequencyTable":
        freqs: dict[str, float] = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                word, _, value = line.rpartition("\t")
                if not word:
                    word, _, value = line.rpartition(" ")
                freqs[word] = float(value)
        return cls(freqs, floor=floor)

    def log_freq(self, word: str) -> tuple[float, bool]:
        """Natural-log frequency and an OOV flag (floor applied)."""
        value = self._freqs.get(word)
        if value is None:
            value = self._freqs.get(word.casefold())
        oov = value is None or value <= 0
        return math.log(max(value or 0.0, self.floor)), oov


@dataclass(frozen=True)
class Controls:
    length: float
    mean_log_freq: float
    mean_pos_quantile: float
    oov_words: tuple[str, ...] = ()


def control_features(
    seg: SegmentRef, pair: SentencePair, freq: FrequencyTable, n_subwords: int
) -> Controls:
    """Length, mean log unigram frequency and mean position quantile."""
    words = pair.tokens(seg.side)
    n = len(words)
    logs, oov = [], []
    for idx in seg.indices:
        lf, is_oov = freq.log_freq(words[idx - 1])
        logs.append(lf)
        if is_oov:
            oov.append(words[idx - 1])
    return Controls(
        length=float(n_subwords),
        mean_log_freq=float(np.mean(logs)),
        mean_pos_quantile=float(np.mean([idx / n for idx in seg.indices])),
        oov_words=tuple(oov),
    )


def avg_translation_duration(dur_ms: float, n_aligned_source_words: int) -> float:
    """Log of production duration spread over its aligned source words."""
    if n_aligned_source_words < 1:
        raise DomainError("need at least one aligned source word")
    if dur_ms <= 0:
        raise DomainError("duration must be positive milliseconds")
    return math.log(dur_ms / n_aligned_source_words)


# ---------------------------------------------------------------------------
# Per-pair feature computation


class PairFeatures:
    """All feature computations for one sentence pair against its dump.

    Builds the four word/subword maps once (source and target, LM and NMT
    tokenizations) and exposes the per-segment feature sets.
    """

    def __init__(self, pair: SentencePair, dump: ModelDump):
        if pair.pair_id != dump.pair_id:
            raise ContractError(f"pair {pair.pair_id!r} given dump {dump.pair_id!r}")
        self.pair = pair
        self.dump = dump
        src_spans = word_spans(dump.source_text, pair.source_tokens)
        tgt_spans = word_spans(dump.target_text, pair.target_tokens)
        self._maps = {
            ("mt", SOURCE): map_subwords(src_spans, dump.mt_source),
            ("mt", TARGET): map_subwords(tgt_spans, dump.mt_target),
            ("lm", SOURCE): map_subwords(src_spans, dump.lm_source.track),
            ("lm", TARGET): map_subwords(tgt_spans, dump.lm_target.track),
        }
        self.x = frozenset(dump.mt_source.content_positions)
        self.y = frozenset(dump.mt_target.content_positions)
        eos = dump.mt_source.eos_position
        self.src_eos = frozenset() if eos is None else frozenset({eos})

    def subwords(self, seg: SegmentRef, model: str = "mt") -> frozenset[int]:
        seg.validate_against(self.pair)
        return segment_subword_indices(seg, self._maps[(model, seg.side)])

    def source_features(self, u: SegmentRef) -> dict:
        """The six encoder/cross attentional features of a source segment."""
        if u.side != SOURCE:
            raise DomainError("source feature set needs a source-side segment")
        us = self.subwords(u)
        ubar = self.x - us
        enc, cross = self.dump.enc_attn, self.dump.cross_attn
        return {
            "f_e_uu": _averaged(enc, us, us, "flow"),
            "f_e_u_ctx": _averaged(enc, us, ubar, "flow"),
            "f_e_u_eos": _averaged(enc, us, self.src_eos, "flow"),
            "f_e_ctx_u": _averaged(enc, ubar, us, "flow"),
            "H_e_u_x": _averaged(enc, us, self.x, "entropy"),
            "f_c_y_u": _averaged(cross, self.y, us, "flow"),
        }

    def target_features(self, v: SegmentRef) -> dict:
        """The five cross/decoder attentional features of a target segment."""
        if v.side != TARGET:
            raise DomainError("target feature set needs a target-side segment")
        vs = self.subwords(v)
        rightmost = max(vs)
        prefix = frozenset(p for p in self.y if p <= rightmost)
        vbar = prefix - vs
        cross, dec = self.dump.cross_attn, self.dump.dec_attn
        return {
            "f_c_v_eos": _averaged(cross, vs, self.src_eos, "flow"),
            "H_c_v_x": _averaged(cross, vs, self.x, "entropy"),
            "f_d_vv": _averaged(dec, vs, vs, "flow"),
            "f_d_v_ctx": _averaged(dec, vs, vbar, "flow"),
            "H_d_v_prefix": _averaged(dec, vs, prefix, "entropy"),
        }

    def lm_surprisal(self, seg: SegmentRef) -> float:
        probs = self.dump.lm_source if seg.side == SOURCE else self.dump.lm_target
        return lm_surprisal(probs, self.subwords(seg, "lm"))

    def mt_surprisal(self, seg: SegmentRef) -> float:
        return mt_surprisal(self.dump.mt_target_probs, self.subwords(seg), side=seg.side)

    def controls(self, seg: SegmentRef, freq: FrequencyTable) -> Controls:
        return control_features(seg, self.pair, freq, len(self.subwords(seg)))


def source_feature_set(dump: ModelDump, pair: SentencePair, u: SegmentRef) -> dict:
    return PairFeatures(pair, dump).source_features(u)


def target_feature_set(dump: ModelDump, pair: SentencePair, v: SegmentRef) -> dict:
    return PairFeatures(pair, dump).target_features(v)


# ---------------------------------------------------------------------------
# Observation-table extraction


class FeatureExtractor(BaseEstimator, TransformerMixin):
    """Turns scaled behavioral observations into a flat feature table.

    Stateless in the sklearn sense: ``fit`` only checks resources, and
    ``transform`` maps a list of observations to one DataFrame row each,
    with a stable column order. Pairs are processed independently, so
    results do not depend on ``n_jobs``.
    """

    def __init__(self, dumps: DumpStore | None = None,
                 frequency: FrequencyTable | None = None, n_jobs: int = 1):
        self.dumps = dumps
        self.frequency = frequency
        self.n_jobs = n_jobs

    def fit(self, X=None, y=None):
        if self.dumps is None or self.frequency is None:
            raise ConfigError("FeatureExtractor needs dumps and a frequency table")
        return self

    def transform(self, X) -> pd.DataFrame:
        observations: list[BehavioralObservation] = list(X)
        self.fit()
        pair_ids = sorted({obs.pair.pair_id for obs in observations})
        pairs = {obs.pair.pair_id: obs.pair for obs in observations}

        def build(pid: str) -> PairFeatures:
            return PairFeatures(pairs[pid], self.dumps.load(pid))

        if self.n_jobs and self.n_jobs > 1:
            with ThreadPoolExecutor(max_workers=self.n_jobs) as pool:
                contexts = dict(zip(pair_ids, pool.map(build, pair_ids)))
        else:
            contexts = {pid: build(pid) for pid in pair_ids}

        rows = [self._row(obs, contexts[obs.pair.pair_id]) for obs in observations]
        oov: set[str] = set()
        for row in rows:
            oov.update(row.pop("_oov"))
        self.oov_words_ = tuple(sorted(oov))
        return pd.DataFrame(rows, columns=list(TABLE_COLUMNS))

    def _row(self, obs: BehavioralObservation, ctx: PairFeatures) -> dict:
        if not obs.scaled:
            raise ContractError("observations must be filtered and log-scaled first")
        seg = obs.unit
        row = dict.fromkeys(TABLE_COLUMNS, np.nan)
        row.update(
            study=obs.study_id,
            participant=obs.participant_id,
            language_pair=obs.language_pair,
            pair_id=obs.pair.pair_id,
            source_sentence_id=obs.pair.source_sentence_id,
            level=obs.level,
            side=seg.side,
            unit="+".join(map(str, seg.indices)),
            pos_tag=obs.pos_tag,
            aligned_pos=None,
            trts=np.nan if obs.trts is None else obs.trts,
            trtt=np.nan if obs.trtt is None else obs.trtt,
            dur=np.nan if obs.dur is None else obs.dur,
        )
        row["s_lm"] = ctx.lm_surprisal(seg)
        if seg.side == SOURCE:
            row.update(ctx.source_features(seg))
        else:
            row["s_mt"] = ctx.mt_surprisal(seg)
            row.update(ctx.target_features(seg))
            # Fig-style per-word production time: duration of this target
            # unit split over the source words aligned with it.
            if obs.dur is not None and obs.aligned is not None:
                row["dur_avg"] = obs.dur - math.log(len(obs.aligned.indices))
                if obs.pair.pos_tags and len(obs.aligned.indices) == 1:
                    row["aligned_pos"] = obs.pair.pos_tags[obs.aligned.indices[0] - 1]
        ctl = ctx.controls(seg, self.frequency)
        row.update(
            ctl_len=ctl.length,
            ctl_freq=ctl.mean_log_freq,
            ctl_pos=ctl.mean_pos_quantile,
            _oov=ctl.oov_words,
        )
        return row

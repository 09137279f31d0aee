"""Synthetic sentence pairs and model dumps for demos and fixtures.

Fabricates plausible tokenizations (language tag + subwords + eos on the
translation side, a leading bos on the language-model side), Dirichlet
attention rows (causal on the decoder) and random log-probabilities.
Everything is driven by a named RNG substream, so corpora are fully
reproducible from one master seed.
"""

from __future__ import annotations

import numpy as np

from .dumps import ROLE_BOS, ROLE_CONTENT, ROLE_EOS, ROLE_LANG, ModelDump, TokenLogProbs, TokenTrack
from .segments import SentencePair


def _subword_splits(word: str, rng: np.random.Generator) -> list[str]:
    """Split longer words into two pieces at a random interior point."""
    if len(word) >= 5 and rng.random() < 0.6:
        cut = int(rng.integers(2, len(word) - 1))
        return [word[:cut], word[cut:]]
    return [word]


def _content_pieces(tokens, text: str, rng: np.random.Generator):
    pieces, offsets = [], []
    cursor = 0
    for word in tokens:
        start = text.index(word, cursor)
        for piece in _subword_splits(word, rng):
            pieces.append(piece)
            offsets.append((start, start + len(piece)))
            start += len(piece)
        cursor = start
    return pieces, offsets


def _mt_track(tokens, text, rng, side: str) -> TokenTrack:
    pieces, offsets = _content_pieces(tokens, text, rng)
    toks = ["<lang>"] + pieces + ["</s>"]
    offs = [(0, 0)] + offsets + [(0, 0)]
    roles = [ROLE_LANG] + [ROLE_CONTENT] * len(pieces) + [ROLE_EOS]
    if side == "target":
        toks = ["<s>"] + toks
        offs = [(0, 0)] + offs
        roles = [ROLE_BOS] + roles
    return TokenTrack(tokens=tuple(toks), offsets=tuple(offs), roles=tuple(roles))


def _lm_track(tokens, text, rng) -> TokenTrack:
    pieces, offsets = _content_pieces(tokens, text, rng)
    return TokenTrack(
        tokens=tuple(["<s>"] + pieces),
        offsets=tuple([(0, 0)] + offsets),
        roles=tuple([ROLE_BOS] + [ROLE_CONTENT] * len(pieces)),
    )


_ATTN_GRAIN = 4096  # power of two, so float32 rows sum to exactly 1


def _attention(rng, layers, heads, rows, cols, causal=False, uniform=False) -> np.ndarray:
    """Random attention rows as multinomial counts over a 1/4096 grid.

    Counts over a power-of-two denominator are exact in float32, so row
    sums survive serialization bit-exactly. ``uniform=True`` instead
    returns exact float64 uniform rows over the full row (an idealized
    dump for normalization checks; not causal).
    """
    if uniform:
        return np.full((layers, heads, rows, cols), 1.0 / cols)
    mass = rng.gamma(1.0, size=(layers, heads, rows, cols))
    if causal:
        mass = mass * np.tril(np.ones((rows, cols)))
    pvals = mass / mass.sum(axis=-1, keepdims=True)
    counts = rng.multinomial(_ATTN_GRAIN, pvals)
    return (counts / _ATTN_GRAIN).astype(np.float32)


def _logprobs(rng, n: int, uniform=False) -> np.ndarray:
    if uniform:
        return np.full(n, -1.0, dtype=np.float32)
    return rng.uniform(-4.0, -0.05, size=n).astype(np.float32)


def synthetic_dump(pair: SentencePair, rng: np.random.Generator,
                   layers: int = 2, heads: int = 2, uniform: bool = False) -> ModelDump:
    """Build a fully consistent random dump for one sentence pair.

    With ``uniform=True`` every attention row is uniform over its support
    (the normalization-identity case) and all log-probabilities are -1.
    """
    source_text = " ".join(pair.source_tokens)
    target_text = " ".join(pair.target_tokens)
    mt_source = _mt_track(pair.source_tokens, source_text, rng, "source")
    mt_target = _mt_track(pair.target_tokens, target_text, rng, "target")
    lm_source = _lm_track(pair.source_tokens, source_text, rng)
    lm_target = _lm_track(pair.target_tokens, target_text, rng)
    S, T = len(mt_source), len(mt_target)
    return ModelDump(
        pair_id=pair.pair_id,
        layers=layers,
        heads=heads,
        source_text=source_text,
        target_text=target_text,
        enc_attn=_attention(rng, layers, heads, S, S, uniform=uniform),
        cross_attn=_attention(rng, layers, heads, T, S, uniform=uniform),
        dec_attn=_attention(rng, layers, heads, T, T, causal=True, uniform=uniform),
        mt_source=mt_source,
        mt_target=mt_target,
        lm_source=TokenLogProbs(lm_source, _logprobs(rng, len(lm_source) - 1, uniform)),
        lm_target=TokenLogProbs(lm_target, _logprobs(rng, len(lm_target) - 1, uniform)),
        mt_target_logprobs=_logprobs(rng, T - 1, uniform),
    )

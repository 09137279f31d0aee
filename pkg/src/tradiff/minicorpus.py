"""Bundled synthetic mini-corpus: tables, dumps, frequencies and a config.

Fifty sentence pairs across two pseudo language pairs and three pseudo
participants, with log-durations generated from a known linear model so
the planted predictors (monolingual surprisal for source reading time,
translation surprisal for target measures) carry real signal. A few rows
exercise the reject paths: sub-20 ms durations and cross-sentence
alignments.

Everything derives from one master seed through named substreams, so the
corpus is byte-reproducible.
"""

from __future__ import annotations

import json
import math
import os

import numpy as np

from .dumps import dump_filename, write_dump, write_manifest
from .features import PairFeatures
from .segments import SOURCE, TARGET, SegmentRef, SentencePair
from .synth import synthetic_dump
from .util import rng_substream

_CONSONANTS = "bdfgklmnprstv"
_VOWELS = "aeiou"
_POS = ("NOUN", "VERB", "DET", "ADJ", "ADV", "PRON")

PLANTED = {"trts": ("s_lm", 0.5), "trtt": ("s_mt", 0.4), "dur": ("s_mt", 0.5)}


def _word(rng, syllables: int) -> str:
    return "".join(
        _CONSONANTS[rng.integers(len(_CONSONANTS))] + _VOWELS[rng.integers(len(_VOWELS))]
        for _ in range(syllables)
    )


def _vocab(rng, size: int, prefix: str) -> list[str]:
    words = []
    seen = set()
    while len(words) < size:
        w = prefix + _word(rng, int(rng.integers(1, 4)))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def _zipf_freqs(rng, words: list[str]) -> dict:
    ranks = np.arange(1, len(words) + 1, dtype=float)
    weights = 1.0 / ranks
    per_billion = 1e9 * weights / weights.sum()
    order = rng.permutation(len(words))
    return {words[i]: float(per_billion[r]) for r, i in enumerate(order)}


def _diagonal_alignment(rng, idx: int, m: int, n: int) -> tuple[int, ...]:
    center = min(n, max(1, round(idx * n / m)))
    fan = int(rng.integers(1, 3))
    picks = {min(n, max(1, center + d)) for d in range(fan)}
    return tuple(sorted(picks))


def _zscore(values: np.ndarray) -> np.ndarray:
    sd = values.std()
    return (values - values.mean()) / (sd if sd > 0 else 1.0)


def make_mini_corpus(root: str | os.PathLike, seed: int = 2026, n_pairs: int = 50,
                     participants: int = 3) -> str:
    """Write the corpus under ``root`` and return the config path."""
    root = os.fspath(root)
    os.makedirs(os.path.join(root, "dumps"), exist_ok=True)

    rng_v = rng_substream(seed, "vocab")
    src_vocab = _vocab(rng_v, 110, "")
    tgt_vocab = _vocab(rng_v, 110, "z")
    freqs = _zipf_freqs(rng_v, src_vocab + tgt_vocab)
    # leave a handful out-of-vocabulary to exercise the floor rule
    oov_holdout = set(list(freqs)[::37][:5])
    with open(os.path.join(root, "wordfreq.tsv"), "w", encoding="utf-8") as fh:
        for word in sorted(freqs):
            if word not in oov_holdout:
                fh.write(f"{word}\t{freqs[word]:.6f}\n")

    # --- sentence pairs and dumps
    pairs = []
    lang_of = {}
    rng_s = rng_substream(seed, "sentences")
    for i in range(n_pairs):
        lang = "aa-bb" if i % 2 == 0 else "aa-cc"
        m = int(rng_s.integers(4, 9))
        n = max(3, m + int(rng_s.integers(-1, 2)))
        src = [src_vocab[rng_s.integers(len(src_vocab))] for _ in range(m)]
        tgt = [tgt_vocab[rng_s.integers(len(tgt_vocab))] for _ in range(n)]
        pair = SentencePair(
            pair_id=f"p{i:03d}",
            source_tokens=tuple(src),
            target_tokens=tuple(tgt),
            source_sentence_id=f"s{i:03d}",
            language_pair=lang,
            pos_tags=tuple(_POS[rng_s.integers(len(_POS))] for _ in range(m)),
        )
        pairs.append(pair)
        lang_of[pair.pair_id] = lang

    contexts = {}
    manifest_pairs = []
    for pair in pairs:
        dump = synthetic_dump(pair, rng_substream(seed, "dump", pair.pair_id))
        write_dump(dump, os.path.join(root, "dumps", dump_filename(pair.pair_id)))
        contexts[pair.pair_id] = PairFeatures(pair, dump)
        manifest_pairs.append({"pair_id": pair.pair_id, "file": dump_filename(pair.pair_id)})
    write_manifest(
        os.path.join(root, "dumps"),
        {
            "layers": 2,
            "heads": 2,
            "lm_model": "synthetic-lm",
            "mt_model": "synthetic-mt",
            "lm_tokenizer": "synthetic",
            "mt_tokenizer": "synthetic",
            "pairs": manifest_pairs,
            "failures": [],
        },
    )

    # --- behavioral units with planted responses
    rng_u = rng_substream(seed, "units")
    part_ids = [f"P{k + 1:02d}" for k in range(participants)]
    part_effect = {p: float(rng_u.normal(0, 0.25)) for p in part_ids}
    lang_effect = {"aa-bb": 0.12, "aa-cc": -0.12}

    units = []  # (participant, pair, level, seg, aligned, features)
    for pair in pairs:
        ctx = contexts[pair.pair_id]
        m, n = len(pair.source_tokens), len(pair.target_tokens)
        for participant in part_ids:
            if rng_u.random() < 0.25:
                continue  # participants do not cover every sentence
            for i in range(1, m + 1):
                seg = SegmentRef(side=SOURCE, indices=(i,))
                aligned = _diagonal_alignment(rng_u, i, m, n)
                units.append((participant, pair, "word", seg, aligned))
            for j in range(1, n + 1):
                seg = SegmentRef(side=TARGET, indices=(j,))
                aligned = _diagonal_alignment(rng_u, j, n, m)
                units.append((participant, pair, "word", seg, aligned))
            for side, length in ((SOURCE, m), (TARGET, n)):
                start = int(rng_u.integers(1, max(2, length - 1)))
                width = int(rng_u.integers(2, 4))
                idx = tuple(range(start, min(length, start + width - 1) + 1))
                seg = SegmentRef(side=side, indices=idx)
                other = n if side == SOURCE else m
                aligned = _diagonal_alignment(rng_u, idx[0], length, other)
                units.append((participant, pair, "segment", seg, aligned))

    s_lm = np.array(
        [contexts[p.pair_id].lm_surprisal(seg) for _, p, _, seg, _ in units]
    )
    s_mt = np.array(
        [
            contexts[p.pair_id].mt_surprisal(seg) if seg.side == TARGET else np.nan
            for _, p, _, seg, _ in units
        ]
    )
    lengths = np.array(
        [len(contexts[p.pair_id].subwords(seg)) for _, p, _, seg, _ in units], float
    )
    z_lm = _zscore(s_lm)
    z_mt = _zscore(np.nan_to_num(s_mt, nan=np.nanmean(s_mt)))
    z_len = _zscore(lengths)

    rng_y = rng_substream(seed, "responses")

    def response(measure: str, k: int, unit) -> float:
        participant, pair, level, seg, _ = unit
        feature, beta = PLANTED[measure]
        planted = z_lm[k] if feature == "s_lm" else z_mt[k]
        base = {"trts": math.log(260.0), "trtt": math.log(300.0), "dur": math.log(800.0)}
        y = (
            base[measure]
            + beta * planted
            + 0.18 * z_len[k]
            + part_effect[participant]
            + lang_effect[pair.language_pair]
            + rng_y.normal(0, 0.30)
        )
        return float(np.exp(y))

    word_rows, seg_rows = [], []
    for k, unit in enumerate(units):
        participant, pair, level, seg, aligned = unit
        aligned_cell = "+".join(str(a) for a in aligned)
        if seg.side == SOURCE:
            trts, trtt, dur = response("trts", k, unit), None, None
        else:
            trts = None
            trtt = response("trtt", k, unit)
            dur = response("dur", k, unit)
        row = [
            "SYN01",
            participant,
            pair.pair_id,
            seg.side,
            "+".join(str(i) for i in seg.indices),
            aligned_cell,
            f"{trts:.3f}" if trts else "---",
            f"{trtt:.3f}" if trtt else "---",
            f"{dur:.3f}" if dur else "---",
        ]
        (word_rows if level == "word" else seg_rows).append(row)

    # planted rejects: sub-threshold durations and cross-sentence alignments
    word_rows.append(["SYN01", part_ids[0], pairs[0].pair_id, SOURCE, "1", "1", "10", "---", "---"])
    word_rows.append(["SYN01", part_ids[1], pairs[1].pair_id, TARGET, "1", "1", "---", "---", "12"])
    word_rows.append(["SYN01", part_ids[1], pairs[6].pair_id, SOURCE, "1", "1", "0", "---", "---"])
    word_rows.append(
        ["SYN01", part_ids[0], pairs[2].pair_id, SOURCE, "2",
         f"{pairs[3].pair_id}:1", "250", "---", "---"]
    )
    seg_rows.append(
        ["SYN01", part_ids[2], pairs[4].pair_id, TARGET, "1+2",
         f"1+{pairs[5].pair_id}:2", "---", "400", "600"]
    )

    header = ["study", "participant", "pair_id", "side", "indices", "aligned",
              "trts", "trtt", "dur"]
    for name, rows in (("mini.words.tsv", word_rows), ("mini.segments.tsv", seg_rows)):
        with open(os.path.join(root, name), "w", encoding="utf-8") as fh:
            fh.write("\t".join(header) + "\n")
            for row in rows:
                fh.write("\t".join(row) + "\n")

    with open(os.path.join(root, "sentences.tsv"), "w", encoding="utf-8") as fh:
        fh.write(
            "pair_id\tsource_sentence_id\tlanguage_pair\tsource_text\ttarget_text\tpos_tags\n"
        )
        for pair in pairs:
            fh.write(
                "\t".join(
                    [
                        pair.pair_id,
                        pair.source_sentence_id,
                        pair.language_pair,
                        " ".join(pair.source_tokens),
                        " ".join(pair.target_tokens),
                        " ".join(pair.pos_tags),
                    ]
                )
                + "\n"
            )

    config = {
        "paths": {
            "tables": ".",
            "dumps": "dumps",
            "frequency": "wordfreq.tsv",
            "output": None,
        },
        "schema": {"columns": {}},
        "folds": 10,
        "seed": seed,
        "n_perm": 1000,
        "alternative": "greater",
        "scopes": ["all", "aa-bb"],
        "jobs": 1,
    }
    config_path = os.path.join(root, "config.json")
    with open(config_path, "w", encoding="utf-8") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return config_path

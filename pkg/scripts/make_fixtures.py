#!/usr/bin/env python3
"""Regenerate the checked-in fixture dumps under tests/fixtures/dumps/.

Deterministic: same seeds give the same bytes. Run from the repo root
after changing the dump format or the synthetic generator, then commit
the result.
"""

import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from tradiff.dumps import dump_filename, write_dump, write_manifest
from tradiff.segments import SentencePair
from tradiff.synth import synthetic_dump
from tradiff.util import rng_substream

FIXTURE_PAIRS = [
    SentencePair(
        pair_id="fx00",
        source_tokens=("new", "societies", "tend", "to", "change", "fast"),
        target_tokens=("nye", "samfund", "plejer", "at", "forandre", "sig"),
        source_sentence_id="fs00",
        language_pair="en-da",
        pos_tags=("ADJ", "NOUN", "VERB", "PART", "VERB", "ADV"),
    ),
    SentencePair(
        pair_id="fx01",
        source_tokens=("the", "population", "grew"),
        target_tokens=("befolkningen", "voksede"),
        source_sentence_id="fs01",
        language_pair="en-da",
    ),
    SentencePair(
        pair_id="fx02",
        source_tokens=("results", "vary", "a", "lot", "between", "regions", "here"),
        target_tokens=("ergebnisse", "variieren", "stark", "zwischen", "regionen"),
        source_sentence_id="fs02",
        language_pair="en-de",
    ),
    SentencePair(
        pair_id="fx03",
        source_tokens=("one",),
        target_tokens=("en", "enkelt"),
        source_sentence_id="fs03",
        language_pair="en-da",
    ),
    SentencePair(
        pair_id="fx04",
        source_tokens=("translators", "linger", "on", "difficult", "phrases"),
        target_tokens=("oversættere", "dvæler", "ved", "svære", "fraser"),
        source_sentence_id="fs04",
        language_pair="en-da",
    ),
]


def main() -> None:
    out = os.path.join(os.path.dirname(__file__), "..", "tests", "fixtures", "dumps")
    os.makedirs(out, exist_ok=True)
    entries = []
    records = []
    for pair in FIXTURE_PAIRS:
        dump = synthetic_dump(pair, rng_substream(99, "fixture", pair.pair_id))
        write_dump(dump, os.path.join(out, dump_filename(pair.pair_id)))
        entries.append({"pair_id": pair.pair_id, "file": dump_filename(pair.pair_id)})
        records.append(
            {
                "pair_id": pair.pair_id,
                "source_sentence_id": pair.source_sentence_id,
                "language_pair": pair.language_pair,
                "source_tokens": list(pair.source_tokens),
                "target_tokens": list(pair.target_tokens),
                "pos_tags": list(pair.pos_tags) if pair.pos_tags else None,
            }
        )
    import json

    with open(os.path.join(out, "pairs.jsonl"), "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")
    write_manifest(
        out,
        {
            "layers": 2,
            "heads": 2,
            "lm_model": "fixture-lm",
            "mt_model": "fixture-mt",
            "lm_tokenizer": "fixture",
            "mt_tokenizer": "fixture",
            "pairs": entries,
            "failures": [],
        },
    )
    print(f"wrote {len(entries)} fixture dumps to {out}")


if __name__ == "__main__":
    main()

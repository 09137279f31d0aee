"""Command line for batch exports.

Input is a tab-separated file with a header row and the columns
pair_id, src_lang, tgt_lang, source, target. Language codes must be
tokens the translation tokenizer knows (for NLLB-style models, codes
like ``eng_Latn``).
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

from .export import ExportError, ExportJob, PairEntry, run_export


def read_pairs(path: str) -> list:
    entries = []
    if not os.path.exists(path):
        raise ExportError(f"pairs file not found: {path}")
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        required = {"pair_id", "src_lang", "tgt_lang", "source", "target"}
        missing = required - set(reader.fieldnames or ())
        if missing:
            raise ExportError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            entries.append(
                PairEntry(
                    pair_id=row["pair_id"].strip(),
                    source=row["source"].strip(),
                    target=row["target"].strip(),
                    src_lang=row["src_lang"].strip(),
                    tgt_lang=row["tgt_lang"].strip(),
                )
            )
    if not entries:
        raise ExportError(f"{path}: no pairs")
    return entries


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mtdump",
        description="Dump LM/NMT log-probabilities and attention for sentence pairs.",
    )
    parser.add_argument("--pairs", required=True, help="tab-separated sentence pairs")
    parser.add_argument("--out", required=True, help="output dump directory")
    parser.add_argument("--lm-model", default="ai-forever/mGPT")
    parser.add_argument("--mt-model", default="facebook/nllb-200-distilled-600M")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--batch-size", type=int, default=1,
                        help="pairs per progress group (processing is per pair)")
    args = parser.parse_args(argv)

    try:
        job = ExportJob(
            pairs=read_pairs(args.pairs),
            out_dir=args.out,
            lm_model=args.lm_model,
            mt_model=args.mt_model,
            device=args.device,
            batch_size=args.batch_size,
        )
        manifest = run_export(job)
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(
        f"exported {len(manifest['pairs'])} pairs "
        f"({len(manifest['failures'])} failures) to {args.out}"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())

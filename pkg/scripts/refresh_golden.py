#!/usr/bin/env python3
"""Regenerate tests/fixtures/golden_summary.md from a fresh mini-corpus run.

Run after intentional changes to the mini-corpus, the pipeline outputs or
the report layout, then commit the result.
"""

import os
import shutil
import sys
import tempfile

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from tradiff.minicorpus import make_mini_corpus
from tradiff.pipeline import RunConfig, run_pipeline


def main() -> None:
    golden = os.path.join(
        os.path.dirname(__file__), "..", "tests", "fixtures", "golden_summary.md"
    )
    with tempfile.TemporaryDirectory() as td:
        cfg_path = make_mini_corpus(os.path.join(td, "corpus"), seed=2026)
        run_pipeline(RunConfig.load(cfg_path), os.path.join(td, "run"))
        shutil.copy(os.path.join(td, "run", "report", "summary.md"), golden)
    print(f"refreshed {os.path.normpath(golden)}")


if __name__ == "__main__":
    main()

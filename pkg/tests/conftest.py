import json
import os

import numpy as np
import pytest

from tradiff.dumps import DumpStore
from tradiff.minicorpus import make_mini_corpus
from tradiff.pipeline import RunConfig, run_pipeline
from tradiff.segments import SentencePair
from tradiff.synth import synthetic_dump

FIXTURE_DUMP_DIR = os.path.join(os.path.dirname(__file__), "fixtures", "dumps")


@pytest.fixture
def toy_pair():
    return SentencePair(
        pair_id="p1",
        source_tokens=("the", "societies", "tend", "to", "change"),
        target_tokens=("samfund", "plejer", "at", "forandre", "sig"),
        source_sentence_id="s1",
        language_pair="en-da",
        pos_tags=("DET", "NOUN", "VERB", "PART", "VERB"),
    )


@pytest.fixture
def toy_dump(toy_pair):
    return synthetic_dump(toy_pair, np.random.default_rng(7))


@pytest.fixture
def uniform_dump(toy_pair):
    return synthetic_dump(toy_pair, np.random.default_rng(7), uniform=True)


@pytest.fixture(scope="session")
def fixture_dumps():
    """Checked-in dumps plus their sentence pairs: [(pair, dump), ...]."""
    store = DumpStore(FIXTURE_DUMP_DIR)
    pairs = {}
    with open(os.path.join(FIXTURE_DUMP_DIR, "pairs.jsonl"), encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            pairs[rec["pair_id"]] = SentencePair(
                pair_id=rec["pair_id"],
                source_tokens=tuple(rec["source_tokens"]),
                target_tokens=tuple(rec["target_tokens"]),
                source_sentence_id=rec["source_sentence_id"],
                language_pair=rec["language_pair"],
                pos_tags=tuple(rec["pos_tags"]) if rec["pos_tags"] else None,
            )
    return [(pairs[pid], store.load(pid)) for pid in store.pair_ids()]


@pytest.fixture(scope="session")
def mini_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("minicorpus")
    return make_mini_corpus(root, seed=2026)


@pytest.fixture(scope="session")
def mini_run(mini_corpus, tmp_path_factory):
    """One full pipeline run over the bundled mini-corpus."""
    run_dir = tmp_path_factory.mktemp("run")
    cfg = RunConfig.load(mini_corpus)
    run_pipeline(cfg, run_dir)
    return str(run_dir), cfg


def brute_flow(A, frm, to):
    """Independent double-loop oracle for attentional flow."""
    total = 0.0
    for k in sorted(frm):
        for l in sorted(to):
            total += float(A[k - 1, l - 1])
    return total


def brute_entropy(A, frm, to):
    """Independent oracle: renormalize each row over `to`, sum entropies."""
    total = 0.0
    for k in sorted(frm):
        vec = [float(A[k - 1, l - 1]) for l in sorted(to)]
        mass = sum(vec)
        if mass <= 0:
            continue
        for v in vec:
            p = v / mass
            if p > 0:
                total -= p * np.log(p)
    return total

"""Acceptance suite: one test per release criterion.

Each test enforces its stated tolerance and prints one PASS line with the
measured quantity (visible with ``pytest -s``). The optional integration
test needs real study data and exporter dumps; it skips cleanly when the
environment does not provide them.
"""

import math
import os
import time

import numpy as np
import pandas as pd
import pytest

from conftest import brute_entropy, brute_flow
from tradiff.dumps import ROLE_BOS, ROLE_CONTENT, TokenLogProbs, TokenTrack
from tradiff.evaluation import (
    ModelSpec,
    correlations,
    cross_validate,
    delta_llh,
    paired_permutation_test,
)
from tradiff.features import PairFeatures, attn_entropy, flow, lm_surprisal, surprisal_sum
from tradiff.minicorpus import make_mini_corpus
from tradiff.pipeline import RunConfig, run_pipeline
from tradiff.regression import MixedEffectsRegressor, OLSRegressor
from tradiff.segments import SOURCE, TARGET, SegmentRef
from tradiff.synth import synthetic_dump
from tradiff.util import substream_seed


def _report(name: str, detail: str = "") -> None:
    print(f"\nACCEPTANCE [{name}]: PASS {detail}")


def _random_subset(rng, n: int, allow_empty: bool = False) -> frozenset:
    low = 0 if allow_empty else 1
    size = int(rng.integers(low, n + 1))
    return frozenset(int(v) + 1 for v in rng.choice(n, size=size, replace=False))


# ---------------------------------------------------------------------------
# Criterion 1: feature oracle equivalence


def test_feature_oracle_equivalence():
    t0 = time.monotonic()
    rng = np.random.default_rng(314)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 7))
        A = rng.dirichlet(np.ones(n), size=n)
        frm = _random_subset(rng, n, allow_empty=True)
        to = _random_subset(rng, n, allow_empty=True)
        worst = max(worst, abs(flow(A, frm, to) - brute_flow(A, frm, to)))
        worst = max(worst, abs(attn_entropy(A, frm, to) - brute_entropy(A, frm, to)))
    elapsed = time.monotonic() - t0
    assert worst <= 1e-10
    assert elapsed < 10.0
    _report("feature-oracle-equivalence",
            f"(1000 matrices, worst |diff| = {worst:.2e}, {elapsed:.1f}s)")


# ---------------------------------------------------------------------------
# Criterion 2: normalization identity and entropy bounds


def test_normalization_identity(toy_pair, uniform_dump):
    ctx = PairFeatures(toy_pair, uniform_dump)
    checked = 0
    m, n = len(toy_pair.source_tokens), len(toy_pair.target_tokens)
    for indices in [(1,), (2,), (m,), (1, 3), tuple(range(1, m + 1))]:
        feats = ctx.source_features(SegmentRef(side=SOURCE, indices=indices))
        us = ctx.subwords(SegmentRef(side=SOURCE, indices=indices))
        expect_zero = {
            "f_e_u_ctx": not (ctx.x - us),
            "f_e_ctx_u": not (ctx.x - us),
            "H_e_u_x": len(ctx.x) <= 1,
        }
        for name, value in feats.items():
            if expect_zero.get(name, False):
                assert value == 0.0, name
            else:
                assert abs(value - 1.0) <= 1e-9, (name, value)
            checked += 1
    for indices in [(1,), (2,), (n,), (1, 2), tuple(range(1, n + 1))]:
        seg = SegmentRef(side=TARGET, indices=indices)
        feats = ctx.target_features(seg)
        vs = ctx.subwords(seg)
        prefix = frozenset(p for p in ctx.y if p <= max(vs))
        expect_zero = {
            "f_d_v_ctx": not (prefix - vs),
            "H_d_v_prefix": len(prefix) <= 1,
            "H_c_v_x": len(ctx.x) <= 1,
        }
        for name, value in feats.items():
            if expect_zero.get(name, False):
                assert value == 0.0, name
            else:
                assert abs(value - 1.0) <= 1e-9, (name, value)
            checked += 1

    rng = np.random.default_rng(271)
    for _ in range(1000):
        k = int(rng.integers(1, 7))
        A = rng.dirichlet(np.ones(k), size=k)
        frm = _random_subset(rng, k)
        to = _random_subset(rng, k)
        H = attn_entropy(A, frm, to)
        assert 0.0 <= H <= len(frm) * math.log(max(len(to), 1)) + 1e-12
    _report("normalization-identity", f"({checked} feature values on the uniform dump)")


# ---------------------------------------------------------------------------
# Criterion 3: flow conservation on fixture dumps


def test_flow_conservation(fixture_dumps):
    worst = 0.0
    segments = 0
    for pair, dump in fixture_dumps:
        ctx = PairFeatures(pair, dump)
        full = frozenset(range(1, dump.s_full + 1))
        specials = full - ctx.x
        m = len(pair.source_tokens)
        candidates = [(i,) for i in range(1, m + 1)] + [tuple(range(1, m + 1))]
        if m >= 3:
            candidates.append((1, 3))
        for indices in candidates:
            us = ctx.subwords(SegmentRef(side=SOURCE, indices=indices))
            ubar = ctx.x - us
            enc = dump.enc_attn
            total = flow(enc, us, us) + flow(enc, us, ubar) + flow(enc, us, specials)
            worst = max(worst, float(np.abs(total - len(us)).max()))
            segments += 1
    assert worst <= 1e-6
    _report("flow-conservation",
            f"({segments} segments over {len(fixture_dumps)} dumps, worst = {worst:.2e})")


# ---------------------------------------------------------------------------
# Criterion 4: surprisal arithmetic


def test_surprisal_arithmetic(fixture_dumps):
    worst = 0.0
    for pair, dump in fixture_dumps:
        ctx = PairFeatures(pair, dump)
        for side, track_probs in ((SOURCE, dump.lm_source), (TARGET, dump.lm_target)):
            words = len(pair.tokens(side))
            for indices in [(1,), tuple(range(1, words + 1))]:
                seg = SegmentRef(side=side, indices=indices)
                subs = ctx.subwords(seg, "lm")
                got = surprisal_sum(track_probs, subs)
                want = float(
                    -np.sum(track_probs.values[np.array(sorted(subs)) - 2].astype(float))
                )
                worst = max(worst, abs(got - want))
    # certain tokens: p=1 everywhere gives exactly zero
    track = TokenTrack(
        tokens=("<s>", "a", "b"),
        offsets=((0, 0), (0, 1), (2, 3)),
        roles=(ROLE_BOS, ROLE_CONTENT, ROLE_CONTENT),
    )
    sure = TokenLogProbs(track, np.zeros(2, dtype=np.float32))
    assert lm_surprisal(sure, {2, 3}) == 0.0
    assert worst <= 1e-9
    _report("surprisal-arithmetic", f"(worst sum mismatch = {worst:.2e}; p=1 gives exactly 0)")


# ---------------------------------------------------------------------------
# Criterion 5: OLS recovery


def test_ols_recovery():
    t0 = time.monotonic()
    n, p = 10_000, 5
    beta = np.array([0.5, 1.0, -2.0, 0.3, 0.0])
    hits = 0
    for seed in range(100):
        rng = np.random.default_rng(1000 + seed)
        X = np.column_stack([np.ones(n), rng.normal(size=(n, p - 1))])
        y = X @ beta + rng.normal(size=n)
        model = OLSRegressor().fit(X, y)
        hits += bool(np.all(np.abs(model.coef_ - beta) <= 3 * model.se_))
    elapsed = time.monotonic() - t0
    assert hits >= 95
    assert elapsed < 30.0
    _report("ols-recovery", f"({hits}/100 seeds within 3 SE, {elapsed:.1f}s)")


# ---------------------------------------------------------------------------
# Criterion 6: mixed-model recovery


def _crossed(seed, n_lang=20, n_part=50, per_cell=200,
             s_lang=0.3, s_part=0.5, sigma=1.0):
    rng = np.random.default_rng(seed)
    lang = np.repeat(np.arange(n_lang), n_part * per_cell)
    part = np.tile(np.repeat(np.arange(n_part), per_cell), n_lang)
    n = len(lang)
    X = np.column_stack([np.ones(n), rng.normal(size=(n, 3))])
    beta = np.array([0.5, 0.3, -0.2, 0.1])
    y = (
        X @ beta
        + rng.normal(0, s_lang, n_lang)[lang]
        + rng.normal(0, s_part, n_part)[part]
        + rng.normal(0, sigma, n)
    )
    return X, y, lang.astype(str), part.astype(str)


def test_mixed_recovery():
    t0 = time.monotonic()
    errs = []
    for seed in range(20):
        X, y, lang, part = _crossed(2000 + seed)
        m = MixedEffectsRegressor().fit(X, y, {"lang": lang, "part": part})
        errs.append(
            (
                abs(math.sqrt(m.varcomps_["lang"]) - 0.3) / 0.3,
                abs(math.sqrt(m.varcomps_["part"]) - 0.5) / 0.5,
                abs(math.sqrt(m.sigma2_) - 1.0) / 1.0,
            )
        )
    med = np.median(np.array(errs), axis=0)
    assert np.all(med <= 0.15), med

    # degenerate case: group-centered noise has exactly zero group variance
    rng = np.random.default_rng(0)
    n = 3000
    lang_d = rng.integers(0, 5, n)
    part_d = rng.integers(0, 12, n)
    X = np.column_stack([np.ones(n), rng.normal(size=(n, 2))])
    y = X @ np.array([1.0, 0.4, -0.6]) + rng.normal(0, 1, n)
    for _ in range(60):
        resid = y - X @ np.linalg.lstsq(X, y, rcond=None)[0]
        for g in (lang_d, part_d):
            means = np.bincount(g, weights=resid) / np.bincount(g)
            y = y - means[g]
            resid = resid - means[g]
    m0 = MixedEffectsRegressor().fit(
        X, y, {"lang": lang_d.astype(str), "part": part_d.astype(str)}
    )
    ols = OLSRegressor().fit(X, y)
    coef_gap = float(np.abs(m0.coef_ - ols.coef_).max())
    elapsed = time.monotonic() - t0
    assert coef_gap <= 1e-6
    assert elapsed < 300.0
    _report(
        "mixed-recovery",
        f"(median rel errs lang/part/resid = {med[0]:.3f}/{med[1]:.3f}/{med[2]:.3f}, "
        f"degenerate coef gap = {coef_gap:.1e}, {elapsed:.1f}s)",
    )


# ---------------------------------------------------------------------------
# Criterion 7: delta-llh protocol soundness


def _protocol_sim(seed: int, effect: float) -> tuple[float, float]:
    rng = np.random.default_rng(seed)
    n_sent, per = 60, 6
    n = n_sent * per
    sent = np.repeat(np.arange(n_sent), per)
    frame = pd.DataFrame(
        {
            "source_sentence_id": [f"s{v}" for v in sent],
            "c1": rng.normal(size=n),
            "c2": rng.normal(size=n),
            "c3": rng.normal(size=n),
            "feat": rng.normal(size=n),
        }
    )
    frame["y"] = (
        0.2
        + 0.3 * frame["c1"]
        - 0.2 * frame["c2"]
        + 0.1 * frame["c3"]
        + effect * frame["feat"]
        + rng.normal(0, 1.0, n)
    )
    folds = sent % 10
    base = cross_validate(frame, ModelSpec("y", ("c1", "c2", "c3"), kind="ols"), folds)
    ext = cross_validate(
        frame, ModelSpec("y", ("c1", "c2", "c3", "feat"), kind="ols"), folds
    )
    d = delta_llh(ext.llh, base.llh)
    p = paired_permutation_test(
        d.deltas, n_perm=1000, seed=substream_seed(seed, "protocol-perm")
    )
    return d.mean, p


def test_dllh_protocol_power():
    t0 = time.monotonic()
    planted_hits = 0
    for i in range(50):
        mean, p = _protocol_sim(3000 + i, effect=0.3)
        planted_hits += bool(mean > 0 and p < 0.05)
    elapsed = time.monotonic() - t0
    assert planted_hits >= 45
    assert elapsed < 600.0
    _report("dllh-protocol-power", f"({planted_hits}/50 planted effects detected, {elapsed:.1f}s)")


def test_dllh_protocol_type1():
    """Null-feature rejection rate and test calibration.

    The defensible parts hold: the protocol never rejects a null feature
    above the nominal rate, and the sign-flip test is calibrated at its
    own null (symmetric deltas). The literal [0.02, 0.09] band applied to
    the nested-null protocol cannot hold: one extra parameter shifts
    held-out deltas about half a flip-SD negative (the overfitting
    penalty), so the directional test is structurally conservative there.
    """
    t0 = time.monotonic()
    null_ps = []
    for i in range(200):
        _, p = _protocol_sim(4000 + i, effect=0.0)
        null_ps.append(p)
    rate = float(np.mean(np.asarray(null_ps) < 0.05))
    assert rate <= 0.09  # never anti-conservative

    # calibration at the test's own null: symmetric zero-mean deltas
    # (the test statistic is scale-invariant)
    from scipy.stats import kstest

    rng = np.random.default_rng(99)
    sym_ps = []
    for i in range(200):
        deltas = rng.normal(0.0, 1.0, 360)
        sym_ps.append(
            paired_permutation_test(deltas, n_perm=1000, seed=substream_seed(i, "sym"))
        )
    sym_rate = float(np.mean(np.asarray(sym_ps) < 0.05))
    ks = kstest(sym_ps, "uniform").statistic
    assert 0.02 <= sym_rate <= 0.09
    assert ks < 0.1
    elapsed = time.monotonic() - t0
    assert elapsed < 600.0

    if not 0.02 <= rate <= 0.09:
        print(
            f"\nACCEPTANCE [dllh-type1-literal]: FAIL (protocol null rate = {rate:.4f}, "
            f"below the stated [0.02, 0.09]; symmetric-null rate = {sym_rate:.3f}, "
            f"KS = {ks:.3f}; see notes/decisions.md)"
        )
    else:
        _report("dllh-type1-literal", f"(rate {rate:.3f})")
    _report(
        "dllh-type1-defensible",
        f"(protocol null rate {rate:.4f} <= 0.09; symmetric-null rate {sym_rate:.3f} "
        f"in [0.02, 0.09], KS {ks:.3f}, {elapsed:.1f}s)",
    )
    # the literal lower bound, asserted as stated; see decisions ledger for
    # why a nested pure-noise feature cannot reach it
    assert 0.02 <= rate <= 0.09


# ---------------------------------------------------------------------------
# Criterion 8: permutation determinism and bounds


def test_permutation_determinism_and_bounds():
    rng = np.random.default_rng(55)
    deltas = rng.normal(size=300)
    p1 = paired_permutation_test(deltas, seed=7)
    p2 = paired_permutation_test(deltas, seed=7)
    assert p1 == p2
    assert 0.0 < p1 <= 1.0
    assert paired_permutation_test(np.zeros(100), seed=7) == 1.0
    _report("permutation-determinism", f"(p = {p1}, zeros give p = 1.0)")


# ---------------------------------------------------------------------------
# Criterion 9: end-to-end determinism


def _tree_bytes(root: str) -> dict:
    out = {}
    for dirpath, _, files in os.walk(root):
        for fname in files:
            path = os.path.join(dirpath, fname)
            with open(path, "rb") as fh:
                out[os.path.relpath(path, root)] = fh.read()
    return out


def test_end_to_end_determinism(mini_corpus, mini_run, tmp_path):
    run_a, cfg = mini_run
    run_b = tmp_path / "run_b"
    run_c = tmp_path / "run_c"
    run_pipeline(RunConfig.load(mini_corpus), run_b, jobs=1)
    run_pipeline(RunConfig.load(mini_corpus), run_c, jobs=4)
    a, b, c = _tree_bytes(run_a), _tree_bytes(str(run_b)), _tree_bytes(str(run_c))
    assert sorted(a) == sorted(b) == sorted(c)
    diff_ab = [k for k in a if a[k] != b[k]]
    diff_ac = [k for k in a if a[k] != c[k]]
    assert diff_ab == [], diff_ab
    assert diff_ac == [], diff_ac
    _report("end-to-end-determinism",
            f"({len(a)} files byte-identical across two runs and jobs=1 vs jobs=4)")


# ---------------------------------------------------------------------------
# Criterion 10 (optional): real-data integration


TPRDB_DIR = os.environ.get("TRADIFF_TPRDB_DIR")
TPRDB_DUMPS = os.environ.get("TRADIFF_TPRDB_DUMPS")
TPRDB_FREQ = os.environ.get("TRADIFF_TPRDB_FREQ")


@pytest.mark.skipif(
    not (TPRDB_DIR and TPRDB_DUMPS and TPRDB_FREQ),
    reason="needs CRITT TPR-DB tables, exporter dumps and a frequency file "
    "(set TRADIFF_TPRDB_DIR, TRADIFF_TPRDB_DUMPS, TRADIFF_TPRDB_FREQ)",
)
def test_integration_tprdb(tmp_path):
    cfg = RunConfig(
        tables_dir=TPRDB_DIR,
        dumps_dir=TPRDB_DUMPS,
        frequency_file=TPRDB_FREQ,
        seed=2026,
    )
    run_dir = tmp_path / "tprdb_run"
    run_pipeline(cfg, run_dir)
    table = pd.read_csv(run_dir / "extract" / "features.tsv", sep="\t",
                        dtype={"language_pair": str})

    def count(lang, level, measure):
        sub = table[
            (table["language_pair"] == lang)
            & (table["level"] == level)
            & table[measure].notna()
        ]
        return len(sub)

    # per-measure sample counts from the published study inventory
    assert count("en-da", "word", "dur") == 6176
    assert count("en-de", "word", "trts") == 3691
    assert count("pt-zh", "word", "dur") == 203

    vif = pd.read_csv(run_dir / "evaluate" / "vif.tsv", sep="\t")
    assert vif["vif"].max() <= 3.0

    coef = pd.read_csv(run_dir / "evaluate" / "coefficients.tsv", sep="\t")
    for feature in ("s_lm", "s_mt"):
        own = coef[
            (coef["measure"] == "dur")
            & (coef["model"] == feature)
            & (coef["term"] == feature)
        ]
        assert (own["coef_mean"] > 0).all()

    words = table[(table["side"] == "target") & (table["level"] == "word")]
    pairs = words[["s_lm", "s_mt"]].dropna()
    r, _ = correlations(pairs["s_lm"], pairs["s_mt"])
    assert r < 0 and abs(r) < 0.2
    _report("tprdb-integration", f"(counts matched, max VIF {vif['vif'].max():.2f}, r = {r:.3f})")

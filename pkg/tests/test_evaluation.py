import numpy as np
import pandas as pd
import pytest

from tradiff.errors import ContractError, DomainError, FoldError
from tradiff.evaluation import (
    ModelSpec,
    correlations,
    cross_validate,
    delta_llh,
    paired_permutation_test,
    pos_group_summary,
    vif,
)
from tradiff.regression import DesignMatrix


def _table(seed=0, n_sentences=40, per_sentence=5, noise_feature=False):
    rng = np.random.default_rng(seed)
    rows = []
    for s in range(n_sentences):
        for _ in range(per_sentence):
            rows.append(
                {
                    "source_sentence_id": f"s{s}",
                    "language_pair": f"lp{s % 2}",
                    "participant": f"P{rng.integers(0, 4)}",
                    "ctl_a": rng.normal(),
                    "ctl_b": rng.normal(),
                    "feat": rng.normal(),
                }
            )
    frame = pd.DataFrame(rows)
    effect = 0.0 if noise_feature else 0.5
    frame["y"] = (
        1.0
        + 0.4 * frame["ctl_a"]
        - 0.2 * frame["ctl_b"]
        + effect * frame["feat"]
        + rng.normal(0, 1, len(frame))
    )
    sent_fold = {f"s{s}": s % 10 for s in range(n_sentences)}
    folds = frame["source_sentence_id"].map(sent_fold).to_numpy()
    return frame, folds


def test_cross_validate_coverage():
    frame, folds = _table()
    spec = ModelSpec(response="y", predictors=("ctl_a", "ctl_b"), kind="mixed")
    result = cross_validate(frame, spec, folds)
    assert len(result.llh) == len(frame)
    assert np.isfinite(result.llh).all()
    assert len(result.fits) == 10


def test_cross_validate_reproducible():
    frame, folds = _table()
    spec = ModelSpec(response="y", predictors=("ctl_a", "ctl_b"), kind="ols")
    a = cross_validate(frame, spec, folds)
    b = cross_validate(frame, spec, folds)
    np.testing.assert_array_equal(a.llh, b.llh)


def test_cross_validate_fold_totals_sum():
    frame, folds = _table()
    spec = ModelSpec(response="y", predictors=("ctl_a", "ctl_b"), kind="ols")
    result = cross_validate(frame, spec, folds)
    total = sum(result.fold_total(f) for f in range(10))
    assert total == pytest.approx(result.llh.sum())


def test_cross_validate_sentence_overlap_guard():
    frame, _ = _table()
    # row-level folds split sentences across train and test
    bad_folds = np.arange(len(frame)) % 10
    spec = ModelSpec(response="y", predictors=("ctl_a",), kind="ols")
    with pytest.raises(FoldError, match="share sentences"):
        cross_validate(frame, spec, bad_folds)


def test_delta_llh_identical_models():
    llh = np.array([-1.0, -2.0, -0.5])
    d = delta_llh(llh, llh)
    assert d.mean == 0.0
    assert np.all(d.deltas == 0.0)


def test_delta_llh_known_mean():
    d = delta_llh([-1.0, -2.0], [-2.0, -4.0], folds=[0, 1])
    assert d.mean == pytest.approx(1.5)
    assert d.fold_means == {0: 1.0, 1: 2.0}
    assert d.to_record()["total_delta"] == pytest.approx(3.0)


def test_delta_llh_length_mismatch():
    with pytest.raises(ContractError):
        delta_llh([-1.0], [-1.0, -2.0])


def test_noise_feature_delta_typically_nonpositive():
    """Adding pure noise usually hurts held-out likelihood (overfitting).

    Small training folds make the penalty visible above sampling noise.
    """
    means = []
    for seed in range(40):
        frame, folds = _table(
            seed=seed, n_sentences=20, per_sentence=2, noise_feature=True
        )
        base = cross_validate(frame, ModelSpec("y", ("ctl_a",), kind="ols"), folds)
        ext = cross_validate(
            frame, ModelSpec("y", ("ctl_a", "feat"), kind="ols"), folds
        )
        means.append(delta_llh(ext.llh, base.llh).mean)
    assert np.mean(means) <= 0.0
    assert np.mean(np.array(means) <= 0) >= 0.6


# ---------------------------------------------------------------------------
# Permutation test


def test_permutation_all_zero_deltas():
    assert paired_permutation_test(np.zeros(50), seed=1) == 1.0


def test_permutation_all_positive_deltas():
    p = paired_permutation_test(np.ones(50), n_perm=1000, seed=1)
    assert p == pytest.approx(1 / 1001)


def test_permutation_deterministic_and_bounded():
    rng = np.random.default_rng(3)
    deltas = rng.normal(size=200)
    p1 = paired_permutation_test(deltas, seed=42)
    p2 = paired_permutation_test(deltas, seed=42)
    assert p1 == p2
    assert 0.0 < p1 <= 1.0
    assert paired_permutation_test(deltas, seed=43) != p1 or True  # different stream ok


def test_permutation_two_sided_option():
    deltas = -np.ones(50)
    assert paired_permutation_test(deltas, seed=1) == pytest.approx(1.0)
    assert paired_permutation_test(deltas, seed=1, alternative="two-sided") == (
        pytest.approx(1 / 1001)
    )


def test_permutation_empty_rejected():
    with pytest.raises(DomainError):
        paired_permutation_test([])


def test_permutation_calibration():
    """Symmetric zero-mean deltas reject at close to the nominal rate."""
    rng = np.random.default_rng(11)
    rejections = 0
    reps = 200
    for i in range(reps):
        deltas = rng.normal(0, 1, 80)
        p = paired_permutation_test(deltas, n_perm=200, seed=1000 + i)
        rejections += p < 0.05
    assert 0.02 <= rejections / reps <= 0.09


# ---------------------------------------------------------------------------
# VIF


def _design_of(X, columns):
    return DesignMatrix(X=X, y=np.zeros(len(X)), columns=tuple(columns))


def test_vif_orthogonal_predictors():
    n = 400
    t = np.arange(n)
    a = np.where(t % 2 == 0, 1.0, -1.0)
    b = np.where((t // 2) % 2 == 0, 1.0, -1.0)
    X = np.column_stack([np.ones(n), a, b])
    out = vif(_design_of(X, ["intercept", "a", "b"]))
    assert out["a"] == pytest.approx(1.0, abs=1e-10)
    assert out["b"] == pytest.approx(1.0, abs=1e-10)


def test_vif_duplicated_predictor_infinite():
    rng = np.random.default_rng(5)
    x = rng.normal(size=100)
    X = np.column_stack([np.ones(100), x, x, rng.normal(size=100)])
    out = vif(_design_of(X, ["intercept", "a", "a_copy", "b"]))
    assert np.isinf(out["a"])
    assert np.isinf(out["a_copy"])
    assert np.isfinite(out["b"])


def test_vif_needs_two_predictors():
    with pytest.raises(DomainError):
        vif(_design_of(np.ones((10, 2)), ["intercept", "a"]))


# ---------------------------------------------------------------------------
# Correlations


def test_correlation_perfect():
    x = np.arange(10.0)
    r, p = correlations(x, x)
    assert r == pytest.approx(1.0)
    assert p == 0.0
    r, _ = correlations(x, -x)
    assert r == pytest.approx(-1.0)


def test_correlation_matches_brute_force():
    rng = np.random.default_rng(8)
    x = rng.normal(size=60)
    y = 0.3 * x + rng.normal(size=60)
    r, p = correlations(x, y)
    want = float(np.corrcoef(x, y)[0, 1])
    assert r == pytest.approx(want, abs=1e-12)
    from scipy import stats as sps

    t = want * np.sqrt(58 / (1 - want**2))
    assert p == pytest.approx(2 * sps.t.sf(abs(t), df=58), abs=1e-12)


def test_correlation_spearman_is_rank_pearson():
    rng = np.random.default_rng(9)
    x = rng.normal(size=40)
    y = np.exp(x) + rng.normal(scale=0.1, size=40)
    r, _ = correlations(x, y, method="spearman")
    from scipy import stats as sps

    assert r == pytest.approx(sps.spearmanr(x, y).statistic, abs=1e-12)


def test_correlation_zero_variance_undefined():
    with pytest.raises(DomainError):
        correlations(np.ones(10), np.arange(10.0))


def test_correlation_needs_three_points():
    with pytest.raises(DomainError):
        correlations([1.0, 2.0], [3.0, 4.0])


# ---------------------------------------------------------------------------
# POS summaries


def test_pos_summary_exact_means():
    frame = pd.DataFrame(
        {
            "pos_tag": ["NOUN", "NOUN", "DET", "DET"],
            "trts": [5.0, 7.0, 1.0, 3.0],
            "s_lm": [2.0, 4.0, 0.5, 1.5],
        }
    )
    out = pos_group_summary(frame, ["trts", "s_lm"], seed=0)
    assert list(out["pos"]) == ["NOUN", "DET"]  # sorted by difficulty
    noun = out[out["pos"] == "NOUN"].iloc[0]
    assert noun["trts_mean"] == pytest.approx(6.0)
    assert noun["s_lm_mean"] == pytest.approx(3.0)
    assert noun["trts_lo"] <= noun["trts_mean"] <= noun["trts_hi"]


def test_pos_summary_single_row_degenerate():
    frame = pd.DataFrame({"pos_tag": ["X", "Y", "Y"], "trts": [1.0, 2.0, 4.0]})
    out = pos_group_summary(frame, ["trts"], seed=0)
    row = out[out["pos"] == "X"].iloc[0]
    assert bool(row["degenerate_ci"])
    assert row["trts_lo"] == row["trts_hi"] == row["trts_mean"]


def test_pos_summary_empty_rejected():
    frame = pd.DataFrame({"pos_tag": [None, None], "trts": [1.0, 2.0]})
    with pytest.raises(DomainError):
        pos_group_summary(frame, ["trts"])


def test_pos_summary_deterministic():
    rng = np.random.default_rng(12)
    frame = pd.DataFrame(
        {
            "pos_tag": rng.choice(["NOUN", "VERB", "DET"], size=60),
            "trts": rng.normal(5, 1, 60),
        }
    )
    a = pos_group_summary(frame, ["trts"], seed=7)
    b = pos_group_summary(frame, ["trts"], seed=7)
    pd.testing.assert_frame_equal(a, b)

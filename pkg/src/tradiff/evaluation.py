"""Cross-validated held-out log-likelihood comparison and significance.

A feature's predictive power is the per-sample difference in held-out
log-likelihood between a model with the feature and a baseline without
it, accumulated over a sentence-level k-fold split. Significance comes
from a paired permutation test realized as random sign flips of the
per-sample deltas (the matched-pairs null), one-sided by default.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import stats as sps

from .errors import ContractError, DomainError, FoldError
from .regression import (
    DesignMatrix,
    FitResult,
    design_from_frame,
    fit_mixed,
    fit_ols,
    heldout_loglik,
    standardize,
)
from .util import rng_substream

MIXED_GROUPS = ("language_pair", "participant")


@dataclass(frozen=True)
class ModelSpec:
    """One model family: response, predictors and the estimator kind."""

    response: str
    predictors: tuple[str, ...]
    kind: str = "mixed"  # "mixed" or "ols"
    groups: tuple[str, ...] = MIXED_GROUPS

    def __post_init__(self):
        if self.kind not in ("mixed", "ols"):
            raise ContractError(f"unknown model kind {self.kind!r}")


@dataclass
class CVResult:
    """Per-sample held-out log-likelihoods, aligned with the input rows."""

    llh: np.ndarray
    folds: np.ndarray
    fits: list = field(default_factory=list)

    def fold_total(self, fold: int) -> float:
        return float(self.llh[self.folds == fold].sum())


def cross_validate(frame: pd.DataFrame, spec: ModelSpec, folds: np.ndarray,
                   sentence_col: str = "source_sentence_id") -> CVResult:
    """Train on k-1 folds, score the held-out fold, for every fold.

    Scaling is fit on each training split and applied to its held-out
    rows. Each row is scored exactly once. Folds were assigned per
    sentence; a train/test sentence overlap aborts the run.
    """
    folds = np.asarray(folds)
    if len(folds) != len(frame):
        raise ContractError("fold labels do not match the table")
    group_cols = spec.groups if spec.kind == "mixed" else ()
    design = design_from_frame(
        frame, spec.response, spec.predictors, group_cols=group_cols,
        sentence_col=sentence_col if sentence_col in frame.columns else None,
    )
    llh = np.full(len(frame), np.nan)
    fits = []
    for fold in sorted(set(folds.tolist())):
        test_mask = folds == fold
        train_mask = ~test_mask
        if not train_mask.any():
            raise FoldError(f"fold {fold}: empty training split")
        train = design.take(train_mask)
        test = design.take(test_mask)
        if design.sentence_ids is not None:
            overlap = set(train.sentence_ids) & set(test.sentence_ids)
            if overlap:
                raise FoldError(
                    f"fold {fold}: train/test share sentences {sorted(overlap)[:5]}"
                )
        train_std, scaling = standardize(train)
        test_std = scaling.apply(test)
        fit = fit_mixed(train_std) if spec.kind == "mixed" else fit_ols(train_std)
        llh[test_mask] = heldout_loglik(fit, test_std)
        fits.append(fit)
    if np.isnan(llh).any():
        raise FoldError("fold assignment does not cover every observation")
    return CVResult(llh=llh, folds=folds, fits=fits)


@dataclass
class DeltaLLH:
    """Paired held-out log-likelihood difference for one comparison cell."""

    feature: str
    measure: str
    level: str
    scope: str
    deltas: np.ndarray
    mean: float
    fold_means: dict
    p_value: float | None = None
    n: int = 0

    def to_record(self) -> dict:
        return {
            "feature": self.feature,
            "measure": self.measure,
            "level": self.level,
            "scope": self.scope,
            "mean_delta": float(self.mean),
            "total_delta": float(self.deltas.sum()),
            "n": int(self.n),
            "p_value": None if self.p_value is None else float(self.p_value),
            "fold_means": {str(k): float(v) for k, v in sorted(self.fold_means.items())},
        }


def delta_llh(model_llh, baseline_llh, folds=None, feature: str = "",
              measure: str = "", level: str = "", scope: str = "") -> DeltaLLH:
    """Per-sample deltas (model minus baseline) with fold-wise means."""
    a = np.asarray(model_llh, dtype=float)
    b = np.asarray(baseline_llh, dtype=float)
    if a.shape != b.shape:
        raise ContractError(f"paired llh vectors differ in length: {a.shape} vs {b.shape}")
    deltas = a - b
    fold_means = {}
    if folds is not None:
        folds = np.asarray(folds)
        fold_means = {
            int(f): float(deltas[folds == f].mean()) for f in sorted(set(folds.tolist()))
        }
    return DeltaLLH(
        feature=feature, measure=measure, level=level, scope=scope,
        deltas=deltas, mean=float(deltas.mean()), fold_means=fold_means,
        n=len(deltas),
    )


def paired_permutation_test(deltas, n_perm: int = 1000, seed: int = 0,
                            alternative: str = "greater") -> float:
    """Sign-flip permutation p-value for the mean of paired deltas.

    One-sided by default (is the mean delta above the flip null?); the
    +1 smoothing keeps p strictly positive.
    """
    deltas = np.asarray(deltas, dtype=float)
    if deltas.size == 0:
        raise DomainError("permutation test needs at least one delta")
    if alternative not in ("greater", "two-sided"):
        raise DomainError(f"unknown alternative {alternative!r}")
    rng = rng_substream(seed, "paired-permutation")
    observed = deltas.mean()
    n = deltas.size
    exceed = 0
    block = max(1, min(n_perm, 8_000_000 // max(n, 1)))
    done = 0
    while done < n_perm:
        b = min(block, n_perm - done)
        signs = rng.integers(0, 2, size=(b, n)) * 2 - 1
        perm_means = (signs * deltas).mean(axis=1)
        if alternative == "greater":
            exceed += int((perm_means >= observed).sum())
        else:
            exceed += int((np.abs(perm_means) >= abs(observed)).sum())
        done += b
    return (1 + exceed) / (n_perm + 1)


def vif(design: DesignMatrix) -> dict:
    """Variance inflation factor per predictor (intercept excluded).

    Each predictor is regressed on the others; perfect collinearity is
    reported as ``inf`` rather than raised.
    """
    names = design.columns[1:]
    if len(names) < 2:
        raise DomainError("VIF needs at least two predictors")
    X = design.X
    out = {}
    for j, name in enumerate(names, start=1):
        target = X[:, j]
        others = np.delete(X, j, axis=1)
        coef, _, _, _ = np.linalg.lstsq(others, target, rcond=None)
        resid = target - others @ coef
        tss = float(((target - target.mean()) ** 2).sum())
        if tss <= 0:
            out[name] = float("inf")
            continue
        r2 = 1.0 - float(resid @ resid) / tss
        out[name] = float("inf") if r2 >= 1.0 - 1e-12 else 1.0 / (1.0 - r2)
    return out


VIF_WARN_THRESHOLD = 2.5


def correlations(x, y, method: str = "pearson") -> tuple[float, float]:
    """Correlation coefficient with a two-sided t-approximation p-value."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ContractError("correlation needs two equal-length vectors")
    n = x.size
    if n < 3:
        raise DomainError("correlation needs at least 3 points")
    if method == "spearman":
        x = sps.rankdata(x)
        y = sps.rankdata(y)
    elif method != "pearson":
        raise DomainError(f"unknown correlation method {method!r}")
    sx = x.std()
    sy = y.std()
    if sx == 0 or sy == 0:
        raise DomainError("correlation undefined for a zero-variance vector")
    r = float(((x - x.mean()) * (y - y.mean())).mean() / (sx * sy))
    r = max(-1.0, min(1.0, r))
    if abs(r) == 1.0:
        return r, 0.0
    t = r * np.sqrt((n - 2) / (1.0 - r * r))
    p = 2.0 * float(sps.t.sf(abs(t), df=n - 2))
    return r, p


def pos_group_summary(frame: pd.DataFrame, value_cols, tag_col: str = "pos_tag",
                      difficulty_col: str | None = None, n_boot: int = 1000,
                      seed: int = 0) -> pd.DataFrame:
    """Per-POS means of difficulty and predictors with bootstrap CIs.

    Rows without a tag are ignored; tags are sorted by mean difficulty
    (descending). Single-row groups get a degenerate CI and a flag.
    """
    value_cols = list(value_cols)
    difficulty_col = difficulty_col or value_cols[0]
    tagged = frame[frame[tag_col].notna() & (frame[tag_col] != "")]
    if tagged.empty:
        raise DomainError("no tagged observations; POS summary would be empty")
    records = []
    for tag, group in tagged.groupby(tag_col):
        rec = {"pos": tag, "n": len(group), "degenerate_ci": len(group) < 2}
        for col in value_cols:
            values = group[col].to_numpy(dtype=float)
            values = values[np.isfinite(values)]
            if values.size == 0:
                rec[f"{col}_mean"] = np.nan
                rec[f"{col}_lo"] = np.nan
                rec[f"{col}_hi"] = np.nan
                continue
            rec[f"{col}_mean"] = float(values.mean())
            if values.size < 2:
                rec[f"{col}_lo"] = rec[f"{col}_hi"] = float(values.mean())
                continue
            rng = rng_substream(seed, "pos-bootstrap", str(tag), col)
            idx = rng.integers(0, values.size, size=(n_boot, values.size))
            boots = values[idx].mean(axis=1)
            rec[f"{col}_lo"] = float(np.percentile(boots, 2.5))
            rec[f"{col}_hi"] = float(np.percentile(boots, 97.5))
        records.append(rec)
    out = pd.DataFrame.from_records(records)
    return out.sort_values(
        f"{difficulty_col}_mean", ascending=False, kind="mergesort"
    ).reset_index(drop=True)

"""Linear models for duration prediction: OLS and crossed random intercepts.

The mixed model maximizes the marginal Gaussian likelihood (ML, not REML:
the evaluation compares held-out predictive likelihoods). Fixed effects
and the residual variance are profiled out, leaving a bounded quasi-Newton
search over log variance ratios. Everything runs on sufficient statistics
(cross-products of X, y and the group indicators), so a fit costs
O(n p^2) once plus O(q^3) per likelihood evaluation regardless of sample
size.

Variance components can sit on the boundary: every subset of factors is
refit and the best likelihood wins, with ties (within numerical
tolerance) resolved toward fewer factors, so a zero-variance factor
yields exactly the OLS solution.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.optimize import minimize
from sklearn.base import BaseEstimator

from .errors import ConfigError, ContractError, NumericalError

_LOG_GAMMA_BOUNDS = (-20.0, 20.0)
_LOG2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# Design matrices


@dataclass
class DesignMatrix:
    """Rows = observations; columns = intercept + predictors.

    ``groups`` carries random-effect factor labels; ``sentence_ids`` rides
    along for the train/test overlap guard in cross-validation.
    """

    X: np.ndarray
    y: np.ndarray
    columns: tuple[str, ...]
    groups: dict = field(default_factory=dict)
    sentence_ids: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise ContractError("X and y shapes disagree")
        if len(self.columns) != self.X.shape[1]:
            raise ContractError("column names do not match X width")
        if not np.isfinite(self.X).all() or not np.isfinite(self.y).all():
            raise ContractError("design matrix contains missing or non-finite values")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def take(self, mask: np.ndarray) -> "DesignMatrix":
        return DesignMatrix(
            X=self.X[mask],
            y=self.y[mask],
            columns=self.columns,
            groups={k: np.asarray(v)[mask] for k, v in self.groups.items()},
            sentence_ids=None if self.sentence_ids is None else self.sentence_ids[mask],
        )


def design_from_frame(frame, response: str, predictors, group_cols=(),
                      sentence_col: str | None = None) -> DesignMatrix:
    """Build an intercept-plus-predictors design from a feature table."""
    predictors = list(predictors)
    cols = [response] + predictors
    missing = [c for c in cols if c not in frame.columns]
    if missing:
        raise ContractError(f"feature table lacks columns {missing}")
    sub = frame[cols].to_numpy(dtype=float)
    if not np.isfinite(sub).all():
        raise ContractError(f"missing values in {cols}; filter rows before building a design")
    X = np.column_stack([np.ones(len(sub)), sub[:, 1:]])
    return DesignMatrix(
        X=X,
        y=sub[:, 0],
        columns=tuple(["intercept"] + predictors),
        groups={g: frame[g].to_numpy() for g in group_cols},
        sentence_ids=None if sentence_col is None else frame[sentence_col].to_numpy(),
    )


@dataclass(frozen=True)
class Scaling:
    """Train-fold means/sds for the non-intercept columns."""

    columns: tuple[str, ...]
    means: np.ndarray
    sds: np.ndarray

    def apply(self, dm: DesignMatrix) -> DesignMatrix:
        if dm.columns != self.columns:
            raise ContractError(f"columns {dm.columns} do not match scaling {self.columns}")
        X = dm.X.copy()
        X[:, 1:] = (X[:, 1:] - self.means) / self.sds
        return DesignMatrix(X=X, y=dm.y, columns=dm.columns, groups=dm.groups,
                            sentence_ids=dm.sentence_ids)


def standardize(train: DesignMatrix, apply_to: DesignMatrix | None = None
                ) -> tuple[DesignMatrix, Scaling]:
    """Z-score predictors by train-fold statistics; intercept untouched."""
    if train.columns[0] != "intercept":
        raise ContractError("expected a leading intercept column")
    body = train.X[:, 1:]
    means = body.mean(axis=0)
    sds = body.std(axis=0)
    dead = [train.columns[1:][j] for j in np.nonzero(sds < 1e-12)[0]]
    if dead:
        raise ConfigError(f"zero-variance predictors: {dead}")
    scaling = Scaling(columns=train.columns, means=means, sds=sds)
    return scaling.apply(train if apply_to is None else apply_to), scaling


# ---------------------------------------------------------------------------
# Fit results


@dataclass
class FitResult:
    """Coefficients, variance components and diagnostics for one model fit."""

    kind: str
    columns: tuple[str, ...]
    coef: np.ndarray
    se: np.ndarray
    sigma2: float
    loglik: float
    varcomps: dict = field(default_factory=dict)
    intercepts: dict = field(default_factory=dict)
    dropped_factors: tuple[str, ...] = ()
    converged: bool = True
    n_iter: int = 0
    loglik_trace: tuple[float, ...] = ()

    def to_record(self) -> dict:
        return {
            "kind": self.kind,
            "columns": list(self.columns),
            "coef": [float(v) for v in self.coef],
            "se": [float(v) for v in self.se],
            "sigma2": float(self.sigma2),
            "loglik": float(self.loglik),
            "varcomps": {k: float(v) for k, v in sorted(self.varcomps.items())},
            "intercepts": {
                f: {str(k): float(v) for k, v in sorted(levels.items())}
                for f, levels in sorted(self.intercepts.items())
            },
            "dropped_factors": list(self.dropped_factors),
            "converged": self.converged,
            "n_iter": self.n_iter,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "FitResult":
        return cls(
            kind=rec["kind"],
            columns=tuple(rec["columns"]),
            coef=np.asarray(rec["coef"], dtype=float),
            se=np.asarray(rec["se"], dtype=float),
            sigma2=float(rec["sigma2"]),
            loglik=float(rec["loglik"]),
            varcomps=dict(rec["varcomps"]),
            intercepts={f: dict(v) for f, v in rec["intercepts"].items()},
            dropped_factors=tuple(rec["dropped_factors"]),
            converged=rec["converged"],
            n_iter=rec["n_iter"],
        )


def _gaussian_loglik(resid: np.ndarray, var: np.ndarray) -> np.ndarray:
    return -0.5 * (_LOG2PI + np.log(var) + resid * resid / var)


# ---------------------------------------------------------------------------
# Ordinary least squares


class OLSRegressor(BaseEstimator):
    """Least-squares fit with rank diagnostics and Gaussian scoring."""

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        n, p = X.shape
        if n <= p:
            raise NumericalError(f"need more rows ({n}) than columns ({p})")
        beta, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
        if rank < p:
            raise NumericalError(
                f"rank-deficient design; dependent columns: {_dependent_columns(X)}"
            )
        resid = y - X @ beta
        rss = float(resid @ resid)
        self.coef_ = beta
        self.n_, self.p_ = n, p
        self.sigma2_ = rss / (n - p)
        self.rss_ = rss
        xtx_inv = np.linalg.inv(X.T @ X)
        self.se_ = np.sqrt(np.maximum(np.diag(xtx_inv) * self.sigma2_, 0.0))
        return self

    def predict(self, X):
        return np.asarray(X, dtype=float) @ self.coef_

    def loglik(self, X, y) -> np.ndarray:
        """Per-sample Gaussian log density under the trained fit."""
        resid = np.asarray(y, dtype=float) - self.predict(X)
        return _gaussian_loglik(resid, np.full(len(resid), self.sigma2_))

    def marginal_loglik_ml(self) -> float:
        """Training Gaussian log-likelihood at the ML variance (RSS/n)."""
        s2 = max(self.rss_ / self.n_, 1e-300)
        return -0.5 * self.n_ * (_LOG2PI + 1.0 + math.log(s2))


def _dependent_columns(X: np.ndarray) -> list[int]:
    _, R, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = diag.max() * max(X.shape) * np.finfo(float).eps if diag.size else 0.0
    return sorted(int(piv[j]) for j in range(len(diag)) if diag[j] <= tol)


def fit_ols(design: DesignMatrix) -> FitResult:
    model = OLSRegressor().fit(design.X, design.y)
    return FitResult(
        kind="ols",
        columns=design.columns,
        coef=model.coef_,
        se=model.se_,
        sigma2=model.sigma2_,
        loglik=model.marginal_loglik_ml(),
    )


# ---------------------------------------------------------------------------
# Crossed random intercepts


class _MixedStats:
    """Sufficient statistics for the profiled marginal likelihood."""

    def __init__(self, X: np.ndarray, y: np.ndarray, factors: list):
        self.n, self.p = X.shape
        self.xtx = X.T @ X
        self.xty = X.T @ y
        self.yty = float(y @ y)
        self.names = [name for name, _, _ in factors]
        self.levels = [levels for _, levels, _ in factors]
        self.sizes = [len(levels) for _, levels, _ in factors]
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)]).astype(int)
        q = int(self.offsets[-1]) if self.sizes else 0
        self.q = q
        self.cux = np.zeros((q, self.p))
        self.cuy = np.zeros(q)
        self.cuu = np.zeros((q, q))
        codes = [c for _, _, c in factors]
        for a, ca in enumerate(codes):
            oa, qa = self.offsets[a], self.sizes[a]
            for j in range(self.p):
                self.cux[oa:oa + qa, j] = np.bincount(ca, weights=X[:, j], minlength=qa)
            self.cuy[oa:oa + qa] = np.bincount(ca, weights=y, minlength=qa)
            for b, cb in enumerate(codes):
                ob, qb = self.offsets[b], self.sizes[b]
                counts = np.bincount(ca * qb + cb, minlength=qa * qb).reshape(qa, qb)
                self.cuu[oa:oa + qa, ob:ob + qb] = counts

    def block(self, active) -> np.ndarray:
        if not active:
            return np.zeros(0, dtype=int)
        return np.concatenate(
            [np.arange(self.offsets[f], self.offsets[f] + self.sizes[f]) for f in active]
        )


def _profile(stats: _MixedStats, gammas: np.ndarray) -> dict:
    """Profiled quantities at fixed variance ratios gamma_f = sigma_f^2 / sigma^2."""
    active = [f for f, g in enumerate(gammas) if g > 0.0]
    n = stats.n
    idx = stats.block(active)
    if not active:
        beta = scipy.linalg.solve(stats.xtx, stats.xty, assume_a="pos")
        rss = stats.yty - float(beta @ stats.xty)
        logdet = 0.0
        blup = np.zeros(0)
    else:
        g = np.concatenate([np.full(stats.sizes[f], gammas[f]) for f in active])
        M = stats.cuu[np.ix_(idx, idx)] + np.diag(1.0 / g)
        try:
            cho = scipy.linalg.cho_factor(M)
        except scipy.linalg.LinAlgError as exc:
            raise NumericalError(f"singular random-effect system: {exc}") from exc
        minv_ux = scipy.linalg.cho_solve(cho, stats.cux[idx])
        minv_uy = scipy.linalg.cho_solve(cho, stats.cuy[idx])
        xvx = stats.xtx - stats.cux[idx].T @ minv_ux
        xvy = stats.xty - stats.cux[idx].T @ minv_uy
        yvy = stats.yty - float(stats.cuy[idx] @ minv_uy)
        beta = scipy.linalg.solve(xvx, xvy, assume_a="pos")
        rss = yvy - float(beta @ xvy)
        logdet = float(np.sum(np.log(g))) + 2.0 * float(np.sum(np.log(np.diag(cho[0]))))
        blup = scipy.linalg.cho_solve(cho, stats.cuy[idx] - stats.cux[idx] @ beta)
    sigma2 = max(rss / n, 1e-300)
    ll = -0.5 * (n * (_LOG2PI + 1.0) + n * math.log(sigma2) + logdet)
    return {
        "loglik": ll, "beta": beta, "sigma2": sigma2, "active": active,
        "blup": blup, "idx": idx, "gammas": np.asarray(gammas, dtype=float),
    }


class MixedEffectsRegressor(BaseEstimator):
    """ML fit of a Gaussian model with crossed random intercepts.

    ``fit`` takes ``groups`` as a mapping of factor name to per-row labels.
    Factors with fewer than two observed levels are dropped with a warning.
    """

    def __init__(self, tol: float = 1e-8, max_iter: int = 500):
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y, groups: dict):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        factors = []
        dropped = []
        for name, labels in groups.items():
            labels = np.asarray(labels)
            levels, codes = np.unique(labels, return_inverse=True)
            if len(levels) < 2:
                warnings.warn(f"random-effect factor {name!r} has <2 levels; dropped")
                dropped.append(name)
                continue
            factors.append((name, levels, codes))
        self.dropped_factors_ = tuple(dropped)
        stats = _MixedStats(X, y, factors)
        self._stats = stats
        F = len(factors)

        # Smallest subsets first: on numerical ties the boundary (fewer
        # factors) wins, so degenerate variances reduce exactly to OLS.
        best, trace, n_iter = None, (), 0
        for subset in _subsets(F):
            result, sub_trace, sub_iter = self._optimize_subset(stats, F, subset)
            if best is None or result["loglik"] > best["loglik"] + 1e-10 * (
                1.0 + abs(best["loglik"])
            ):
                best, trace, n_iter = result, sub_trace, sub_iter
        self._finalize(stats, best)
        self.loglik_trace_ = trace
        self.n_iter_ = n_iter
        self.converged_ = True
        return self

    def _optimize_subset(self, stats, F: int, subset: tuple):
        """Maximize the profiled likelihood over one subset of active factors."""
        if not subset:
            res = _profile(stats, np.zeros(F))
            return res, (res["loglik"],), 0

        def expand(theta: np.ndarray) -> np.ndarray:
            g = np.zeros(F)
            g[list(subset)] = np.exp(theta)
            return g

        trace = [_profile(stats, expand(np.zeros(len(subset))))["loglik"]]

        def objective(theta):
            return -_profile(stats, expand(theta))["loglik"]

        def callback(theta):
            trace.append(_profile(stats, expand(theta))["loglik"])

        res = minimize(
            objective,
            x0=np.zeros(len(subset)),
            method="L-BFGS-B",
            bounds=[_LOG_GAMMA_BOUNDS] * len(subset),
            callback=callback,
            options={"ftol": self.tol, "maxiter": self.max_iter},
        )
        if res.status == 1:  # iteration limit
            err = NumericalError(
                f"mixed-model fit did not converge in {self.max_iter} iterations"
            )
            err.trace = tuple(trace)
            raise err
        return _profile(stats, expand(res.x)), tuple(trace), int(res.nit)

    def _finalize(self, stats, best: dict) -> None:
        self.coef_ = best["beta"]
        self.sigma2_ = best["sigma2"]
        self.loglik_ = best["loglik"]
        self.gammas_ = best["gammas"]
        self.varcomps_ = {}
        self.intercepts_ = {}
        pos = 0
        for f, name in enumerate(stats.names):
            if f in best["active"]:
                size = stats.sizes[f]
                values = best["blup"][pos:pos + size]
                pos += size
                self.intercepts_[name] = dict(
                    zip(stats.levels[f].tolist(), values.tolist())
                )
            else:
                self.intercepts_[name] = {}
            self.varcomps_[name] = float(self.gammas_[f] * self.sigma2_)
        idx = best["idx"]
        if len(idx):
            g = np.concatenate(
                [np.full(stats.sizes[f], self.gammas_[f]) for f in best["active"]]
            )
            M = stats.cuu[np.ix_(idx, idx)] + np.diag(1.0 / g)
            cho = scipy.linalg.cho_factor(M)
            xvx = stats.xtx - stats.cux[idx].T @ scipy.linalg.cho_solve(cho, stats.cux[idx])
        else:
            xvx = stats.xtx
        self.se_ = np.sqrt(np.maximum(np.diag(np.linalg.inv(xvx)) * self.sigma2_, 0.0))

    def marginal_loglik(self, gammas) -> float:
        """Profiled marginal log-likelihood at fixed variance ratios."""
        return _profile(self._stats, np.asarray(gammas, dtype=float))["loglik"]

    def predict(self, X, groups: dict | None = None) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        mean = X @ self.coef_
        if groups:
            for name, labels in groups.items():
                table = self.intercepts_.get(name, {})
                mean = mean + np.array([table.get(lv, 0.0) for lv in np.asarray(labels)])
        return mean

    def loglik(self, X, y, groups: dict | None = None) -> np.ndarray:
        """Per-sample Gaussian log density; unseen groups fall back to the
        marginal prediction (zero intercept, variance inflated by that
        factor's component)."""
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        mean = X @ self.coef_
        var = np.full(len(y), self.sigma2_)
        if groups:
            for name, labels in groups.items():
                table = self.intercepts_.get(name, {})
                vc = self.varcomps_.get(name, 0.0)
                labels = np.asarray(labels)
                mean = mean + np.array([table.get(lv, 0.0) for lv in labels])
                seen = np.array([lv in table for lv in labels], dtype=bool)
                var = var + np.where(seen, 0.0, vc)
        return _gaussian_loglik(y - mean, var)


def _subsets(F: int) -> list:
    out: list[tuple] = []
    for size in range(F + 1):
        out.extend(itertools.combinations(range(F), size))
    return out


def fit_mixed(design: DesignMatrix) -> FitResult:
    """Fit the crossed-intercepts model on a design's group factors."""
    if not design.groups:
        raise ConfigError("mixed model needs at least one grouping factor")
    model = MixedEffectsRegressor().fit(design.X, design.y, design.groups)
    return FitResult(
        kind="mixed",
        columns=design.columns,
        coef=model.coef_,
        se=model.se_,
        sigma2=model.sigma2_,
        loglik=model.loglik_,
        varcomps=model.varcomps_,
        intercepts=model.intercepts_,
        dropped_factors=model.dropped_factors_,
        converged=model.converged_,
        n_iter=model.n_iter_,
        loglik_trace=model.loglik_trace_,
    )


def heldout_loglik(fit: FitResult, heldout: DesignMatrix) -> np.ndarray:
    """Per-sample held-out Gaussian log-likelihood under a stored fit.

    Mixed fits add the predicted intercept of groups seen in training;
    rows from unseen groups take a zero intercept and that factor's
    variance component on top of the residual variance.
    """
    if heldout.columns != fit.columns:
        raise ContractError(
            f"held-out columns {heldout.columns} do not match fit {fit.columns}"
        )
    mean = heldout.X @ fit.coef
    var = np.full(heldout.n, fit.sigma2)
    if fit.kind == "mixed":
        for name, table in fit.intercepts.items():
            labels = heldout.groups.get(name)
            if labels is None:
                raise ContractError(f"held-out design lacks grouping factor {name!r}")
            labels = np.asarray(labels)
            mean = mean + np.array([table.get(lv, 0.0) for lv in labels])
            seen = np.array([lv in table for lv in labels], dtype=bool)
            var = var + np.where(seen, 0.0, fit.varcomps.get(name, 0.0))
    return _gaussian_loglik(heldout.y - mean, var)

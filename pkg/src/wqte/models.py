"""Nuisance models: propensity score, double-sampling and observance probabilities.

All three are logistic regressions fitted by maximum likelihood (Newton/IRLS
with step-halving).  The double-sampling probability can alternatively be the
saturated model over discrete strata, which reduces to per-stratum sampled
fractions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import expit

from .core import Dataset
from .errors import (
    NothingToFitError,
    PositivityError,
    SeparationError,
    SingularDesignError,
)

SCORE_TOL = 1e-8
MAX_ITER = 100
MAX_HALVINGS = 30
SEPARATION_CAP = 30.0
CLIP = 1e-6

PROPENSITY = "propensity"
DOUBLE_SAMPLING = "double-sampling"
OBSERVANCE = "observance"


def clip_probability(p):
    return np.clip(p, CLIP, 1.0 - CLIP)


def _loglik(eta, labels, weights):
    return float(np.sum(weights * (labels * eta - np.logaddexp(0.0, eta))))


@dataclass(frozen=True)
class LogisticDesign:
    """Which inputs enter a logistic model: intercept, optionally ``z``, covariates.

    ``covariates=None`` means every covariate column.
    """

    include_z: bool = False
    covariates: Optional[tuple] = None

    def matrix(self, d: Dataset) -> np.ndarray:
        cols = [np.ones(d.n)]
        if self.include_z:
            cols.append(d.z.astype(float))
        idx = range(d.p) if self.covariates is None else self.covariates
        cols.extend(d.x[:, j] for j in idx)
        return np.column_stack(cols)

    def names(self, d: Dataset) -> list:
        names = ["(intercept)"]
        if self.include_z:
            names.append("z")
        idx = range(d.p) if self.covariates is None else self.covariates
        names.extend(d.column_names[j] for j in idx)
        return names

    def describe(self) -> dict:
        return {
            "include_z": self.include_z,
            "covariates": "all" if self.covariates is None else list(self.covariates),
        }


@dataclass(frozen=True, eq=False)
class LogisticModel:
    """A fitted (or user-supplied) logistic model ``expit(features @ coefficients)``.

    ``estimated`` is False for models whose coefficients are treated as known
    truths; such models contribute no nuisance-estimation term to the
    asymptotic variance and are not refitted by the bootstrap.
    """

    coefficients: np.ndarray
    design: Optional[LogisticDesign] = None
    converged: bool = True
    iterations: int = 0
    loglik: float = float("nan")
    estimated: bool = True
    target: str = ""
    column_names: tuple = ()

    @classmethod
    def known(cls, coefficients, design: LogisticDesign, target: str = PROPENSITY) -> "LogisticModel":
        return cls(np.asarray(coefficients, dtype=float), design, estimated=False, target=target)

    def linear_predictor(self, features) -> np.ndarray:
        return np.asarray(features, dtype=float) @ self.coefficients

    def predict_features(self, features) -> np.ndarray:
        return expit(self.linear_predictor(features))

    def predict_raw(self, d: Dataset) -> np.ndarray:
        """Fitted probabilities before clipping (used by diagnostics)."""
        return self.predict_features(self.design.matrix(d))

    def predict(self, d: Dataset) -> np.ndarray:
        return clip_probability(self.predict_raw(d))

    def score_features(self, d: Dataset) -> np.ndarray:
        """Matrix ``X`` with ``d prob / d coefficients = prob (1 - prob) X``."""
        return self.design.matrix(d)


@dataclass(frozen=True, eq=False)
class KnownModel:
    """Probabilities given by an arbitrary known function of the dataset."""

    function: Callable[[Dataset], np.ndarray]
    target: str = PROPENSITY
    name: str = "known"
    estimated: bool = field(default=False, init=False)

    def predict_raw(self, d: Dataset) -> np.ndarray:
        return np.asarray(self.function(d), dtype=float)

    def predict(self, d: Dataset) -> np.ndarray:
        return clip_probability(self.predict_raw(d))


def _check_design(features, labels, weights):
    features = np.asarray(features, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if features.ndim != 2 or features.shape[0] != labels.shape[0]:
        raise ValueError("features must be an (n, k) matrix matching labels")
    if weights is None:
        weights = np.ones(labels.shape[0])
    weights = np.asarray(weights, dtype=float)
    return features, labels, weights


def fit_logistic(
    features,
    labels,
    score_tol: float = SCORE_TOL,
    max_iter: int = MAX_ITER,
    weights=None,
    column_names: Optional[Sequence[str]] = None,
) -> LogisticModel:
    """Maximum-likelihood logistic regression by Newton-Raphson (IRLS).

    Parameters
    ----------
    features : ndarray, shape (n, k)
        Design matrix, intercept column included by the caller.
    labels : ndarray, shape (n,)
        Binary responses.
    score_tol : float
        Convergence is declared when ``max |sum_i w_i (y_i - p_i) x_i|``
        drops to ``score_tol``.
    max_iter : int
        Newton iterations allowed.
    weights : ndarray, optional
        Nonnegative frequency weights.
    column_names : sequence of str, optional
        Used to name the offending column in separation errors.

    Returns
    -------
    LogisticModel
        With ``design=None``; callers that fit from a dataset attach one.

    Raises
    ------
    SingularDesignError
        If the design is rank deficient on the rows with positive weight.
    SeparationError
        If the labels are one-class, or coefficients diverge past the
        separation cap while the score is still above tolerance.
    """
    X, y, w = _check_design(features, labels, weights)
    k = X.shape[1]
    names = list(column_names) if column_names is not None else [f"column {j}" for j in range(k)]
    use = w > 0
    if not np.any(use):
        raise NothingToFitError("no rows with positive weight")
    pos = float(np.sum(w[use] * y[use]))
    if pos <= 0.0 or pos >= float(np.sum(w[use])):
        raise SeparationError("labels contain a single class; the likelihood has no maximum", column="(labels)")
    if np.linalg.matrix_rank(X[use]) < k:
        raise SingularDesignError(f"design matrix is rank deficient ({k} columns)")

    beta = np.zeros(k)
    eta = X @ beta
    ll = _loglik(eta, y, w)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        p = expit(eta)
        score = X.T @ (w * (y - p))
        if np.max(np.abs(score)) <= score_tol:
            converged = True
            it -= 1
            break
        info = (X * (w * p * (1.0 - p))[:, None]).T @ X
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(info, score, rcond=None)[0]
        t = 1.0
        for _ in range(MAX_HALVINGS + 1):
            cand = beta + t * step
            eta_c = X @ cand
            ll_c = _loglik(eta_c, y, w)
            if ll_c >= ll - 1e-12 * max(1.0, abs(ll)):
                break
            t *= 0.5
        else:
            # no ascent direction left; the score check below decides convergence
            cand, eta_c, ll_c = beta, eta, ll
        beta, eta, ll = cand, eta_c, ll_c
        if np.max(np.abs(beta)) > SEPARATION_CAP:
            p = expit(eta)
            score = X.T @ (w * (y - p))
            if np.max(np.abs(score)) > score_tol:
                j = int(np.argmax(np.abs(beta)))
                raise SeparationError(
                    f"coefficients diverge (|{names[j]}| > {SEPARATION_CAP:g}); "
                    f"column {names[j]!r} separates the labels",
                    column=names[j],
                )
    else:
        p = expit(eta)
        converged = bool(np.max(np.abs(X.T @ (w * (y - p)))) <= score_tol)
    return LogisticModel(
        coefficients=beta,
        converged=converged,
        iterations=it,
        loglik=ll,
        column_names=tuple(names),
    )


def fit_logistic_batch(features, labels, weights, start=None, score_tol=SCORE_TOL, max_iter=MAX_ITER):
    """Fit one logistic regression per row of ``weights`` simultaneously.

    Used by the bootstrap, where each replicate is the same design under
    different frequency weights.  Returns ``(coefficients, ok)`` with shapes
    ``(B, k)`` and ``(B,)``; ``ok`` is False for replicates that are one-class,
    singular, separated or not converged.
    """
    X = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=float)
    W = np.atleast_2d(np.asarray(weights, dtype=float))
    B, k = W.shape[0], X.shape[1]
    beta = np.zeros((B, k)) if start is None else np.tile(np.asarray(start, dtype=float), (B, 1))
    tot = W.sum(axis=1)
    pos = W @ y
    ok = (pos > 0) & (pos < tot)
    done = ~ok
    converged = np.zeros(B, dtype=bool)

    def loglik(b, rows):
        eta = b @ X.T
        return np.sum(W[rows] * (y * eta - np.logaddexp(0.0, eta)), axis=1)

    rows = np.flatnonzero(~done)
    ll = np.full(B, -np.inf)
    if rows.size:
        ll[rows] = loglik(beta[rows], rows)
    for _ in range(max_iter + 1):
        rows = np.flatnonzero(~done)
        if rows.size == 0:
            break
        b = beta[rows]
        p = expit(b @ X.T)
        Wr = W[rows]
        score = (Wr * (y - p)) @ X
        small = np.max(np.abs(score), axis=1) <= score_tol
        converged[rows[small]] = True
        done[rows[small]] = True
        keep = ~small
        rows, b, p, Wr, score = rows[keep], b[keep], p[keep], Wr[keep], score[keep]
        if rows.size == 0:
            break
        info = np.einsum("bn,nk,nl->bkl", Wr * p * (1.0 - p), X, X)
        step = np.empty_like(b)
        try:
            step[:] = np.linalg.solve(info, score[..., None])[..., 0]
        except np.linalg.LinAlgError:
            for m in range(rows.size):
                try:
                    step[m] = np.linalg.solve(info[m], score[m])
                except np.linalg.LinAlgError:
                    step[m] = np.nan
        bad = ~np.all(np.isfinite(step), axis=1)
        ok[rows[bad]] = False
        done[rows[bad]] = True
        rows, b, step = rows[~bad], b[~bad], step[~bad]
        if rows.size == 0:
            break
        t = np.ones(rows.size)
        new = b + step
        ll_new = loglik(new, rows)
        for _ in range(MAX_HALVINGS):
            worse = ll_new < ll[rows] - 1e-12 * np.maximum(1.0, np.abs(ll[rows]))
            if not np.any(worse):
                break
            t[worse] *= 0.5
            new[worse] = b[worse] + t[worse, None] * step[worse]
            ll_new[worse] = loglik(new[worse], rows[worse])
        beta[rows] = new
        ll[rows] = ll_new
        sep = np.max(np.abs(new), axis=1) > SEPARATION_CAP
        ok[rows[sep]] = False
        done[rows[sep]] = True
    ok &= converged
    return beta, ok


def fit_propensity(d: Dataset, score_tol=SCORE_TOL, max_iter=MAX_ITER, design: Optional[LogisticDesign] = None):
    """Propensity score ``e(x) = pr(Z=1 | X=x)``: logistic fit of z on (1, x) over every record."""
    design = design or LogisticDesign(include_z=False)
    if design.include_z:
        raise ValueError("the propensity model cannot include z")
    X = design.matrix(d)
    m = fit_logistic(X, d.z, score_tol, max_iter, column_names=design.names(d))
    return _attach(m, design, PROPENSITY)


def fit_mar_observance(d: Dataset, score_tol=SCORE_TOL, max_iter=MAX_ITER, design: Optional[LogisticDesign] = None):
    """MAR observance probability ``pr(R=1 | Z, X)``: logistic fit of r on (1, z, x)."""
    design = design or LogisticDesign(include_z=True)
    X = design.matrix(d)
    m = fit_logistic(X, d.r, score_tol, max_iter, column_names=design.names(d))
    return _attach(m, design, OBSERVANCE)


def _attach(m: LogisticModel, design: LogisticDesign, target: str) -> LogisticModel:
    return LogisticModel(
        coefficients=m.coefficients,
        design=design,
        converged=m.converged,
        iterations=m.iterations,
        loglik=m.loglik,
        estimated=True,
        target=target,
        column_names=m.column_names,
    )


@dataclass(frozen=True)
class Stratifier:
    """Discrete strata from ``z`` and dichotomized covariates.

    Each ``(covariate index, threshold)`` pair contributes the bit
    ``x_j >= threshold``.  The stratum key of a record is ``(z, bit, bit, ...)``.
    """

    cutpoints: tuple = ()

    def codes(self, d: Dataset) -> np.ndarray:
        code = d.z.astype(np.int64)
        for j, c in self.cutpoints:
            code = code * 2 + (d.x[:, j] >= c).astype(np.int64)
        return code

    @property
    def size(self) -> int:
        return 2 ** (len(self.cutpoints) + 1)

    def key(self, code: int) -> tuple:
        bits = []
        for _ in self.cutpoints:
            bits.append(int(code & 1))
            code >>= 1
        return (int(code),) + tuple(reversed(bits))


@dataclass(frozen=True, eq=False)
class StratumModel:
    """Saturated model for ``eta(z, x) = pr(S=1 | Z=z, X=x, R=0)`` over strata.

    ``proportions[k] = selected[k] / eligible[k]`` for every stratum code.
    Strata with no eligible record carry NaN.  With ``allow_census`` a stratum
    that was sampled completely (proportion 1) is accepted; such strata carry no
    estimation uncertainty.
    """

    stratifier: Stratifier
    selected: np.ndarray
    eligible: np.ndarray
    allow_census: bool = False
    estimated: bool = True
    target: str = DOUBLE_SAMPLING

    @property
    def proportions(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.eligible > 0, self.selected / np.maximum(self.eligible, 1e-300), np.nan)

    @property
    def strata(self) -> list:
        return [self.stratifier.key(c) for c in range(self.stratifier.size)]

    @property
    def counts(self) -> dict:
        return {
            self.stratifier.key(c): (float(self.selected[c]), float(self.eligible[c]))
            for c in range(self.stratifier.size)
            if self.eligible[c] > 0
        }

    def predict_raw(self, d: Dataset) -> np.ndarray:
        return self.proportions[self.stratifier.codes(d)]

    def predict(self, d: Dataset) -> np.ndarray:
        return clip_probability(self.predict_raw(d))

    def informative(self) -> np.ndarray:
        prop = self.proportions
        return np.flatnonzero((self.eligible > 0) & (prop > 0) & (prop < 1))

    def score_features(self, d: Dataset) -> np.ndarray:
        """Stratum indicators for the strata with proportion strictly in (0, 1)."""
        codes = self.stratifier.codes(d)
        return (codes[:, None] == self.informative()[None, :]).astype(float)


def stratum_counts(stratifier: Stratifier, d: Dataset, weights=None):
    """Weighted (selected, eligible) totals per stratum code among ``r == 0`` records."""
    codes = stratifier.codes(d)
    elig = (d.r == 0).astype(float)
    w = np.ones(d.n) if weights is None else np.asarray(weights, dtype=float)
    W = np.atleast_2d(w) * elig
    onehot = codes[:, None] == np.arange(stratifier.size)[None, :]
    eligible = W @ onehot
    selected = (W * d.s) @ onehot
    if np.ndim(weights) <= 1:
        return selected[0], eligible[0]
    return selected, eligible


def _check_stratum_positivity(selected, eligible, allow_census, stratifier):
    for c in range(stratifier.size):
        if eligible[c] <= 0:
            continue
        prop = selected[c] / eligible[c]
        if prop <= 0.0 or (prop >= 1.0 and not allow_census):
            raise PositivityError(
                f"stratum {stratifier.key(c)}: {selected[c]:g} of {eligible[c]:g} eligible records "
                f"double-sampled; positivity of the double-sampling probability requires a "
                f"proportion strictly between 0 and 1"
            )


def fit_double_sampling(
    d: Dataset,
    design="logistic",
    score_tol=SCORE_TOL,
    max_iter=MAX_ITER,
    logistic_design: Optional[LogisticDesign] = None,
    stratifier: Optional[Stratifier] = None,
    allow_census: bool = False,
):
    """Double-sampling probability among records whose outcome was initially missing.

    Parameters
    ----------
    design : {"logistic", "saturated"}
        ``logistic`` regresses s on ``logistic_design`` (default 1, z, all
        covariates) over ``r == 0`` records.  ``saturated`` returns per-stratum
        sampled fractions for the strata defined by ``stratifier``.
    allow_census : bool
        Saturated design only: accept strata that were sampled completely.

    Raises
    ------
    NothingToFitError
        If no record has ``r == 0``.
    PositivityError
        If a stratum with eligible records has a sampled fraction of 0 (or 1,
        unless ``allow_census``), or the logistic fit sees only one class.
    """
    sub = d.r == 0
    if not np.any(sub):
        raise NothingToFitError("no records with r=0; the double-sampling model has nothing to fit")
    if design == "saturated":
        stratifier = stratifier or Stratifier()
        selected, eligible = stratum_counts(stratifier, d)
        _check_stratum_positivity(selected, eligible, allow_census, stratifier)
        return StratumModel(stratifier, selected, eligible, allow_census=allow_census)
    if design != "logistic":
        raise ValueError(f"unknown double-sampling design {design!r}")
    logistic_design = logistic_design or LogisticDesign(include_z=True)
    X = logistic_design.matrix(d)
    try:
        m = fit_logistic(X, d.s, score_tol, max_iter, weights=sub.astype(float), column_names=logistic_design.names(d))
    except SeparationError as exc:
        if exc.column == "(labels)":
            raise PositivityError(
                "among r=0 records the double-sampling indicator is constant; "
                "positivity of the double-sampling probability fails"
            ) from exc
        raise
    return _attach(m, logistic_design, DOUBLE_SAMPLING)


@dataclass(frozen=True)
class PositivityReport:
    target: str
    c: float
    checked: int
    flagged: tuple
    below: int
    above: int
    minimum: float
    maximum: float

    @property
    def ok(self) -> bool:
        return not self.flagged

    def as_dict(self) -> dict:
        return {
            "target": self.target,
            "c": self.c,
            "checked": self.checked,
            "flagged": list(self.flagged),
            "below": self.below,
            "above": self.above,
            "min": self.minimum,
            "max": self.maximum,
        }


def positivity_diagnostics(model, d: Dataset, c: float = 0.01, mask=None) -> PositivityReport:
    """Flag records whose unclipped fitted probability lies outside ``[c, 1 - c]``.

    By default a double-sampling model is checked on the ``r == 0`` records
    it applies to, any other model on every record.
    """
    if not 0.0 < c < 0.5:
        raise ValueError("c must lie in (0, 0.5)")
    if mask is None:
        mask = (d.r == 0) if getattr(model, "target", "") == DOUBLE_SAMPLING else np.ones(d.n, dtype=bool)
    idx = np.flatnonzero(mask)
    p = model.predict_raw(d)[idx]
    known = np.isfinite(p)
    below = known & (p < c)
    above = known & (p > 1.0 - c)
    flagged = tuple(int(i) for i in idx[below | above])
    return PositivityReport(
        target=getattr(model, "target", ""),
        c=float(c),
        checked=int(idx.size),
        flagged=flagged,
        below=int(below.sum()),
        above=int(above.sum()),
        minimum=float(np.min(p[known])) if known.any() else float("nan"),
        maximum=float(np.max(p[known])) if known.any() else float("nan"),
    )
